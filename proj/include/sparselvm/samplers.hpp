#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselvm/random.hpp"

namespace sparselvm {

struct SliceConfig {
  double initial_width = 1.0;
  int max_step_out = 100;
  int max_shrink = 100;

  void validate() const {
    if (!(initial_width > 0.0) || max_step_out < 1 || max_shrink < 1) {
      throw std::invalid_argument("slice config values must be positive");
    }
  }
};

struct SliceResult {
  double x;
  double log_target;
  double log_level;
  bool stalled = false;
  int evaluations = 0;
};

/// One univariate slice-sampling update (stepping out + shrinkage, Neal 2003).
/// The returned point satisfies log_target(x) >= log_level, where
/// log_level = log_target(x0) - Exponential(1). When the shrink budget is
/// exhausted the chain stays at x0 and `stalled` is set.
template <class LogTarget>
SliceResult slice_step(LogTarget&& log_target, double x0, double log_target_x0,
                       const SliceConfig& cfg, Rng& rng) {
  if (!std::isfinite(log_target_x0)) {
    throw std::invalid_argument("slice_step: log target is not finite at x0");
  }
  SliceResult out{x0, log_target_x0, log_target_x0 - draw_exponential(rng)};
  auto f = [&](double x) {
    ++out.evaluations;
    const double v = log_target(x);
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  };

  const double w = cfg.initial_width;
  double left = x0 - w * draw_uniform(rng);
  double right = left + w;
  int j = static_cast<int>(std::floor(cfg.max_step_out * draw_uniform(rng)));
  int k = cfg.max_step_out - 1 - j;
  while (j-- > 0 && f(left) > out.log_level) left -= w;
  while (k-- > 0 && f(right) > out.log_level) right += w;

  for (int i = 0; i < cfg.max_shrink; ++i) {
    const double x1 = left + draw_uniform(rng) * (right - left);
    const double fx1 = f(x1);
    if (fx1 >= out.log_level) {
      out.x = x1;
      out.log_target = fx1;
      return out;
    }
    if (x1 < x0) {
      left = x1;
    } else {
      right = x1;
    }
  }
  out.stalled = true;
  return out;
}

template <class LogTarget>
SliceResult slice_step(LogTarget&& log_target, double x0, const SliceConfig& cfg,
                       Rng& rng) {
  const double f0 = log_target(x0);
  return slice_step(std::forward<LogTarget>(log_target), x0, f0, cfg, rng);
}

struct HmcConfig {
  int leapfrog_steps = 20;
  double step_size = 0.05;
  double adapt_target = 0.8;
  int burn_in = 1000;
  int keep = 2000;
  int thin = 5;
  std::uint64_t seed = 0;
  std::optional<double> time_budget_seconds;

  void validate() const;
};

/// Log density evaluated together with its gradient (written to `grad`).
using LogDensity =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct HmcPoint {
  Eigen::VectorXd x;
  double log_density = 0.0;
  Eigen::VectorXd grad;
};

HmcPoint evaluate_point(const LogDensity& target, Eigen::VectorXd x);

struct LeapfrogResult {
  HmcPoint end;
  Eigen::VectorXd momentum;
  bool finite = true;
};

/// Integrates Hamiltonian dynamics with unit mass. Stops early and reports
/// finite = false if the density or gradient becomes non-finite.
LeapfrogResult leapfrog(const LogDensity& target, const HmcPoint& start,
                        Eigen::VectorXd momentum, int steps, double step_size);

struct HmcStepResult {
  HmcPoint point;
  bool accepted = false;
  bool divergent = false;
  double accept_prob = 0.0;
  double energy_error = 0.0;
};

HmcStepResult hmc_step(const LogDensity& target, const HmcPoint& current,
                       int leapfrog_steps, double step_size, Rng& rng);

/// Single transition at cfg.step_size, without adaptation.
HmcStepResult hmc_step(const LogDensity& target, const Eigen::VectorXd& x0,
                       const HmcConfig& cfg, Rng& rng);

/// Step-size adaptation by dual averaging (Hoffman & Gelman 2014).
class DualAveraging {
 public:
  DualAveraging(double initial_step, double target_accept);

  void update(double accept_prob);
  double step_size() const { return std::exp(log_step_); }
  double final_step_size() const { return std::exp(log_step_bar_); }

 private:
  double mu_;
  double target_;
  double h_bar_ = 0.0;
  double log_step_;
  double log_step_bar_ = 0.0;
  int t_ = 0;
};

/// HMC transition kernel that adapts its step size while `adapting` is set
/// and freezes it at the averaged value afterwards.
class HmcKernel {
 public:
  explicit HmcKernel(const HmcConfig& cfg);

  HmcStepResult step(const LogDensity& target, const HmcPoint& current,
                     Rng& rng, bool adapting);

  double step_size() const { return step_size_; }
  long proposals() const { return proposals_; }
  long accepted() const { return accepted_; }
  long divergences() const { return divergences_; }
  /// Acceptance rate over transitions made after adaptation was frozen.
  double post_adapt_accept_rate() const;

 private:
  HmcConfig cfg_;
  DualAveraging adapt_;
  double step_size_;
  bool frozen_ = false;
  long proposals_ = 0;
  long accepted_ = 0;
  long divergences_ = 0;
  long post_proposals_ = 0;
  long post_accepted_ = 0;
};

/// Burn-in, retention and budget settings shared by the Gibbs-style chains.
struct ChainConfig {
  int burn_in = 1000;
  int keep = 2000;
  int thin = 5;
  std::uint64_t seed = 0;
  /// Wall-clock budget for the whole run; the chain stops before starting a
  /// sweep that is predicted to overrun it.
  std::optional<double> time_budget_seconds;

  void validate() const {
    if (burn_in < 0 || keep < 1 || thin < 1) {
      throw std::invalid_argument("chain: burn_in >= 0, keep >= 1 and thin >= 1 required");
    }
    if (time_budget_seconds && !(*time_budget_seconds > 0.0)) {
      throw std::invalid_argument("chain: time budget must be positive");
    }
  }
  long total_iterations() const {
    return static_cast<long>(burn_in) + static_cast<long>(keep) * thin;
  }
  bool is_kept(long iteration) const {
    return iteration >= burn_in && (iteration - burn_in + 1) % thin == 0;
  }
};

struct ChainDiagnostics {
  long iterations = 0;
  double accept_rate = 0.0;
  long divergences = 0;
  double final_step_size = 0.0;
  long slab_fallbacks = 0;
  long slice_stalls = 0;
  bool budget_exhausted = false;
  double wall_seconds = 0.0;
  /// Log-joint at every iteration.
  std::vector<double> log_joint;
  std::vector<std::string> warnings;
};

}  // namespace sparselvm
