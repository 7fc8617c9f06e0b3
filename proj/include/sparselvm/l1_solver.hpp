#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sparselvm/model_core.hpp"

namespace sparselvm {

enum class Regulariser { L2, L1, NegConjugateLogPrior };

Regulariser parse_regulariser(std::string_view name);
std::string_view regulariser_name(Regulariser r);

struct L1Config {
  double alpha = 0.1;
  double beta = 1.0;
  Regulariser regulariser = Regulariser::NegConjugateLogPrior;
  int max_outer_iters = 500;
  /// Proximal-gradient steps per block within one outer iteration.
  int inner_iters = 10;
  double rel_tol = 1e-5;
  double step_shrink = 0.5;
  /// Standard deviation of the random N(0, s^2) start.
  double init_scale = 0.01;
  std::uint64_t seed = 0;
  /// Prior used by the NegConjugateLogPrior regulariser; the family default
  /// when unset.
  std::optional<ConjugateHyper> conj;

  void validate() const;
};

/// sum_n loss(x_n, v_n Theta) + alpha |V|_1 + beta R(Theta), with the loss
/// being the observed-entry negative log-likelihood in nats.
double objective(const ObservationMatrix& data, const FactorState& state,
                 const L1Config& config);

/// R(Theta) for the configured regulariser.
double theta_regulariser(const ObservationMatrix& data, const Matrix& theta,
                         const L1Config& config);

/// sign(x) * max(|x| - t, 0).
inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

struct L1Result {
  FactorState state;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  /// Objective after each accepted outer iteration, starting with the
  /// initial value.
  std::vector<double> trace;
};

/// Alternating proximal-gradient minimisation with backtracking, from a
/// random N(0, init_scale^2) start drawn with config.seed.
L1Result fit_l1(const ObservationMatrix& data, Index K, const L1Config& config);

/// Same, from a caller-provided start.
L1Result fit_l1(const ObservationMatrix& data, FactorState init,
                const L1Config& config);

struct CvCell {
  double alpha;
  double beta;
  double nlp_bits;
  bool converged;
};

struct CvResult {
  double best_alpha;
  double best_beta;
  std::vector<CvCell> table;
  /// Fit for the winning pair, trained without the validation entries.
  L1Result best_fit;
};

/// Grid search over (alpha, beta). A seeded `validation_fraction` of the
/// observed entries is masked out; every pair is fitted on the rest and
/// scored by validation NLP in bits. Every pair starts from the same seeded
/// random state. Exact ties go to the lowest grid index (alpha-major order).
CvResult cross_validate(const ObservationMatrix& data, Index K,
                        const std::vector<double>& alpha_grid,
                        const std::vector<double>& beta_grid,
                        const L1Config& config,
                        double validation_fraction = 0.05);

}  // namespace sparselvm
