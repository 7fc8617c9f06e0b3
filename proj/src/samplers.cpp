#include "sparselvm/samplers.hpp"

#include <algorithm>

namespace sparselvm {

void HmcConfig::validate() const {
  if (leapfrog_steps < 1) {
    throw std::invalid_argument("hmc: leapfrog_steps must be at least 1");
  }
  if (!(step_size > 0.0)) throw std::invalid_argument("hmc: step_size must be positive");
  if (!(adapt_target > 0.0 && adapt_target < 1.0)) {
    throw std::invalid_argument("hmc: adapt_target must lie in (0, 1)");
  }
  if (burn_in < 0 || keep < 1 || thin < 1) {
    throw std::invalid_argument("hmc: burn_in >= 0, keep >= 1 and thin >= 1 required");
  }
}

HmcPoint evaluate_point(const LogDensity& target, Eigen::VectorXd x) {
  HmcPoint p;
  p.grad.resize(x.size());
  p.log_density = target(x, p.grad);
  p.x = std::move(x);
  return p;
}

LeapfrogResult leapfrog(const LogDensity& target, const HmcPoint& start,
                        Eigen::VectorXd momentum, int steps, double step_size) {
  LeapfrogResult out;
  out.end = start;
  auto& pt = out.end;
  momentum += 0.5 * step_size * pt.grad;
  for (int i = 0; i < steps; ++i) {
    pt.x += step_size * momentum;
    pt.log_density = target(pt.x, pt.grad);
    if (!std::isfinite(pt.log_density) || !pt.grad.allFinite()) {
      out.finite = false;
      break;
    }
    const double scale = (i + 1 == steps) ? 0.5 : 1.0;
    momentum += scale * step_size * pt.grad;
  }
  out.momentum = std::move(momentum);
  return out;
}

HmcStepResult hmc_step(const LogDensity& target, const HmcPoint& current,
                       int leapfrog_steps, double step_size, Rng& rng) {
  if (!current.grad.allFinite()) {
    throw std::invalid_argument("hmc_step: gradient is not finite at x0");
  }
  const Eigen::Index dim = current.x.size();
  Eigen::VectorXd p0(dim);
  for (Eigen::Index i = 0; i < dim; ++i) p0[i] = draw_normal(rng);
  const double h0 = -current.log_density + 0.5 * p0.squaredNorm();

  auto traj = leapfrog(target, current, p0, leapfrog_steps, step_size);
  HmcStepResult res;
  if (!traj.finite) {
    res.point = current;
    res.divergent = true;
    res.energy_error = std::numeric_limits<double>::infinity();
    return res;
  }
  const double h1 = -traj.end.log_density + 0.5 * traj.momentum.squaredNorm();
  res.energy_error = h1 - h0;
  if (!std::isfinite(res.energy_error)) {
    res.point = current;
    res.divergent = true;
    return res;
  }
  res.accept_prob = std::min(1.0, std::exp(-res.energy_error));
  if (draw_uniform(rng) < res.accept_prob) {
    res.point = std::move(traj.end);
    res.accepted = true;
  } else {
    res.point = current;
  }
  return res;
}

HmcStepResult hmc_step(const LogDensity& target, const Eigen::VectorXd& x0,
                       const HmcConfig& cfg, Rng& rng) {
  cfg.validate();
  return hmc_step(target, evaluate_point(target, x0), cfg.leapfrog_steps,
                  cfg.step_size, rng);
}

DualAveraging::DualAveraging(double initial_step, double target_accept)
    : mu_(std::log(10.0 * initial_step)),
      target_(target_accept),
      log_step_(std::log(initial_step)) {}

void DualAveraging::update(double accept_prob) {
  constexpr double kGamma = 0.05;
  constexpr double kT0 = 10.0;
  constexpr double kKappa = 0.75;
  ++t_;
  const double t = static_cast<double>(t_);
  const double eta = 1.0 / (t + kT0);
  h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept_prob);
  log_step_ = mu_ - std::sqrt(t) / kGamma * h_bar_;
  const double w = std::pow(t, -kKappa);
  log_step_bar_ = w * log_step_ + (1.0 - w) * log_step_bar_;
}

HmcKernel::HmcKernel(const HmcConfig& cfg)
    : cfg_(cfg), adapt_(cfg.step_size, cfg.adapt_target), step_size_(cfg.step_size) {
  cfg_.validate();
}

HmcStepResult HmcKernel::step(const LogDensity& target, const HmcPoint& current,
                              Rng& rng, bool adapting) {
  if (!adapting && !frozen_) {
    frozen_ = true;
    if (proposals_ > 0) step_size_ = adapt_.final_step_size();
  }
  auto res = hmc_step(target, current, cfg_.leapfrog_steps, step_size_, rng);
  ++proposals_;
  if (res.accepted) ++accepted_;
  if (res.divergent) ++divergences_;
  if (adapting) {
    adapt_.update(res.divergent ? 0.0 : res.accept_prob);
    step_size_ = adapt_.step_size();
  } else {
    ++post_proposals_;
    if (res.accepted) ++post_accepted_;
  }
  return res;
}

double HmcKernel::post_adapt_accept_rate() const {
  if (post_proposals_ == 0) return 0.0;
  return static_cast<double>(post_accepted_) / static_cast<double>(post_proposals_);
}

}  // namespace sparselvm
