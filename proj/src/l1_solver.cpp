#include "sparselvm/l1_solver.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sparselvm/random.hpp"

namespace sparselvm {

namespace {

constexpr double kMinStep = 1e-20;
constexpr double kMaxStep = 1e6;

ConjugateHyper resolve_conj(const ObservationMatrix& data, const L1Config& cfg) {
  if (cfg.conj) {
    cfg.conj->validate(data.cols());
    return *cfg.conj;
  }
  return default_conjugate(data.family(), data.cols());
}

double l1_norm(const Matrix& m) { return m.cwiseAbs().sum(); }

class Solver {
 public:
  Solver(const ObservationMatrix& data, const L1Config& cfg)
      : data_(data), cfg_(cfg), conj_(resolve_conj(data, cfg)) {}

  double nll(const Matrix& psi) const { return -observed_loglik(data_, psi); }

  // Smooth part of beta * R(Theta).
  double theta_smooth(const Matrix& theta) const {
    switch (cfg_.regulariser) {
      case Regulariser::L2:
        return 0.5 * cfg_.beta * theta.squaredNorm();
      case Regulariser::L1:
        return 0.0;
      case Regulariser::NegConjugateLogPrior: {
        double r = 0.0;
        for (Index k = 0; k < theta.rows(); ++k) {
          r -= conjugate_log_prior(data_.family(), theta.row(k).transpose(), conj_);
        }
        return cfg_.beta * r;
      }
    }
    return 0.0;
  }

  Matrix theta_smooth_grad(const Matrix& theta) const {
    switch (cfg_.regulariser) {
      case Regulariser::L2:
        return cfg_.beta * theta;
      case Regulariser::L1:
        return Matrix::Zero(theta.rows(), theta.cols());
      case Regulariser::NegConjugateLogPrior: {
        Matrix g(theta.rows(), theta.cols());
        for (Index k = 0; k < theta.rows(); ++k) {
          for (Index d = 0; d < theta.cols(); ++d) {
            g(k, d) = cfg_.beta * (conj_.nu * log_partition_grad(data_.family(),
                                                                 theta(k, d)) -
                                   conj_.lambda[d]);
          }
        }
        return g;
      }
    }
    return Matrix();
  }

  double theta_nonsmooth(const Matrix& theta) const {
    return cfg_.regulariser == Regulariser::L1 ? cfg_.beta * l1_norm(theta) : 0.0;
  }

  double theta_threshold() const {
    return cfg_.regulariser == Regulariser::L1 ? cfg_.beta : 0.0;
  }

  double regulariser(const Matrix& theta) const {
    if (cfg_.beta == 0.0) return 0.0;
    return theta_smooth(theta) + theta_nonsmooth(theta);
  }

  double total(const FactorState& s) const {
    return nll(natural_params(s)) + cfg_.alpha * l1_norm(s.V) + regulariser(s.Theta);
  }

  // Proximal-gradient steps on V with Theta fixed. Returns false when no
  // step could be accepted.
  bool v_block(FactorState& s) {
    bool moved = false;
    Matrix psi = s.V * s.Theta;
    double f = nll(psi);
    double obj = f + cfg_.alpha * l1_norm(s.V);
    for (int it = 0; it < cfg_.inner_iters; ++it) {
      const Matrix grad = -(loglik_residual(data_, psi) * s.Theta.transpose());
      bool accepted = false;
      while (step_v_ > kMinStep) {
        Matrix vn = s.V - step_v_ * grad;
        const double t = step_v_ * cfg_.alpha;
        vn = vn.unaryExpr([t](double x) { return soft_threshold(x, t); });
        const Matrix diff = vn - s.V;
        const Matrix psin = vn * s.Theta;
        const double fn = nll(psin);
        const double bound = f + (grad.array() * diff.array()).sum() +
                             diff.squaredNorm() / (2.0 * step_v_);
        if (std::isfinite(fn) && fn <= bound) {
          const double objn = fn + cfg_.alpha * l1_norm(vn);
          if (objn <= obj) {
            const double change = obj - objn;
            s.V = std::move(vn);
            psi = psin;
            f = fn;
            obj = objn;
            accepted = true;
            moved = moved || change > 0.0;
            step_v_ = std::min(step_v_ / cfg_.step_shrink, kMaxStep);
            if (change <= 0.1 * cfg_.rel_tol * std::max(std::abs(obj), 1e-12)) {
              return moved;
            }
          }
          break;
        }
        step_v_ *= cfg_.step_shrink;
      }
      if (!accepted) {
        step_v_ = std::max(step_v_, kMinStep * 16);
        break;
      }
    }
    return moved;
  }

  bool theta_block(FactorState& s) {
    bool moved = false;
    Matrix psi = s.V * s.Theta;
    double f = nll(psi) + theta_smooth_b(s.Theta);
    double obj = f + theta_nonsmooth(s.Theta);
    const double thr = theta_threshold();
    for (int it = 0; it < cfg_.inner_iters; ++it) {
      Matrix grad = -(s.V.transpose() * loglik_residual(data_, psi));
      if (cfg_.beta != 0.0) grad += theta_smooth_grad(s.Theta);
      bool accepted = false;
      while (step_t_ > kMinStep) {
        Matrix tn = s.Theta - step_t_ * grad;
        if (thr > 0.0) {
          const double t = step_t_ * thr;
          tn = tn.unaryExpr([t](double x) { return soft_threshold(x, t); });
        }
        const Matrix diff = tn - s.Theta;
        const Matrix psin = s.V * tn;
        const double fn = nll(psin) + theta_smooth_b(tn);
        const double bound = f + (grad.array() * diff.array()).sum() +
                             diff.squaredNorm() / (2.0 * step_t_);
        if (std::isfinite(fn) && fn <= bound) {
          const double objn = fn + theta_nonsmooth(tn);
          if (objn <= obj) {
            const double change = obj - objn;
            s.Theta = std::move(tn);
            psi = psin;
            f = fn;
            obj = objn;
            accepted = true;
            moved = moved || change > 0.0;
            step_t_ = std::min(step_t_ / cfg_.step_shrink, kMaxStep);
            if (change <= 0.1 * cfg_.rel_tol * std::max(std::abs(obj), 1e-12)) {
              return moved;
            }
          }
          break;
        }
        step_t_ *= cfg_.step_shrink;
      }
      if (!accepted) {
        step_t_ = std::max(step_t_, kMinStep * 16);
        break;
      }
    }
    return moved;
  }

 private:
  double theta_smooth_b(const Matrix& theta) const {
    return cfg_.beta == 0.0 ? 0.0 : theta_smooth(theta);
  }

  const ObservationMatrix& data_;
  const L1Config& cfg_;
  ConjugateHyper conj_;
  double step_v_ = 1.0;
  double step_t_ = 1.0;
};

}  // namespace

Regulariser parse_regulariser(std::string_view name) {
  if (name == "l2") return Regulariser::L2;
  if (name == "l1") return Regulariser::L1;
  if (name == "conjugate" || name == "neg_conjugate_log_prior") {
    return Regulariser::NegConjugateLogPrior;
  }
  throw std::invalid_argument("unknown regulariser '" + std::string(name) + "'");
}

std::string_view regulariser_name(Regulariser r) {
  switch (r) {
    case Regulariser::L2:
      return "l2";
    case Regulariser::L1:
      return "l1";
    case Regulariser::NegConjugateLogPrior:
      return "conjugate";
  }
  return "unknown";
}

void L1Config::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw std::invalid_argument("l1: alpha and beta must be non-negative");
  }
  if (max_outer_iters < 1 || inner_iters < 1) {
    throw std::invalid_argument("l1: iteration limits must be at least 1");
  }
  if (!(rel_tol > 0.0)) throw std::invalid_argument("l1: rel_tol must be positive");
  if (!(init_scale > 0.0)) throw std::invalid_argument("l1: init_scale must be positive");
  if (!(step_shrink > 0.0 && step_shrink < 1.0)) {
    throw std::invalid_argument("l1: step_shrink must lie in (0, 1)");
  }
}

double theta_regulariser(const ObservationMatrix& data, const Matrix& theta,
                         const L1Config& config) {
  L1Config unit = config;
  unit.beta = 1.0;
  Solver s(data, unit);
  return s.regulariser(theta);
}

double objective(const ObservationMatrix& data, const FactorState& state,
                 const L1Config& config) {
  state.check_against(data);
  Solver s(data, config);
  return s.total(state);
}

L1Result fit_l1(const ObservationMatrix& data, FactorState init,
                const L1Config& config) {
  config.validate();
  init.check_against(data);
  Solver solver(data, config);
  L1Result res;
  res.state = std::move(init);
  double prev = solver.total(res.state);
  res.trace.push_back(prev);
  for (int it = 0; it < config.max_outer_iters; ++it) {
    const bool mv = solver.v_block(res.state);
    const bool mt = solver.theta_block(res.state);
    const double cur = solver.total(res.state);
    res.iterations = it + 1;
    res.trace.push_back(cur);
    const double rel = (prev - cur) / std::max(std::abs(prev), 1e-12);
    prev = cur;
    if ((!mv && !mt) || rel < config.rel_tol) {
      res.converged = true;
      break;
    }
  }
  res.objective = prev;
  return res;
}

L1Result fit_l1(const ObservationMatrix& data, Index K, const L1Config& config) {
  if (K < 1) throw std::invalid_argument("fit_l1: K must be at least 1");
  config.validate();
  Rng rng(config.seed);
  FactorState init;
  init.V = Matrix::NullaryExpr(data.rows(), K, [&] { return draw_normal(rng, 0.0, config.init_scale); });
  init.Theta =
      Matrix::NullaryExpr(K, data.cols(), [&] { return draw_normal(rng, 0.0, config.init_scale); });
  return fit_l1(data, std::move(init), config);
}

CvResult cross_validate(const ObservationMatrix& data, Index K,
                        const std::vector<double>& alpha_grid,
                        const std::vector<double>& beta_grid,
                        const L1Config& config, double validation_fraction) {
  if (alpha_grid.empty() || beta_grid.empty()) {
    throw std::invalid_argument("cross_validate: grids must be non-empty");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("cross_validate: validation fraction must lie in (0, 1)");
  }

  std::vector<std::pair<Index, Index>> observed;
  for (Index d = 0; d < data.cols(); ++d) {
    for (Index n = 0; n < data.rows(); ++n) {
      if (data.is_observed(n, d)) observed.emplace_back(n, d);
    }
  }
  const auto n_val = static_cast<std::size_t>(
      std::llround(validation_fraction * static_cast<double>(observed.size())));
  Rng rng(derive_seed(config.seed, {0x5641ULL}));
  std::shuffle(observed.begin(), observed.end(), rng);
  observed.resize(n_val);

  Mask train_mask = data.observed();
  for (auto [n, d] : observed) train_mask(n, d) = false;
  const ObservationMatrix train = data.with_mask(train_mask);
  const auto& fam = data.family();

  CvResult out{};
  double best = std::numeric_limits<double>::infinity();
  const std::uint64_t start_seed = derive_seed(config.seed, {0x494eULL});
  for (double a : alpha_grid) {
    for (double b : beta_grid) {
      L1Config c = config;
      c.alpha = a;
      c.beta = b;
      c.seed = start_seed;
      L1Result fit = fit_l1(train, K, c);
      const Matrix psi = natural_params(fit.state);
      double nats = 0.0;
      for (auto [n, d] : observed) nats -= log_prob_unchecked(fam, data.value(n, d), psi(n, d));
      const double bits = nats / std::log(2.0);
      const double score = std::isfinite(bits) ? bits : std::numeric_limits<double>::infinity();
      out.table.push_back({a, b, bits, fit.converged});
      if (score < best || out.table.size() == 1) {
        best = score;
        out.best_alpha = a;
        out.best_beta = b;
        out.best_fit = std::move(fit);
      }
    }
  }
  return out;
}

}  // namespace sparselvm
