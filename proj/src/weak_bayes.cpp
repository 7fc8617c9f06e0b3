#include "sparselvm/weak_bayes.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sparselvm {

namespace {

double log_gamma_density(double b, double shape, double scale) {
  return (shape - 1.0) * std::log(b) - b / scale - shape * std::log(scale) -
         std::lgamma(shape);
}

double conj_prior_sum(const FamilySpec& fam, const Matrix& theta,
                      const ConjugateHyper& conj) {
  double total = 0.0;
  for (Index k = 0; k < theta.rows(); ++k) {
    for (Index d = 0; d < theta.cols(); ++d) {
      const double t = theta(k, d);
      total += conj.lambda[d] * t - conj.nu * log_partition_unchecked(fam, t);
    }
  }
  return total;
}

}  // namespace

void WeakSparseHyper::validate(Index dim) const {
  if (!(gamma_shape > 0.0) || !(gamma_scale > 0.0)) {
    throw std::invalid_argument("weak hyper: Gamma shape and scale must be positive");
  }
  conj.validate(dim);
}

WeakSparseHyper default_weak_hyper(const FamilySpec& family, Index dim) {
  WeakSparseHyper h;
  h.conj = default_conjugate(family, dim);
  return h;
}

LogJoint log_joint(const ObservationMatrix& data, const WeakSparseState& state,
                   const WeakSparseHyper& hyper) {
  state.factor.check_against(data);
  const Matrix& V = state.factor.V;
  LogJoint out;
  double prior_v = 0.0;
  for (Index k = 0; k < V.cols(); ++k) {
    const double b = state.b[k];
    for (Index n = 0; n < V.rows(); ++n) {
      const double v = V(n, k);
      if (state.prior == WeakPrior::Laplace) {
        prior_v += std::log(0.5 * b) - b * std::abs(v);
      } else {
        if (!(v > 0.0)) {
          out.value = -std::numeric_limits<double>::infinity();
          out.domain_error = true;
          return out;
        }
        prior_v += std::log(b) - b * v;
      }
    }
  }
  double prior_b = 0.0;
  for (Index k = 0; k < state.b.size(); ++k) {
    prior_b += log_gamma_density(state.b[k], hyper.gamma_shape, hyper.gamma_scale);
  }
  out.value = observed_loglik(data, state.factor) +
              conj_prior_sum(data.family(), state.factor.Theta, hyper.conj) + prior_v +
              prior_b;
  return out;
}

Vector gibbs_b(const WeakSparseState& state, const WeakSparseHyper& hyper, Rng& rng) {
  const Matrix& V = state.factor.V;
  Vector b(V.cols());
  const double n = static_cast<double>(V.rows());
  for (Index k = 0; k < V.cols(); ++k) {
    const double s = V.col(k).cwiseAbs().sum();
    double draw = draw_gamma(rng, hyper.gamma_shape + n, 1.0 / hyper.gamma_scale + s);
    // Guard against an exact-zero draw from an extreme rate.
    b[k] = std::max(draw, std::numeric_limits<double>::min());
  }
  return b;
}

Vector pack_position(const WeakSparseState& state) {
  const Matrix& V = state.factor.V;
  const Matrix& T = state.factor.Theta;
  Vector x(V.size() + T.size());
  if (state.prior == WeakPrior::Exponential) {
    x.head(V.size()) = V.reshaped().array().log().matrix();
  } else {
    x.head(V.size()) = V.reshaped();
  }
  x.tail(T.size()) = T.reshaped();
  return x;
}

void unpack_position(const Vector& x, WeakSparseState& state) {
  Matrix& V = state.factor.V;
  Matrix& T = state.factor.Theta;
  V.reshaped() = x.head(V.size());
  if (state.prior == WeakPrior::Exponential) {
    V = V.array().exp().max(std::numeric_limits<double>::min()).matrix();
  }
  T.reshaped() = x.tail(T.size());
}

double position_log_density(const ObservationMatrix& data, const WeakSparseState& state,
                            const WeakSparseHyper& hyper, const Vector& x, Vector& grad) {
  const Index N = state.factor.V.rows();
  const Index K = state.factor.V.cols();
  const Index D = state.factor.Theta.cols();
  const bool expo = state.prior == WeakPrior::Exponential;
  const auto& fam = data.family();

  const auto raw_v = x.head(N * K).reshaped(N, K);
  Matrix V = expo ? Matrix(raw_v.array().exp().matrix()) : Matrix(raw_v);
  const Matrix T = x.tail(K * D).reshaped(K, D);

  const Matrix psi = V * T;
  double lp = observed_loglik(data, psi);
  if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
  const Matrix R = loglik_residual(data, psi);
  Matrix gV = R * T.transpose();
  Matrix gT = V.transpose() * R;

  for (Index k = 0; k < K; ++k) {
    const double b = state.b[k];
    for (Index n = 0; n < N; ++n) {
      const double v = V(n, k);
      if (expo) {
        // density in u = log v: log b - b v + u
        lp += std::log(b) - b * v + raw_v(n, k);
        gV(n, k) = gV(n, k) * v - b * v + 1.0;
      } else {
        lp += std::log(0.5 * b) - b * std::abs(v);
        const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        gV(n, k) -= b * sgn;
      }
    }
  }
  for (Index k = 0; k < K; ++k) {
    for (Index d = 0; d < D; ++d) {
      const double t = T(k, d);
      lp += hyper.conj.lambda[d] * t - hyper.conj.nu * log_partition_unchecked(fam, t);
      gT(k, d) += hyper.conj.lambda[d] -
                  hyper.conj.nu * log_partition_grad_unchecked(fam, t);
    }
  }
  grad.resize(x.size());
  grad.head(N * K) = gV.reshaped();
  grad.tail(K * D) = gT.reshaped();
  return lp;
}

WeakSparseSampler::WeakSparseSampler(WeakSparseState init, WeakSparseHyper hyper,
                                     const HmcConfig& cfg)
    : state_(std::move(init)), hyper_(std::move(hyper)), kernel_(cfg) {}

void WeakSparseSampler::step(const ObservationMatrix& data, Rng& rng, bool adapting) {
  LogDensity target = [&](const Vector& x, Vector& g) {
    return position_log_density(data, state_, hyper_, x, g);
  };
  const HmcPoint current = evaluate_point(target, pack_position(state_));
  const auto res = kernel_.step(target, current, rng, adapting);
  unpack_position(res.point.x, state_);
  state_.b = gibbs_b(state_, hyper_, rng);
}

WeakSparseState initial_weak_state(Index N, Index D, Index K, WeakPrior prior,
                                   const WeakSparseHyper& hyper, Rng& rng) {
  WeakSparseState s;
  s.prior = prior;
  s.b = Vector::Constant(K, hyper.gamma_shape * hyper.gamma_scale);
  s.factor.Theta = Matrix::NullaryExpr(K, D, [&] { return draw_normal(rng, 0.0, 0.1); });
  if (prior == WeakPrior::Laplace) {
    s.factor.V = Matrix::NullaryExpr(N, K, [&] { return draw_normal(rng, 0.0, 0.1); });
  } else {
    s.factor.V =
        Matrix::NullaryExpr(N, K, [&] { return 0.1 * std::exp(draw_normal(rng, 0.0, 0.1)); });
  }
  return s;
}

WeakChain hmc_fit(const ObservationMatrix& data, Index K, const WeakSparseHyper& hyper,
                  WeakPrior prior, const HmcConfig& cfg) {
  cfg.validate();
  if (K < 1) throw std::invalid_argument("hmc_fit: K must be at least 1");
  hyper.validate(data.cols());
  if (cfg.time_budget_seconds && !(*cfg.time_budget_seconds > 0.0)) {
    throw std::invalid_argument("hmc_fit: time budget must be positive");
  }
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  Rng rng(cfg.seed);
  WeakSparseSampler sampler(initial_weak_state(data.rows(), data.cols(), K, prior, hyper, rng),
                            hyper, cfg);
  WeakChain chain;
  const ChainConfig cc{cfg.burn_in, cfg.keep, cfg.thin, cfg.seed, cfg.time_budget_seconds};
  const long total = cc.total_iterations();
  double last_iter_seconds = 0.0;
  for (long it = 0; it < total; ++it) {
    const auto ts = Clock::now();
    if (cfg.time_budget_seconds) {
      const double elapsed = std::chrono::duration<double>(ts - t0).count();
      if (elapsed + last_iter_seconds > *cfg.time_budget_seconds) {
        chain.diagnostics.budget_exhausted = true;
        break;
      }
    }
    sampler.step(data, rng, it < cfg.burn_in);
    chain.diagnostics.log_joint.push_back(log_joint(data, sampler.state(), hyper).value);
    if (cc.is_kept(it)) chain.samples.push_back(sampler.state());
    chain.diagnostics.iterations = it + 1;
    last_iter_seconds = std::chrono::duration<double>(Clock::now() - ts).count();
  }
  if (chain.samples.empty()) chain.samples.push_back(sampler.state());

  const auto& k = sampler.kernel();
  chain.diagnostics.accept_rate = k.post_adapt_accept_rate();
  chain.diagnostics.divergences = k.divergences();
  chain.diagnostics.final_step_size = k.step_size();
  chain.diagnostics.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  if (chain.diagnostics.iterations > cfg.burn_in &&
      (chain.diagnostics.accept_rate < 0.05 || chain.diagnostics.accept_rate > 0.995)) {
    chain.diagnostics.warnings.push_back("HMC acceptance rate " +
                                         std::to_string(chain.diagnostics.accept_rate) +
                                         " outside [0.05, 0.995] after adaptation");
  }
  return chain;
}

}  // namespace sparselvm
