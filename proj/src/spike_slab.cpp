#include "sparselvm/spike_slab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sparselvm/parallel.hpp"

namespace sparselvm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kNewtonMaxIter = 200;
constexpr double kNewtonStepTol = 1e-10;
constexpr double kCurvatureFloor = 1e-8;

double log_normal_pdf(double v, double mu, double var) {
  const double r = v - mu;
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * r * r / var;
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Row n's observed entries with factor k's contribution removed from psi.
struct RowSlice {
  std::vector<double> s;
  std::vector<double> rest;
  std::vector<double> theta;
  double log_base = 0.0;
};

RowSlice make_row_slice(const ObservationMatrix& data, const Matrix& theta,
                        const Eigen::RowVectorXd& psi_row, double v_nk, Index n,
                        Index k) {
  RowSlice out;
  out.log_base = data.row_log_base(n);
  const Matrix& suff = data.suff_stats();
  for (Index d = 0; d < data.cols(); ++d) {
    if (!data.is_observed(n, d)) continue;
    out.s.push_back(suff(n, d));
    out.rest.push_back(psi_row[d] - v_nk * theta(k, d));
    out.theta.push_back(theta(k, d));
  }
  return out;
}

double row_loglik(const FamilySpec& fam, const RowSlice& row, double v) {
  double total = row.log_base;
  for (std::size_t i = 0; i < row.s.size(); ++i) {
    const double psi = row.rest[i] + v * row.theta[i];
    total += row.s[i] * psi - log_partition_unchecked(fam, psi);
  }
  return total;
}

struct RowEval {
  double f;
  double grad;
  double curvature;  // negative second derivative
};

RowEval row_eval(const FamilySpec& fam, const RowSlice& row, double v) {
  RowEval r{row.log_base, 0.0, 0.0};
  for (std::size_t i = 0; i < row.s.size(); ++i) {
    const double t = row.theta[i];
    const double psi = row.rest[i] + v * t;
    const PartitionTerms a = log_partition_terms(fam, psi);
    r.f += row.s[i] * psi - a.a;
    r.grad += t * (row.s[i] - a.grad);
    r.curvature += t * t * a.hess;
  }
  return r;
}

SlabWeight gaussian_slab(const FamilySpec& fam, const RowSlice& row, double mu,
                         double s2, double log_pi) {
  const double var = fam.gaussian_noise_variance;
  double a = 0.0;
  double c = 0.0;
  for (std::size_t i = 0; i < row.s.size(); ++i) {
    a += row.theta[i] * (row.s[i] - row.rest[i] / var);
    c += row.theta[i] * row.theta[i] / var;
  }
  const double c0 = row_loglik(fam, row, 0.0);
  const double precision = c + 1.0 / s2;
  const double lin = a + mu / s2;
  SlabWeight w;
  w.log_weight = log_pi + c0 + 0.5 * lin * lin / precision - 0.5 * mu * mu / s2 -
                 0.5 * std::log(precision * s2);
  w.mode = lin / precision;
  w.precision = precision;
  return w;
}

double gauss_hermite_log_integral(const FamilySpec& fam, const RowSlice& row, double mu,
                                  double s2) {
  const auto& gh = gauss_hermite_20();
  const double scale = std::sqrt(2.0 * s2);
  double acc = kNegInf;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    const double v = mu + scale * gh.nodes[i];
    acc = log_add(acc, std::log(gh.weights[i]) + row_loglik(fam, row, v));
  }
  return acc - 0.5 * std::log(M_PI);
}

SlabWeight laplace_slab(const FamilySpec& fam, const RowSlice& row, double mu, double s2,
                        double log_pi) {
  // f(v) = log p(x_n | v) + log N(v | mu, s2); concave, so the mode is unique.
  auto eval = [&](double v) {
    RowEval r = row_eval(fam, row, v);
    r.f += log_normal_pdf(v, mu, s2);
    r.grad -= (v - mu) / s2;
    r.curvature += 1.0 / s2;
    return r;
  };
  // Safeguarded Newton on the decreasing gradient. [lo, hi] brackets the
  // mode; a step that leaves it or fails to halve the previous step is
  // replaced by bisection, or by a doubling move while one side is open.
  double v = mu;
  RowEval cur = eval(v);
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  double prev_dx = std::numeric_limits<double>::infinity();
  double expand = std::sqrt(s2);
  bool converged = false;
  auto usable = [](const RowEval& r) {
    return std::isfinite(r.f) && std::isfinite(r.grad) && r.curvature > 0.0 &&
           std::isfinite(r.curvature);
  };
  for (int it = 0; it < kNewtonMaxIter && usable(cur); ++it) {
    if (cur.grad > 0.0) {
      lo = v;
    } else if (cur.grad < 0.0) {
      hi = v;
    } else {
      converged = true;
      break;
    }
    const double newton = cur.grad / cur.curvature;
    if (std::abs(newton) <= kNewtonStepTol * (1.0 + std::abs(v)) ||
        hi - lo <= kNewtonStepTol * (1.0 + std::abs(v))) {
      converged = true;
      break;
    }
    double next_v = v + newton;
    if (!(next_v > lo && next_v < hi) || !(std::abs(newton) <= 0.5 * prev_dx)) {
      if (std::isfinite(lo) && std::isfinite(hi)) {
        next_v = 0.5 * (lo + hi);
      } else {
        next_v = v + std::copysign(std::max(2.0 * std::abs(newton), expand), cur.grad);
        expand *= 2.0;
      }
    }
    RowEval next = eval(next_v);
    if (!(std::isfinite(next.f) && std::isfinite(next.grad))) {
      // Overflow only happens past the mode.
      (next_v > v ? hi : lo) = next_v;
      prev_dx = std::abs(next_v - v);
      continue;
    }
    prev_dx = std::abs(next_v - v);
    v = next_v;
    cur = next;
  }
  SlabWeight w;
  if (converged && std::isfinite(cur.f)) {
    const double h = std::max(cur.curvature, kCurvatureFloor);
    w.log_weight = log_pi + cur.f + 0.5 * std::log(2.0 * M_PI / h);
    w.mode = v;
    w.precision = h;
    return w;
  }
  w.log_weight = log_pi + gauss_hermite_log_integral(fam, row, mu, s2);
  w.mode = mu;
  w.precision = 1.0 / s2;
  w.fallback = true;
  return w;
}

SlabWeight slab_from_row(const FamilySpec& fam, const RowSlice& row, double mu, double s2,
                         double pi) {
  const double log_pi = std::log(pi);
  if (row.s.empty()) {
    SlabWeight w;
    w.log_weight = log_pi + row.log_base;
    w.mode = mu;
    w.precision = 1.0 / s2;
    return w;
  }
  if (fam.kind == Family::Gaussian) return gaussian_slab(fam, row, mu, s2, log_pi);
  return laplace_slab(fam, row, mu, s2, log_pi);
}

ZvDraw draw_zv(const FamilySpec& fam, const RowSlice& row, double mu, double s2, double pi,
               double current_v, const SpikeSlabHyper& hyper, int slice_steps, Rng& rng) {
  const double w0 = std::log1p(-pi) + row_loglik(fam, row, 0.0);
  const SlabWeight w1 = slab_from_row(fam, row, mu, s2, pi);
  // P(z = 1) = 1 / (1 + exp(w0 - w1))
  const double diff = w0 - w1.log_weight;
  const double p1 = diff > 0.0 ? std::exp(-diff) / (1.0 + std::exp(-diff))
                               : 1.0 / (1.0 + std::exp(diff));
  ZvDraw out;
  out.fallback = w1.fallback;
  out.z = draw_uniform(rng) < p1;
  if (!out.z) return out;

  double v = w1.fallback ? (current_v != 0.0 ? current_v : mu)
                         : w1.mode + draw_normal(rng) / std::sqrt(w1.precision);
  auto target = [&](double x) { return row_loglik(fam, row, x) + log_normal_pdf(x, mu, s2); };
  double fv = target(v);
  if (!std::isfinite(fv)) {
    v = mu;
    fv = target(v);
  }
  SliceConfig sc = hyper.slice;
  sc.initial_width *= 2.0 / std::sqrt(w1.precision);
  for (int i = 0; i < slice_steps && std::isfinite(fv); ++i) {
    const auto r = slice_step(target, v, fv, sc, rng);
    out.stalled = out.stalled || r.stalled;
    v = r.x;
    fv = r.log_target;
  }
  // The slab is continuous; an exact zero here would break the z <=> v != 0 pairing.
  if (v == 0.0) v = std::numeric_limits<double>::denorm_min();
  out.v = v;
  return out;
}

double log_beta_pdf(double p, double a, double b) {
  return (a - 1.0) * std::log(p) + (b - 1.0) * std::log1p(-p) + std::lgamma(a + b) -
         std::lgamma(a) - std::lgamma(b);
}

double clamp_open_unit(double p) {
  constexpr double eps = 1e-300;
  return std::clamp(p, eps, std::nextafter(1.0, 0.0));
}

}  // namespace

void SpikeSlabHyper::validate(Index dim) const {
  if (!(e > 0.0) || !(f > 0.0)) throw std::invalid_argument("spike-slab: e and f must be positive");
  if (!(ng_precision_scale > 0.0) || !(ng_shape > 0.0) || !(ng_rate > 0.0)) {
    throw std::invalid_argument("spike-slab: Normal-Gamma scale, shape and rate must be positive");
  }
  conj.validate(dim);
  slice.validate();
}

SpikeSlabHyper default_spike_slab_hyper(const FamilySpec& family, Index dim) {
  SpikeSlabHyper h;
  h.conj = default_conjugate(family, dim);
  return h;
}

Index SpikeSlabState::zero_pattern_violations() const {
  Index count = 0;
  for (Index n = 0; n < factor.V.rows(); ++n) {
    for (Index k = 0; k < factor.V.cols(); ++k) {
      if (Z(n, k) != (factor.V(n, k) != 0.0)) ++count;
    }
  }
  return count;
}

const GaussHermite& gauss_hermite_20() {
  static const GaussHermite rule = [] {
    constexpr int n = 20;
    // Golub-Welsch: eigen-decomposition of the symmetric Jacobi matrix.
    Matrix J = Matrix::Zero(n, n);
    for (int i = 1; i < n; ++i) {
      J(i, i - 1) = J(i - 1, i) = std::sqrt(0.5 * i);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(J);
    GaussHermite gh;
    for (int i = 0; i < n; ++i) {
      gh.nodes.push_back(es.eigenvalues()[i]);
      const double c = es.eigenvectors()(0, i);
      gh.weights.push_back(std::sqrt(M_PI) * c * c);
    }
    return gh;
  }();
  return rule;
}

double spike_weight(Index n, Index k, const ObservationMatrix& data,
                    const SpikeSlabState& state, const SpikeSlabHyper&) {
  state.factor.check_against(data);
  const Eigen::RowVectorXd psi = state.factor.V.row(n) * state.factor.Theta;
  const RowSlice row = make_row_slice(data, state.factor.Theta, psi, state.factor.V(n, k), n, k);
  return std::log1p(-state.pi[k]) + row_loglik(data.family(), row, 0.0);
}

SlabWeight slab_weight(Index n, Index k, const ObservationMatrix& data,
                       const SpikeSlabState& state, const SpikeSlabHyper&) {
  state.factor.check_against(data);
  const Eigen::RowVectorXd psi = state.factor.V.row(n) * state.factor.Theta;
  const RowSlice row = make_row_slice(data, state.factor.Theta, psi, state.factor.V(n, k), n, k);
  return slab_from_row(data.family(), row, state.mu[k], state.sigma2[k], state.pi[k]);
}

ZvDraw sample_zv(Index n, Index k, const ObservationMatrix& data, const SpikeSlabState& state,
                 const SpikeSlabHyper& hyper, Rng& rng) {
  state.factor.check_against(data);
  const Eigen::RowVectorXd psi = state.factor.V.row(n) * state.factor.Theta;
  const double v_nk = state.factor.V(n, k);
  const RowSlice row = make_row_slice(data, state.factor.Theta, psi, v_nk, n, k);
  return draw_zv(data.family(), row, state.mu[k], state.sigma2[k], state.pi[k], v_nk, hyper, 1,
                 rng);
}

Vector gibbs_pi(const SpikeSlabState& state, const SpikeSlabHyper& hyper, Rng& rng) {
  const Index K = state.Z.cols();
  const double N = static_cast<double>(state.Z.rows());
  Vector pi(K);
  for (Index k = 0; k < K; ++k) {
    const double active = static_cast<double>(state.Z.col(k).count());
    pi[k] = clamp_open_unit(draw_beta(rng, hyper.e + active, hyper.f + N - active));
  }
  return pi;
}

MuSigma gibbs_mu_sigma(const SpikeSlabState& state, const SpikeSlabHyper& hyper, Rng& rng) {
  const Index K = state.Z.cols();
  MuSigma out{Vector(K), Vector(K)};
  for (Index k = 0; k < K; ++k) {
    double count = 0.0;
    double sum = 0.0;
    for (Index n = 0; n < state.Z.rows(); ++n) {
      if (state.Z(n, k)) {
        count += 1.0;
        sum += state.factor.V(n, k);
      }
    }
    const double mean = count > 0.0 ? sum / count : 0.0;
    double ss = 0.0;
    for (Index n = 0; n < state.Z.rows(); ++n) {
      if (state.Z(n, k)) {
        const double r = state.factor.V(n, k) - mean;
        ss += r * r;
      }
    }
    const double k0 = hyper.ng_precision_scale;
    const double kn = k0 + count;
    const double mn = (k0 * hyper.ng_mean + count * mean) / kn;
    const double an = hyper.ng_shape + 0.5 * count;
    const double dm = mean - hyper.ng_mean;
    const double bn = hyper.ng_rate + 0.5 * ss + 0.5 * k0 * count * dm * dm / kn;
    const double tau = std::max(draw_gamma(rng, an, bn), std::numeric_limits<double>::min());
    out.mu[k] = draw_normal(rng, mn, 1.0 / std::sqrt(kn * tau));
    out.sigma2[k] = 1.0 / tau;
  }
  return out;
}

namespace {

// Slice-updates every theta_kd in place, keeping psi = V Theta current.
long update_theta(const ObservationMatrix& data, const Matrix& V, Matrix& theta, Matrix& psi,
                  const SpikeSlabHyper& hyper, Rng& rng) {
  const auto& fam = data.family();
  const Matrix& suff = data.suff_stats();
  long stalls = 0;
  std::vector<double> s;
  std::vector<double> rest;
  std::vector<double> w;
  for (Index d = 0; d < theta.cols(); ++d) {
    for (Index k = 0; k < theta.rows(); ++k) {
      s.clear();
      rest.clear();
      w.clear();
      const double old = theta(k, d);
      for (Index n = 0; n < V.rows(); ++n) {
        const double v = V(n, k);
        if (v == 0.0 || !data.is_observed(n, d)) continue;
        s.push_back(suff(n, d));
        rest.push_back(psi(n, d) - v * old);
        w.push_back(v);
      }
      const double lam = hyper.conj.lambda[d];
      const double nu = hyper.conj.nu;
      auto target = [&](double t) {
        double total = lam * t - nu * log_partition_unchecked(fam, t);
        for (std::size_t i = 0; i < s.size(); ++i) {
          const double p = rest[i] + w[i] * t;
          total += s[i] * p - log_partition_unchecked(fam, p);
        }
        return total;
      };
      const double f0 = target(old);
      if (!std::isfinite(f0)) continue;
      const auto r = slice_step(target, old, f0, hyper.slice, rng);
      if (r.stalled) ++stalls;
      const double delta = r.x - old;
      if (delta != 0.0) {
        theta(k, d) = r.x;
        psi.col(d) += delta * V.col(k);
      }
    }
  }
  return stalls;
}

}  // namespace

Matrix sample_theta(const ObservationMatrix& data, const SpikeSlabState& state,
                    const SpikeSlabHyper& hyper, Rng& rng) {
  state.factor.check_against(data);
  Matrix theta = state.factor.Theta;
  Matrix psi = natural_params(state.factor);
  update_theta(data, state.factor.V, theta, psi, hyper, rng);
  return theta;
}

double spike_slab_log_joint(const ObservationMatrix& data, const SpikeSlabState& state,
                            const SpikeSlabHyper& hyper) {
  const auto& fam = data.family();
  const Matrix& V = state.factor.V;
  const Matrix& T = state.factor.Theta;
  double lj = observed_loglik(data, state.factor);
  for (Index k = 0; k < T.rows(); ++k) {
    for (Index d = 0; d < T.cols(); ++d) {
      lj += hyper.conj.lambda[d] * T(k, d) - hyper.conj.nu * log_partition_unchecked(fam, T(k, d));
    }
  }
  for (Index k = 0; k < V.cols(); ++k) {
    const double lp = std::log(state.pi[k]);
    const double lq = std::log1p(-state.pi[k]);
    for (Index n = 0; n < V.rows(); ++n) {
      if (state.Z(n, k)) {
        lj += lp + log_normal_pdf(V(n, k), state.mu[k], state.sigma2[k]);
      } else {
        lj += lq;
      }
    }
    lj += log_beta_pdf(state.pi[k], hyper.e, hyper.f);
    const double tau = 1.0 / state.sigma2[k];
    lj += hyper.ng_shape * std::log(hyper.ng_rate) - std::lgamma(hyper.ng_shape) +
          (hyper.ng_shape - 1.0) * std::log(tau) - hyper.ng_rate * tau;
    lj += log_normal_pdf(state.mu[k], hyper.ng_mean, 1.0 / (hyper.ng_precision_scale * tau));
  }
  return lj;
}

void SpikeSlabConfig::validate() const {
  chain.validate();
  if (slab_slice_steps < 1) throw std::invalid_argument("spike-slab: slab_slice_steps must be >= 1");
}

SpikeSlabState initial_spike_slab_state(Index N, Index D, Index K, const SpikeSlabHyper& hyper,
                                        Rng& rng) {
  SpikeSlabState s;
  s.pi = Vector::Constant(K, 0.5);
  s.mu = Vector::Constant(K, hyper.ng_mean);
  s.sigma2 = Vector::Constant(K, hyper.ng_rate / hyper.ng_shape);
  s.Z = Mask(N, K);
  s.factor.V = Matrix::Zero(N, K);
  for (Index k = 0; k < K; ++k) {
    for (Index n = 0; n < N; ++n) {
      s.Z(n, k) = draw_bernoulli(rng, 0.5);
      if (s.Z(n, k)) {
        double v = draw_normal(rng, s.mu[k], std::sqrt(s.sigma2[k]));
        if (v == 0.0) v = std::numeric_limits<double>::denorm_min();
        s.factor.V(n, k) = v;
      }
    }
  }
  s.factor.Theta = Matrix::NullaryExpr(K, D, [&] { return draw_normal(rng, 0.0, 0.1); });
  return s;
}

SweepStats spike_slab_sweep(const ObservationMatrix& data, SpikeSlabState& state,
                            const SpikeSlabHyper& hyper, const SpikeSlabConfig& cfg,
                            long sweep_index) {
  const Index N = data.rows();
  const Index K = state.factor.K();
  const auto& fam = data.family();
  const auto seed = cfg.chain.seed;
  std::vector<SweepStats> row_stats(static_cast<std::size_t>(N));

  // Step 1: rows are conditionally independent given Theta, pi, mu, sigma2.
  parallel_for(static_cast<std::size_t>(N), cfg.threads, [&](std::size_t row_idx) {
    const Index n = static_cast<Index>(row_idx);
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(sweep_index), row_idx, 1}));
    std::vector<Index> order(static_cast<std::size_t>(K));
    std::iota(order.begin(), order.end(), Index{0});
    if (cfg.random_scan) std::shuffle(order.begin(), order.end(), rng);
    Eigen::RowVectorXd psi = state.factor.V.row(n) * state.factor.Theta;
    for (Index k : order) {
      const double v_old = state.factor.V(n, k);
      const RowSlice row = make_row_slice(data, state.factor.Theta, psi, v_old, n, k);
      const ZvDraw draw = draw_zv(fam, row, state.mu[k], state.sigma2[k], state.pi[k], v_old,
                                  hyper, cfg.slab_slice_steps, rng);
      if (draw.fallback) ++row_stats[row_idx].fallbacks;
      if (draw.stalled) ++row_stats[row_idx].stalls;
      state.Z(n, k) = draw.z;
      state.factor.V(n, k) = draw.v;
      if (draw.v != v_old) psi += (draw.v - v_old) * state.factor.Theta.row(k);
    }
  });

  SweepStats stats;
  for (const auto& r : row_stats) {
    stats.fallbacks += r.fallbacks;
    stats.stalls += r.stalls;
  }

  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(sweep_index), 0, 2}));
  // Step 2.
  Matrix psi = natural_params(state.factor);
  stats.stalls += update_theta(data, state.factor.V, state.factor.Theta, psi, hyper, rng);
  // Step 3.
  auto ms = gibbs_mu_sigma(state, hyper, rng);
  state.mu = std::move(ms.mu);
  state.sigma2 = std::move(ms.sigma2);
  state.pi = gibbs_pi(state, hyper, rng);
  return stats;
}

SpikeSlabChain fit_spike_slab(const ObservationMatrix& data, Index K, const SpikeSlabHyper& hyper,
                              const SpikeSlabConfig& cfg) {
  cfg.validate();
  if (K < 1) throw std::invalid_argument("fit_spike_slab: K must be at least 1");
  hyper.validate(data.cols());
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  Rng init_rng(derive_seed(cfg.chain.seed, {0xFFFF}));
  SpikeSlabState state = initial_spike_slab_state(data.rows(), data.cols(), K, hyper, init_rng);
  SpikeSlabChain chain;
  const long total = cfg.chain.total_iterations();
  double last_sweep = 0.0;
  for (long it = 0; it < total; ++it) {
    const auto ts = Clock::now();
    if (cfg.chain.time_budget_seconds) {
      const double elapsed = std::chrono::duration<double>(ts - t0).count();
      if (elapsed + last_sweep > *cfg.chain.time_budget_seconds) {
        chain.diagnostics.budget_exhausted = true;
        break;
      }
    }
    const SweepStats st = spike_slab_sweep(data, state, hyper, cfg, it);
    chain.diagnostics.slab_fallbacks += st.fallbacks;
    chain.diagnostics.slice_stalls += st.stalls;
    chain.diagnostics.log_joint.push_back(spike_slab_log_joint(data, state, hyper));
    if (cfg.chain.is_kept(it)) chain.samples.push_back(state);
    chain.diagnostics.iterations = it + 1;
    last_sweep = std::chrono::duration<double>(Clock::now() - ts).count();
  }
  // A budget that ends inside burn-in still yields the latest state.
  if (chain.samples.empty()) chain.samples.push_back(state);
  chain.diagnostics.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return chain;
}

}  // namespace sparselvm
