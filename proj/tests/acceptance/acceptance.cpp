// Prints one PASS/FAIL line per acceptance criterion and exits non-zero if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "spike_slab_oracle.hpp"
#include "sparselvm/datasets.hpp"
#include "sparselvm/eval.hpp"
#include "sparselvm/experiment.hpp"
#include "sparselvm/l1_solver.hpp"
#include "sparselvm/samplers.hpp"
#include "sparselvm/spike_slab.hpp"
#include "sparselvm/weak_bayes.hpp"

using namespace sparselvm;

namespace {

// Tolerances.
constexpr double kBaselineBits = 360.0;
constexpr double kOrderingCeilingBits = 300.0;
constexpr double kGaussianWeightTol = 1e-6;
constexpr double kLaplaceWeightTol = 0.1;
constexpr double kMomentSe = 3.0;
constexpr int kMomentDraws = 100000;
constexpr double kNormalMeanTol = 0.05;
constexpr double kNormalVarLo = 0.9;
constexpr double kNormalVarHi = 1.1;
constexpr double kGradRelTol = 1e-5;
constexpr double kReversibilityTol = 1e-8;
constexpr double kKktTol = 1e-4;
constexpr double kSvdTol = 1e-6;
constexpr int kExactZeroSamples = 2000;
constexpr double kBudgetSeconds = 60.0;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void criterion(const char* name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s %s:%s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.str().c_str(), secs);
  std::fflush(stdout);
}

ExperimentConfig block_config() {
  ExperimentConfig c;
  c.spike_slab.chain.burn_in = 500;
  c.spike_slab.chain.keep = 200;
  c.spike_slab.chain.thin = 2;
  c.hmc.burn_in = 500;
  c.hmc.keep = 200;
  c.hmc.thin = 2;
  return c;
}

const MethodSummary& find(const ExperimentResult& r, Method m) {
  for (const auto& s : r.summary) {
    if (s.method == m) return s;
  }
  throw std::runtime_error("missing summary for " + std::string(method_name(m)));
}

void baseline(Outcome& o) {
  ExperimentConfig c;
  c.methods = {Method::RandomBaseline};
  const auto r = run_experiment(c);
  bool exact = r.ok();
  for (const auto& row : r.rows) exact = exact && row.nlp_bits == kBaselineBits;
  o.detail << " " << r.rows.size() << " splits, first " << r.rows.front().nlp_bits << " bits";
  o.require(exact, "every split scores exactly 360 bits");
}

void ordering(Outcome& o) {
  ExperimentConfig c = block_config();
  c.methods = {Method::L1, Method::LXPCA, Method::SpikeSlab};
  const auto r = run_experiment(c);
  o.require(r.ok(), "all fits succeed");
  const auto& l1 = find(r, Method::L1).report;
  const auto& lx = find(r, Method::LXPCA).report;
  const auto& ss = find(r, Method::SpikeSlab).report;
  o.detail << " L1 " << l1.nlp_mean << "±" << l1.nlp_std << ", LXPCA " << lx.nlp_mean << "±"
           << lx.nlp_std << ", S&S " << ss.nlp_mean << "±" << ss.nlp_std << " bits over "
           << l1.per_split.size() << " splits";
  o.require(l1.per_split.size() == 20, "20 splits");
  o.require(l1.nlp_mean < kOrderingCeilingBits, "L1 < 300");
  o.require(lx.nlp_mean < kOrderingCeilingBits, "LXPCA < 300");
  o.require(ss.nlp_mean < kOrderingCeilingBits, "S&S < 300");
  o.require(ss.nlp_mean <= l1.nlp_mean + l1.nlp_std, "S&S <= L1 mean + L1 std");
}

void sparsity(Outcome& o) {
  ExperimentConfig c;
  c.methods = {Method::L1, Method::SpikeSlab};
  c.data.kind = "sparse_counts";
  c.data.counts_N = 100;
  c.data.counts_D = 200;
  c.data.counts_density = 0.07;
  c.data.counts_K_true = 5;
  c.k_list = {10};
  c.replicates = 10;
  // Shorter chains (300 burn-in, 50 kept) leave enough Monte Carlo noise in
  // the averaged reconstruction to dominate the spread across splits.
  c.spike_slab.chain.burn_in = 1000;
  c.spike_slab.chain.keep = 200;
  c.spike_slab.chain.thin = 2;
  const auto r = run_sparsity_recovery(c);
  const SparsityRow* l1 = nullptr;
  const SparsityRow* ss = nullptr;
  for (const auto& row : r.rows) (row.method == Method::L1 ? l1 : ss) = &row;
  if (!l1 || !ss) throw std::runtime_error("missing sparsity rows");
  const double truth = static_cast<double>(r.true_count);
  o.detail << " truth " << r.true_count << ", L1 " << l1->mean << "±" << l1->std << ", S&S "
           << ss->mean << "±" << ss->std;
  o.require(std::abs(ss->mean - truth) < std::abs(l1->mean - truth), "S&S closer to truth");
  o.require(ss->std < l1->std, "S&S std smaller");
}

void collapsed_weights(Outcome& o) {
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<int> small(1, 6), larger(5, 12);
  std::uniform_real_distribution<double> var(0.3, 3.0);
  double worst_gauss = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto fam = FamilySpec::gaussian(var(rng));
    auto inst = oracle::random_weight_instance(fam, small(rng), rng);
    const auto hyper = default_spike_slab_hyper(fam, inst.data.cols());
    const double w0 = spike_weight(inst.n, inst.k, inst.data, inst.state, hyper);
    const double w1 = slab_weight(inst.n, inst.k, inst.data, inst.state, hyper).log_weight;
    worst_gauss = std::max({worst_gauss,
                            std::abs(w0 - oracle::spike_weight_oracle(inst.data, inst.state, inst.n, inst.k)),
                            std::abs(w1 - oracle::slab_weight_oracle(inst.data, inst.state, inst.n, inst.k))});
  }
  double worst_laplace = 0.0;
  for (const auto& fam : {FamilySpec::bernoulli(), FamilySpec::poisson()}) {
    for (int i = 0; i < 100; ++i) {
      auto inst = oracle::random_weight_instance(fam, larger(rng), rng);
      const auto hyper = default_spike_slab_hyper(fam, inst.data.cols());
      const double w1 = slab_weight(inst.n, inst.k, inst.data, inst.state, hyper).log_weight;
      worst_laplace = std::max(
          worst_laplace, std::abs(w1 - oracle::slab_weight_oracle(inst.data, inst.state, inst.n, inst.k)));
    }
  }
  o.detail << " worst Gaussian error " << worst_gauss << ", worst Laplace error " << worst_laplace
           << " nats";
  o.require(worst_gauss < kGaussianWeightTol, "Gaussian within 1e-6");
  o.require(worst_laplace < kLaplaceWeightTol, "Laplace within 0.1 nats");
}

// |empirical - expected| in units of the Monte Carlo standard error.
double z_mean(const std::vector<double>& xs, double expected) {
  const auto m = oracle::moments(xs);
  return std::abs(m.mean - expected) / m.se;
}

double z_var(const std::vector<double>& xs, double expected) {
  return std::abs(oracle::moments(xs).var - expected) / oracle::variance_se(xs);
}

void conjugate_updates(Outcome& o) {
  double worst = 0.0;
  auto track = [&](double z) { worst = std::max(worst, z); };

  // pi_k | Z ~ Beta(e + m_k, f + N - m_k) with e = f = 1, N = 3, m = (2, 0).
  {
    SpikeSlabHyper hyper;
    SpikeSlabState s;
    s.factor = {Matrix::Zero(3, 2), Matrix::Zero(2, 1)};
    s.Z = Mask::Constant(3, 2, false);
    s.Z(0, 0) = s.Z(2, 0) = true;
    s.pi = Vector::Constant(2, 0.5);
    s.mu = Vector::Zero(2);
    s.sigma2 = Vector::Ones(2);
    Rng rng(1);
    std::vector<double> a, b;
    for (int i = 0; i < kMomentDraws; ++i) {
      const Vector pi = gibbs_pi(s, hyper, rng);
      a.push_back(pi[0]);
      b.push_back(pi[1]);
    }
    track(z_mean(a, 3.0 / 5.0));
    track(z_var(a, 3.0 * 2.0 / (25.0 * 6.0)));
    track(z_mean(b, 1.0 / 5.0));
    track(z_var(b, 4.0 / (25.0 * 6.0)));
  }
  // Normal-Gamma update for the active values {1, ..., 5}.
  {
    SpikeSlabHyper hyper;
    hyper.ng_mean = 0.5;
    hyper.ng_precision_scale = 2.0;
    hyper.ng_shape = 3.0;
    hyper.ng_rate = 2.0;
    SpikeSlabState s;
    s.factor = {Matrix::Zero(6, 1), Matrix::Zero(1, 1)};
    s.Z = Mask::Constant(6, 1, false);
    for (Index n = 0; n < 5; ++n) {
      s.Z(n, 0) = true;
      s.factor.V(n, 0) = n + 1.0;
    }
    s.pi = Vector::Constant(1, 0.5);
    s.mu = Vector::Zero(1);
    s.sigma2 = Vector::Ones(1);
    const double n = 5, xbar = 3, ss = 10, kn = 2 + n;
    const double mn = (2 * 0.5 + n * xbar) / kn, an = 3 + n / 2;
    const double bn = 2 + ss / 2 + 2 * n * (xbar - 0.5) * (xbar - 0.5) / (2 * kn);
    Rng rng(2);
    std::vector<double> mu, tau;
    for (int i = 0; i < kMomentDraws; ++i) {
      const auto d = gibbs_mu_sigma(s, hyper, rng);
      mu.push_back(d.mu[0]);
      tau.push_back(1.0 / d.sigma2[0]);
    }
    track(z_mean(mu, mn));
    track(z_var(mu, bn / (kn * (an - 1))));
    track(z_mean(tau, an / bn));
    track(z_var(tau, an / (bn * bn)));
  }
  // b_k | V ~ Gamma(alpha + N, rate 1/beta + sum |v_nk|).
  {
    WeakSparseHyper hyper;
    hyper.gamma_shape = 3.0;
    hyper.gamma_scale = 2.0;
    WeakSparseState s;
    s.factor = {Matrix{{0.2, 1.0}, {-0.5, 0.3}, {0.1, -0.4}}, Matrix::Zero(2, 1)};
    s.b = Vector::Ones(2);
    s.prior = WeakPrior::Laplace;
    Rng rng(3);
    std::vector<std::vector<double>> bs(2);
    for (int i = 0; i < kMomentDraws; ++i) {
      const Vector b = gibbs_b(s, hyper, rng);
      for (int k = 0; k < 2; ++k) bs[k].push_back(b[k]);
    }
    for (Index k = 0; k < 2; ++k) {
      const double shape = 3.0 + 3.0, rate = 0.5 + s.factor.V.col(k).cwiseAbs().sum();
      track(z_mean(bs[k], shape / rate));
      track(z_var(bs[k], shape / (rate * rate)));
    }
  }
  o.detail << " worst deviation " << worst << " standard errors at " << kMomentDraws << " draws";
  o.require(worst < kMomentSe, "within 3 s.e.");
}

void sampler_kernels(Outcome& o) {
  auto check_normal = [&](const std::vector<double>& xs, const char* who) {
    const auto m = oracle::moments(xs);
    o.detail << " " << who << " mean " << m.mean << " var " << m.var << ";";
    o.require(std::abs(m.mean) < kNormalMeanTol && m.var >= kNormalVarLo && m.var <= kNormalVarHi,
              std::string(who) + " recovers N(0, 1)");
  };
  {
    Rng rng(11);
    auto target = [](double x) { return -0.5 * x * x; };
    double x = 0.0, fx = 0.0;
    std::vector<double> xs;
    for (int i = 0; i < 10000; ++i) {
      const auto r = slice_step(target, x, fx, SliceConfig{}, rng);
      x = r.x;
      fx = r.log_target;
      xs.push_back(x);
    }
    check_normal(xs, "slice");
  }
  {
    const LogDensity target = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
      g = -x;
      return -0.5 * x.squaredNorm();
    };
    HmcConfig cfg;
    cfg.leapfrog_steps = 10;
    cfg.step_size = 0.3;
    HmcKernel kernel(cfg);
    Rng rng(21);
    HmcPoint pt = evaluate_point(target, Eigen::VectorXd::Zero(1));
    for (int i = 0; i < 500; ++i) pt = kernel.step(target, pt, rng, true).point;
    std::vector<double> xs;
    for (int i = 0; i < 10000; ++i) {
      pt = kernel.step(target, pt, rng, false).point;
      xs.push_back(pt.x[0]);
    }
    check_normal(xs, "HMC");
  }
  // Gradients fed to HMC by the weakly sparse models.
  double worst_grad = 0.0;
  std::mt19937_64 gen(5);
  std::normal_distribution<double> z(0.0, 0.6);
  std::uniform_real_distribution<double> pos(0.2, 1.5);
  for (const auto& fam : {FamilySpec::gaussian(0.5), FamilySpec::bernoulli(), FamilySpec::poisson()}) {
    for (auto prior : {WeakPrior::Laplace, WeakPrior::Exponential}) {
      for (int rep = 0; rep < 10; ++rep) {
        const Index N = 4, D = 5, K = 2;
        Matrix X(N, D);
        for (Index n = 0; n < N; ++n)
          for (Index d = 0; d < D; ++d)
            X(n, d) = fam.kind == Family::Gaussian ? z(gen) : double((n * d + rep) % 2);
        ObservationMatrix data(X, fam);
        const auto hyper = default_weak_hyper(fam, D);
        WeakSparseState s;
        s.prior = prior;
        s.factor.V = Matrix::NullaryExpr(N, K, [&] { return prior == WeakPrior::Laplace ? z(gen) : pos(gen); });
        s.factor.Theta = Matrix::NullaryExpr(K, D, [&] { return z(gen); });
        s.b = Vector{{1.3, 0.6}};
        const Vector x = pack_position(s);
        Vector g;
        position_log_density(data, s, hyper, x, g);
        auto f = [&](const Vector& y) {
          Vector tmp;
          return position_log_density(data, s, hyper, y, tmp);
        };
        worst_grad = std::max(worst_grad, oracle::max_rel_error(oracle::numeric_gradient(f, x, 1e-6), g));
      }
    }
  }
  o.detail << " worst gradient error " << worst_grad << ";";
  o.require(worst_grad < kGradRelTol, "gradient within 1e-5 relative");

  const LogDensity quartic = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = -x.array().cube().matrix() - 0.5 * x;
    return -0.25 * x.array().pow(4).sum() - 0.25 * x.squaredNorm();
  };
  Rng rng(24);
  double worst_rev = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd x0(6), p0(6);
    for (int i = 0; i < 6; ++i) {
      x0[i] = draw_normal(rng);
      p0[i] = draw_normal(rng);
    }
    const auto start = evaluate_point(quartic, x0);
    const auto fwd = leapfrog(quartic, start, p0, 30, 0.05);
    const auto back = leapfrog(quartic, fwd.end, -fwd.momentum, 30, 0.05);
    worst_rev = std::max({worst_rev, (back.end.x - x0).norm(), (back.momentum + p0).norm()});
  }
  o.detail << " reversibility error " << worst_rev;
  o.require(worst_rev < kReversibilityTol, "reversible within 1e-8");
}

void l1_solver(Outcome& o) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::poisson_distribution<int> pois(1.2);
  auto random = [&](Index r, Index c, double sd) {
    return Matrix(Matrix::NullaryExpr(r, c, [&] { return sd * z(rng); }));
  };
  bool monotone = true;
  int runs = 0;
  double worst_kkt = -INFINITY;
  for (int rep = 0; rep < 6; ++rep) {
    Matrix X;
    FamilySpec fam;
    if (rep % 3 == 0) {
      X = random(10, 8, 1.0);
      fam = FamilySpec::gaussian();
    } else if (rep % 3 == 1) {
      const Matrix psi = random(12, 2, 1.5) * random(2, 8, 1.5);
      X = psi.unaryExpr([&](double p) { return u(rng) < 1.0 / (1.0 + std::exp(-p)) ? 1.0 : 0.0; });
      fam = FamilySpec::bernoulli();
    } else {
      X = Matrix::NullaryExpr(10, 8, [&] { return double(pois(rng)); });
      fam = FamilySpec::poisson();
    }
    ObservationMatrix data(X, fam);
    for (auto reg : {Regulariser::L2, Regulariser::L1, Regulariser::NegConjugateLogPrior}) {
      L1Config c;
      c.alpha = 0.5;
      c.beta = 0.3;
      c.regulariser = reg;
      c.rel_tol = 1e-10;
      c.max_outer_iters = 5000;
      c.init_scale = 1.0;
      c.seed = rep;
      const auto r = fit_l1(data, 3, c);
      ++runs;
      for (std::size_t i = 1; i < r.trace.size(); ++i) monotone = monotone && r.trace[i] <= r.trace[i - 1];
      for (Index n = 0; n < r.state.V.rows(); ++n) {
        const Vector g = loglik_grad_v(data, r.state, n);
        for (Index k = 0; k < r.state.V.cols(); ++k) {
          if (r.state.V(n, k) == 0.0) worst_kkt = std::max(worst_kkt, std::abs(g[k]) - c.alpha);
        }
      }
    }
  }
  double worst_svd = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const Index N = 8, D = 6, K = 2;
    const Matrix X = random(N, K, 2.0) * random(K, D, 1.0) + random(N, D, 0.3);
    Eigen::JacobiSVD<Matrix> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Matrix Xk = svd.matrixU().leftCols(K) * svd.singularValues().head(K).asDiagonal() *
                      svd.matrixV().leftCols(K).transpose();
    const double svd_obj = 0.5 * (X - Xk).squaredNorm() + 0.5 * N * D * std::log(2.0 * M_PI);
    L1Config c;
    c.alpha = 0.0;
    c.beta = 0.0;
    c.rel_tol = 1e-14;
    c.max_outer_iters = 20000;
    c.init_scale = 1.0;
    c.seed = rep;
    const auto r = fit_l1(ObservationMatrix(X, FamilySpec::gaussian()), K, c);
    ++runs;
    for (std::size_t i = 1; i < r.trace.size(); ++i) monotone = monotone && r.trace[i] <= r.trace[i - 1];
    worst_svd = std::max(worst_svd, std::abs(r.objective - svd_obj));
  }
  o.detail << " " << runs << " runs, worst KKT excess " << worst_kkt << ", worst SVD gap " << worst_svd;
  o.require(monotone, "monotone objective");
  o.require(worst_kkt <= kKktTol, "KKT at zeros");
  o.require(worst_svd <= kSvdTol, "SVD objective within 1e-6");
}

void exact_zero(Outcome& o) {
  const auto images = generate_block_images({100, 0.1, 0.5, 17});
  const auto hyper = default_spike_slab_hyper(images.data.family(), kBlockImagePixels);
  SpikeSlabConfig cfg;
  cfg.chain = {50, kExactZeroSamples, 1, 3};
  const auto out = fit_spike_slab(images.data, 6, hyper, cfg);
  long violations = 0;
  for (const auto& s : out.samples) {
    for (Index n = 0; n < s.Z.rows(); ++n)
      for (Index k = 0; k < s.Z.cols(); ++k) violations += (s.factor.V(n, k) == 0.0) != !s.Z(n, k);
  }
  o.detail << " " << out.samples.size() << " samples, " << violations << " violations";
  o.require(static_cast<int>(out.samples.size()) == kExactZeroSamples, "2000 samples");
  o.require(violations == 0, "no violations");
}

void budget(Outcome& o) {
  const auto images = generate_block_images({100, 0.1, 0.5, 23});
  const auto split = make_splits(images.data, 0.1, 1, 29).front();
  const auto hyper = default_spike_slab_hyper(images.data.family(), kBlockImagePixels);
  SpikeSlabConfig cfg;
  cfg.chain = {1000, 2000, 5, 31};
  cfg.chain.time_budget_seconds = kBudgetSeconds;
  const auto out = fit_spike_slab(split.train, 4, hyper, cfg);
  const auto& d = out.diagnostics;
  // The budget is checked between sweeps, so the overrun is at most one sweep.
  // Sweeps vary a little in cost, so twice the average sweep is allowed.
  const double sweep = d.wall_seconds / static_cast<double>(std::max<long>(d.iterations, 1));
  std::vector<FactorState> states;
  for (const auto& s : out.samples) states.push_back(s.factor);
  const auto sc = score(predict(states, split), split);
  o.detail << " " << d.iterations << " sweeps in " << d.wall_seconds << " s (sweep " << sweep
           << " s), " << out.samples.size() << " samples, NLP " << sc.nlp_bits << " bits";
  o.require(d.budget_exhausted, "budget binds");
  o.require(d.wall_seconds <= kBudgetSeconds + 2.0 * sweep, "stops within budget + one sweep");
  o.require(sc.nlp_bits < kBaselineBits, "beats 360 bits");
}

}  // namespace

int main() {
  criterion("random-baseline anchor", baseline);
  criterion("collapsed-weight oracle", collapsed_weights);
  criterion("conjugate updates", conjugate_updates);
  criterion("sampler kernels", sampler_kernels);
  criterion("L1 solver", l1_solver);
  criterion("exact-zero invariant", exact_zero);
  criterion("budget mode", budget);
  criterion("block-images ordering", ordering);
  criterion("sparsity-recovery direction", sparsity);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
