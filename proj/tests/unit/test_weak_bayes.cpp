#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "sparselvm/weak_bayes.hpp"

using namespace sparselvm;
using doctest::Approx;

namespace {

double log_gamma_pdf(double b, double shape, double scale) {
  return (shape - 1) * std::log(b) - b / scale - shape * std::log(scale) - std::lgamma(shape);
}

WeakSparseState make_state(Matrix V, Matrix T, Vector b, WeakPrior prior) {
  WeakSparseState s;
  s.factor = {std::move(V), std::move(T)};
  s.b = std::move(b);
  s.prior = prior;
  return s;
}

ObservationMatrix all_missing(Index N, Index D, const FamilySpec& fam) {
  return ObservationMatrix(Matrix::Zero(N, D), Mask::Constant(N, D, false), fam);
}

// CDF of v when b ~ Gamma(shape a, scale s) and v | b ~ Laplace(0, 1/b).
double compound_laplace_cdf(double v, double a, double s) {
  const double tail = 0.5 * std::pow(1.0 + s * std::abs(v), -a);
  return v < 0.0 ? tail : 1.0 - tail;
}

}  // namespace

TEST_CASE("log_joint prior terms") {
  auto hyper = default_weak_hyper(FamilySpec::gaussian(), 1);
  auto data = all_missing(1, 1, FamilySpec::gaussian());
  // Only the V term differs between these two states.
  auto a = make_state(Matrix::Zero(1, 1), Matrix::Zero(1, 1), Vector::Constant(1, 2.0),
                      WeakPrior::Laplace);
  auto b = a;
  b.factor.V(0, 0) = 0.75;
  const double log_pv0 = std::log(2.0 / 2.0);
  CHECK(log_joint(data, a, hyper).value - log_joint(data, b, hyper).value ==
        Approx(log_pv0 - (std::log(1.0) - 2.0 * 0.75)));

  auto e = make_state(Matrix::Ones(1, 1), Matrix::Zero(1, 1), Vector::Ones(1),
                      WeakPrior::Exponential);
  const double rest = log_gamma_pdf(1.0, 1.0, 1.0) - log_partition(FamilySpec::gaussian(), 0.0);
  CHECK(log_joint(data, e, hyper).value == Approx(-1.0 + rest));

  e.factor.V(0, 0) = 0.0;
  auto lj = log_joint(data, e, hyper);
  CHECK(lj.domain_error);
  CHECK(lj.value == -INFINITY);
  e.factor.V(0, 0) = -0.1;
  CHECK(log_joint(data, e, hyper).domain_error);
}

TEST_CASE("log_joint on a 2x2 Gaussian instance matches a term-by-term oracle") {
  const Matrix X{{0.3, -1.2}, {2.0, 0.5}};
  Mask M(2, 2);
  M << true, false, true, true;
  ObservationMatrix data(X, M, FamilySpec::gaussian(0.5));
  WeakSparseHyper hyper;
  hyper.gamma_shape = 2.0;
  hyper.gamma_scale = 0.5;
  hyper.conj = {Vector::Constant(2, 0.2), 1.5};
  auto s = make_state(Matrix{{0.4, -0.3}, {1.1, 0.2}}, Matrix{{0.9, -0.4}, {0.1, 1.3}},
                      Vector{{1.5, 0.7}}, WeakPrior::Laplace);
  const Matrix psi = s.factor.V * s.factor.Theta;
  double expect = 0.0;
  for (Index n = 0; n < 2; ++n)
    for (Index d = 0; d < 2; ++d)
      if (M(n, d)) expect += oracle::log_normal_pdf(X(n, d), psi(n, d), 0.5);
  for (Index k = 0; k < 2; ++k)
    for (Index d = 0; d < 2; ++d) {
      const double t = s.factor.Theta(k, d);
      expect += 0.2 * t - 1.5 * t * t / (2 * 0.5);
    }
  for (Index k = 0; k < 2; ++k) {
    for (Index n = 0; n < 2; ++n)
      expect += std::log(0.5 * s.b[k]) - s.b[k] * std::abs(s.factor.V(n, k));
    expect += log_gamma_pdf(s.b[k], 2.0, 0.5);
  }
  CHECK(log_joint(data, s, hyper).value == Approx(expect).epsilon(1e-13));
}

TEST_CASE("position gradient matches finite differences") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> z(0.0, 0.6);
  std::uniform_real_distribution<double> pos(0.2, 1.5);
  for (const auto& fam : {FamilySpec::gaussian(), FamilySpec::gaussian(0.3),
                          FamilySpec::bernoulli(), FamilySpec::poisson()}) {
    for (auto prior : {WeakPrior::Laplace, WeakPrior::Exponential}) {
      for (int rep = 0; rep < 20; ++rep) {
        const Index N = 3, D = 4, K = 2;
        Matrix X(N, D);
        Mask M(N, D);
        for (Index n = 0; n < N; ++n)
          for (Index d = 0; d < D; ++d) {
            X(n, d) = fam.kind == Family::Gaussian ? z(gen) : double((n + d + rep) % 2);
            M(n, d) = (n * D + d + rep) % 5 != 0;
          }
        ObservationMatrix data(X, M, fam);
        auto hyper = default_weak_hyper(fam, D);
        Matrix V = Matrix::NullaryExpr(N, K, [&] {
          return prior == WeakPrior::Laplace ? z(gen) : pos(gen);
        });
        auto s = make_state(V, Matrix::NullaryExpr(K, D, [&] { return z(gen); }),
                            Vector{{1.3, 0.6}}, prior);
        const Vector x = pack_position(s);
        Vector g;
        position_log_density(data, s, hyper, x, g);
        auto f = [&](const Vector& y) {
          Vector tmp;
          return position_log_density(data, s, hyper, y, tmp);
        };
        CHECK(oracle::max_rel_error(oracle::numeric_gradient(f, x, 1e-6), g) < 1e-5);

        // Up to the Jacobian, the position density is the log joint.
        WeakSparseState u = s;
        unpack_position(x, u);
        CHECK((u.factor.V - s.factor.V).norm() < 1e-12);
        double jac = 0.0;
        if (prior == WeakPrior::Exponential) jac = s.factor.V.array().log().sum();
        const double gamma_terms = log_gamma_pdf(1.3, 1, 1) + log_gamma_pdf(0.6, 1, 1);
        CHECK(f(x) == Approx(log_joint(data, s, hyper).value - gamma_terms + jac).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("gibbs_b moments") {
  WeakSparseHyper hyper;
  hyper.gamma_shape = 1.0;
  hyper.gamma_scale = 1.0;
  Rng rng(31);
  // alpha + N = 2, rate 1/beta + |v| = 2.
  auto s = make_state(Matrix::Constant(1, 1, -1.0), Matrix::Zero(1, 1), Vector::Ones(1),
                      WeakPrior::Laplace);
  std::vector<double> draws;
  for (int i = 0; i < 100000; ++i) draws.push_back(gibbs_b(s, hyper, rng)[0]);
  auto m = oracle::moments(draws);
  CHECK(std::abs(m.mean - 1.0) < 3 * m.se);
  CHECK(std::abs(m.var - 0.5) < 3 * oracle::variance_se(draws));

  // Scaling |v| by 10 divides the rate accordingly.
  hyper.gamma_shape = 3.0;
  hyper.gamma_scale = 2.0;
  Matrix V{{0.2, 1.0}, {-0.5, 0.3}, {0.1, -0.4}};
  for (double scale : {1.0, 10.0}) {
    auto t = make_state(scale * V, Matrix::Zero(2, 1), Vector::Ones(2), WeakPrior::Laplace);
    std::vector<std::vector<double>> bs(2);
    for (int i = 0; i < 100000; ++i) {
      const Vector b = gibbs_b(t, hyper, rng);
      bs[0].push_back(b[0]);
      bs[1].push_back(b[1]);
    }
    for (Index k = 0; k < 2; ++k) {
      const double expect = (3.0 + 3.0) / (0.5 + scale * V.col(k).cwiseAbs().sum());
      auto mk = oracle::moments(bs[k]);
      CHECK(std::abs(mk.mean - expect) < 3 * mk.se);
    }
  }

  // No rows: the prior Gamma(alpha, scale beta).
  auto empty = make_state(Matrix::Zero(0, 1), Matrix::Zero(1, 1), Vector::Ones(1),
                          WeakPrior::Exponential);
  draws.clear();
  for (int i = 0; i < 100000; ++i) {
    const double b = gibbs_b(empty, hyper, rng)[0];
    CHECK(b > 0.0);
    draws.push_back(b);
  }
  m = oracle::moments(draws);
  CHECK(std::abs(m.mean - 6.0) < 3 * m.se);
}

TEST_CASE("hmc_fit rejects invalid configuration") {
  auto data = all_missing(2, 2, FamilySpec::gaussian());
  auto hyper = default_weak_hyper(FamilySpec::gaussian(), 2);
  HmcConfig cfg;
  cfg.leapfrog_steps = 0;
  CHECK_THROWS_AS(hmc_fit(data, 1, hyper, WeakPrior::Laplace, cfg), std::invalid_argument);
  cfg = HmcConfig{};
  CHECK_THROWS_AS(hmc_fit(data, 0, hyper, WeakPrior::Laplace, cfg), std::invalid_argument);
  hyper.gamma_shape = 0.0;
  CHECK_THROWS_AS(hmc_fit(data, 1, hyper, WeakPrior::Laplace, cfg), std::invalid_argument);
}

TEST_CASE("with no observed data the V marginal is the prior") {
  auto data = all_missing(1, 1, FamilySpec::gaussian());
  WeakSparseHyper hyper = default_weak_hyper(FamilySpec::gaussian(), 1);
  hyper.gamma_shape = 20.0;
  hyper.gamma_scale = 0.05;
  HmcConfig cfg;
  cfg.leapfrog_steps = 10;
  cfg.step_size = 0.2;
  cfg.burn_in = 100;
  cfg.keep = 1;
  cfg.thin = 1;
  std::vector<double> vs;
  for (int chain = 0; chain < 600; ++chain) {
    cfg.seed = derive_seed(2024, {std::uint64_t(chain)});
    auto out = hmc_fit(data, 1, hyper, WeakPrior::Laplace, cfg);
    vs.push_back(out.samples.back().factor.V(0, 0));
  }
  const double p = oracle::ks_pvalue(vs, [&](double v) { return compound_laplace_cdf(v, 20.0, 0.05); });
  CHECK(p > 0.01);
}

TEST_CASE("rank-1 Gaussian data is reconstructed by the posterior mean") {
  Vector a(6), c(5);
  a << 1.0, -1.5, 0.8, 2.0, -0.6, 1.2;
  c << 0.9, -1.1, 0.5, 1.4, -0.7;
  const Matrix truth = a * c.transpose();
  std::mt19937_64 gen(8);
  std::normal_distribution<double> noise(0.0, 0.01);
  const Matrix X = truth + Matrix::NullaryExpr(6, 5, [&] { return noise(gen); });
  ObservationMatrix data(X, FamilySpec::gaussian(1e-4));
  auto hyper = default_weak_hyper(data.family(), 5);
  HmcConfig cfg;
  cfg.burn_in = 1500;
  cfg.keep = 300;
  cfg.thin = 2;
  cfg.step_size = 0.01;
  cfg.seed = 4;
  for (auto prior : {WeakPrior::Laplace, WeakPrior::Exponential}) {
    Matrix Xp = X;
    if (prior == WeakPrior::Exponential) {
      // Exponential V needs a non-negative weight vector; flip signs into Theta.
      Xp = a.cwiseAbs() * c.transpose() + Matrix::NullaryExpr(6, 5, [&] { return noise(gen); });
    }
    ObservationMatrix d(Xp, data.family());
    auto out = hmc_fit(d, 1, hyper, prior, cfg);
    Matrix mean = Matrix::Zero(6, 5);
    for (const auto& s : out.samples) mean += natural_params(s.factor);
    mean /= double(out.samples.size());
    const Matrix ref = prior == WeakPrior::Laplace ? truth : Matrix(a.cwiseAbs() * c.transpose());
    CHECK(std::sqrt((mean - ref).squaredNorm() / 30.0) < 0.1);
  }
}

TEST_CASE("NXPCA chains keep V strictly positive") {
  std::mt19937_64 gen(9);
  std::poisson_distribution<int> p(2.0);
  ObservationMatrix data(Matrix::NullaryExpr(8, 6, [&] { return double(p(gen)); }),
                         FamilySpec::poisson());
  HmcConfig cfg;
  cfg.burn_in = 100;
  cfg.keep = 200;
  cfg.thin = 1;
  auto out = hmc_fit(data, 3, default_weak_hyper(data.family(), 6), WeakPrior::Exponential, cfg);
  CHECK(out.samples.size() == 200);
  for (const auto& s : out.samples) {
    CHECK(s.factor.V.minCoeff() > 0.0);
    CHECK(s.b.minCoeff() > 0.0);
  }
  for (double lj : out.diagnostics.log_joint) CHECK(std::isfinite(lj));
}

TEST_CASE("forward simulation and the kernel preserve the prior of b") {
  // Draw (b, V, Theta, X) from the joint, apply kernel steps given X, and
  // compare the b draws with the Gamma prior.
  WeakSparseHyper hyper = default_weak_hyper(FamilySpec::gaussian(), 2);
  hyper.gamma_shape = 2.0;
  hyper.gamma_scale = 1.0;
  HmcConfig cfg;
  cfg.leapfrog_steps = 8;
  cfg.step_size = 0.15;
  Rng rng(55);
  std::vector<double> bs, b2;
  for (int rep = 0; rep < 4000; ++rep) {
    WeakSparseState s;
    s.prior = WeakPrior::Laplace;
    s.b = Vector::Constant(1, draw_gamma(rng, 2.0, 1.0));
    s.factor.V = Matrix::NullaryExpr(3, 1, [&] {
      const double mag = draw_exponential(rng) / s.b[0];
      return draw_uniform(rng) < 0.5 ? -mag : mag;
    });
    s.factor.Theta = Matrix::NullaryExpr(1, 2, [&] { return draw_normal(rng); });
    const Matrix psi = natural_params(s.factor);
    ObservationMatrix data(psi.unaryExpr([&](double m) { return m + draw_normal(rng); }),
                           FamilySpec::gaussian());
    WeakSparseSampler sampler(s, hyper, cfg);
    for (int it = 0; it < 3; ++it) sampler.step(data, rng, false);
    bs.push_back(sampler.state().b[0]);
    b2.push_back(sampler.state().b[0] * sampler.state().b[0]);
  }
  const auto m = oracle::moments(bs);
  CHECK(std::abs(m.mean - 2.0) < 3 * m.se);
  const auto m2 = oracle::moments(b2);
  CHECK(std::abs(m2.mean - 6.0) < 3 * m2.se);
}

TEST_CASE("chain diagnostics") {
  std::mt19937_64 gen(10);
  std::bernoulli_distribution coin(0.5);
  ObservationMatrix data(Matrix::NullaryExpr(6, 5, [&] { return double(coin(gen)); }),
                         FamilySpec::bernoulli());
  auto hyper = default_weak_hyper(data.family(), 5);
  HmcConfig cfg;
  cfg.burn_in = 0;
  cfg.keep = 30;
  cfg.thin = 1;
  cfg.step_size = 20.0;
  auto bad = hmc_fit(data, 2, hyper, WeakPrior::Laplace, cfg);
  CHECK(bad.diagnostics.accept_rate < 0.05);
  CHECK(bad.diagnostics.warnings.size() == 1);

  cfg = HmcConfig{};
  cfg.burn_in = 50;
  cfg.keep = 20;
  cfg.thin = 1;
  cfg.seed = 3;
  auto a = hmc_fit(data, 2, hyper, WeakPrior::Laplace, cfg);
  auto b = hmc_fit(data, 2, hyper, WeakPrior::Laplace, cfg);
  CHECK(a.samples.size() == 20);
  CHECK(a.samples.back().factor.V == b.samples.back().factor.V);
  CHECK(a.diagnostics.log_joint.size() == 70);
  CHECK_FALSE(a.diagnostics.budget_exhausted);

  cfg.burn_in = 100000;
  cfg.time_budget_seconds = 0.05;
  auto t = hmc_fit(data, 2, hyper, WeakPrior::Laplace, cfg);
  CHECK(t.diagnostics.budget_exhausted);
  CHECK(t.samples.size() == 1);
  CHECK(t.diagnostics.wall_seconds < 1.0);
}
