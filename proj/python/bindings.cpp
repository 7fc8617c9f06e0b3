#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sparselvm/experiment.hpp"

namespace py = pybind11;
using namespace sparselvm;

namespace {

FamilySpec make_family(const std::string& name, double noise_variance) {
  FamilySpec f;
  f.kind = parse_family(name);
  f.gaussian_noise_variance = noise_variance;
  f.validate();
  return f;
}

ObservationMatrix make_data(const Matrix& x, const std::optional<Mask>& mask,
                            const std::string& family, double noise_variance) {
  const FamilySpec fam = make_family(family, noise_variance);
  if (mask) return ObservationMatrix(x, *mask, fam);
  return ObservationMatrix(x, fam);
}

py::dict chain_arrays(const std::vector<FactorState>& states) {
  const auto S = static_cast<py::ssize_t>(states.size());
  const auto N = static_cast<py::ssize_t>(states.front().V.rows());
  const auto K = static_cast<py::ssize_t>(states.front().V.cols());
  const auto D = static_cast<py::ssize_t>(states.front().Theta.cols());
  py::array_t<double> V({S, N, K});
  py::array_t<double> T({S, K, D});
  auto v = V.mutable_unchecked<3>();
  auto t = T.mutable_unchecked<3>();
  for (py::ssize_t s = 0; s < S; ++s) {
    for (py::ssize_t n = 0; n < N; ++n) {
      for (py::ssize_t k = 0; k < K; ++k) v(s, n, k) = states[s].V(n, k);
    }
    for (py::ssize_t k = 0; k < K; ++k) {
      for (py::ssize_t d = 0; d < D; ++d) t(s, k, d) = states[s].Theta(k, d);
    }
  }
  py::dict out;
  out["V"] = V;
  out["Theta"] = T;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse exponential-family matrix factorisation";

  m.def(
      "log_prob",
      [](const std::string& family, double x, double psi, double noise_variance) {
        return log_prob(make_family(family, noise_variance), x, psi);
      },
      py::arg("family"), py::arg("x"), py::arg("psi"), py::arg("noise_variance") = 1.0);

  m.def(
      "observed_loglik",
      [](const Matrix& x, const Matrix& V, const Matrix& theta, const std::string& family,
         const std::optional<Mask>& mask, double noise_variance) {
        const auto data = make_data(x, mask, family, noise_variance);
        return observed_loglik(data, FactorState{V, theta});
      },
      py::arg("x"), py::arg("V"), py::arg("theta"), py::arg("family"),
      py::arg("mask") = py::none(), py::arg("noise_variance") = 1.0);

  m.def(
      "generate_block_images",
      [](Index n_images, double flip_prob, double feature_prob, std::uint64_t seed) {
        const auto bi = generate_block_images({n_images, flip_prob, feature_prob, seed});
        return py::make_tuple(bi.data.values(), bi.true_z, bi.true_features);
      },
      py::arg("n_images") = 100, py::arg("flip_prob") = 0.1, py::arg("feature_prob") = 0.5,
      py::arg("seed") = 0);

  m.def(
      "generate_sparse_counts",
      [](Index N, Index D, Index K_true, double density, std::uint64_t seed) {
        const auto sc = generate_sparse_counts(N, D, K_true, density, seed);
        return py::make_tuple(sc.data.values(), sc.true_mean, sc.true_nonzero_count);
      },
      py::arg("N"), py::arg("D"), py::arg("K_true"), py::arg("density"), py::arg("seed") = 0);

  m.def(
      "fit_l1",
      [](const Matrix& x, Index K, const std::string& family, double alpha, double beta,
         const std::string& regulariser, const std::optional<Mask>& mask, int max_outer_iters,
         double rel_tol, double init_scale, std::uint64_t seed, double noise_variance) {
        const auto data = make_data(x, mask, family, noise_variance);
        L1Config c;
        c.alpha = alpha;
        c.beta = beta;
        c.regulariser = parse_regulariser(regulariser);
        c.max_outer_iters = max_outer_iters;
        c.rel_tol = rel_tol;
        c.init_scale = init_scale;
        c.seed = seed;
        L1Result r;
        {
          py::gil_scoped_release release;
          r = fit_l1(data, K, c);
        }
        py::dict out;
        out["V"] = r.state.V;
        out["Theta"] = r.state.Theta;
        out["converged"] = r.converged;
        out["iterations"] = r.iterations;
        out["objective"] = r.objective;
        out["trace"] = r.trace;
        return out;
      },
      py::arg("x"), py::arg("K"), py::arg("family"), py::arg("alpha") = 0.1,
      py::arg("beta") = 1.0, py::arg("regulariser") = "conjugate", py::arg("mask") = py::none(),
      py::arg("max_outer_iters") = 500, py::arg("rel_tol") = 1e-5, py::arg("init_scale") = 0.01,
      py::arg("seed") = 0, py::arg("noise_variance") = 1.0);

  m.def(
      "hmc_fit",
      [](const Matrix& x, Index K, const std::string& family, const std::string& prior,
         const std::optional<Mask>& mask, int burn_in, int keep, int thin, int leapfrog_steps,
         std::uint64_t seed, std::optional<double> time_budget, double noise_variance) {
        const auto data = make_data(x, mask, family, noise_variance);
        HmcConfig c;
        c.burn_in = burn_in;
        c.keep = keep;
        c.thin = thin;
        c.leapfrog_steps = leapfrog_steps;
        c.seed = seed;
        c.time_budget_seconds = time_budget;
        WeakPrior p;
        if (prior == "laplace") {
          p = WeakPrior::Laplace;
        } else if (prior == "exponential") {
          p = WeakPrior::Exponential;
        } else {
          throw std::invalid_argument("prior must be 'laplace' or 'exponential'");
        }
        WeakChain chain;
        {
          py::gil_scoped_release release;
          chain = hmc_fit(data, K, default_weak_hyper(data.family(), data.cols()), p, c);
        }
        std::vector<FactorState> states;
        Matrix b(static_cast<Index>(chain.samples.size()), K);
        for (std::size_t s = 0; s < chain.samples.size(); ++s) {
          states.push_back(chain.samples[s].factor);
          b.row(static_cast<Index>(s)) = chain.samples[s].b.transpose();
        }
        py::dict out = chain_arrays(states);
        out["b"] = b;
        out["accept_rate"] = chain.diagnostics.accept_rate;
        out["step_size"] = chain.diagnostics.final_step_size;
        out["log_joint"] = chain.diagnostics.log_joint;
        out["warnings"] = chain.diagnostics.warnings;
        return out;
      },
      py::arg("x"), py::arg("K"), py::arg("family"), py::arg("prior") = "laplace",
      py::arg("mask") = py::none(), py::arg("burn_in") = 1000, py::arg("keep") = 2000,
      py::arg("thin") = 5, py::arg("leapfrog_steps") = 20, py::arg("seed") = 0,
      py::arg("time_budget") = py::none(), py::arg("noise_variance") = 1.0);

  m.def(
      "fit_spike_slab",
      [](const Matrix& x, Index K, const std::string& family, const std::optional<Mask>& mask,
         int burn_in, int keep, int thin, std::uint64_t seed, std::optional<double> time_budget,
         double noise_variance) {
        const auto data = make_data(x, mask, family, noise_variance);
        SpikeSlabConfig c;
        c.chain.burn_in = burn_in;
        c.chain.keep = keep;
        c.chain.thin = thin;
        c.chain.seed = seed;
        c.chain.time_budget_seconds = time_budget;
        SpikeSlabChain chain;
        {
          py::gil_scoped_release release;
          chain = fit_spike_slab(data, K, default_spike_slab_hyper(data.family(), data.cols()), c);
        }
        std::vector<FactorState> states;
        const auto S = static_cast<Index>(chain.samples.size());
        Matrix pi(S, K);
        Matrix mu(S, K);
        Matrix sigma2(S, K);
        std::vector<Index> violations;
        for (Index s = 0; s < S; ++s) {
          const auto& st = chain.samples[static_cast<std::size_t>(s)];
          states.push_back(st.factor);
          pi.row(s) = st.pi.transpose();
          mu.row(s) = st.mu.transpose();
          sigma2.row(s) = st.sigma2.transpose();
          violations.push_back(st.zero_pattern_violations());
        }
        py::dict out = chain_arrays(states);
        out["pi"] = pi;
        out["mu"] = mu;
        out["sigma2"] = sigma2;
        out["zero_pattern_violations"] = violations;
        out["log_joint"] = chain.diagnostics.log_joint;
        out["iterations"] = chain.diagnostics.iterations;
        out["budget_exhausted"] = chain.diagnostics.budget_exhausted;
        out["slab_fallbacks"] = chain.diagnostics.slab_fallbacks;
        return out;
      },
      py::arg("x"), py::arg("K"), py::arg("family"), py::arg("mask") = py::none(),
      py::arg("burn_in") = 1000, py::arg("keep") = 2000, py::arg("thin") = 5,
      py::arg("seed") = 0, py::arg("time_budget") = py::none(), py::arg("noise_variance") = 1.0);

  m.def("nlp_bits", [](const std::vector<double>& lp) { return nlp_bits(lp); },
        py::arg("log_probs_nats"));
  m.def(
      "rmse",
      [](const std::vector<double>& p, const std::vector<double>& t) { return rmse(p, t); },
      py::arg("predicted"), py::arg("truth"));

  m.def(
      "make_splits",
      [](const Matrix& x, const std::string& family, double fraction, int replicates,
         std::uint64_t seed, const std::optional<Mask>& mask, double noise_variance) {
        const auto data = make_data(x, mask, family, noise_variance);
        py::list out;
        for (const auto& s : make_splits(data, fraction, replicates, seed)) {
          py::dict d;
          d["train_mask"] = s.train.observed();
          d["test_index"] = s.test_index;
          d["test_values"] = s.test_values;
          d["seed"] = s.seed;
          out.append(d);
        }
        return out;
      },
      py::arg("x"), py::arg("family"), py::arg("fraction") = 0.1, py::arg("replicates") = 20,
      py::arg("seed") = 0, py::arg("mask") = py::none(), py::arg("noise_variance") = 1.0);

  m.def("default_config_json", [] { return config_to_json(ExperimentConfig{}).dump(); });

  m.def(
      "run_experiment_json",
      [](const std::string& config_json) {
        const auto cfg = config_from_json(nlohmann::json::parse(config_json));
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg);
        }
        return std::make_pair(summary_json(cfg, r).dump(), report_csv(r.rows, cfg.report_timing));
      },
      py::arg("config_json"));
}
