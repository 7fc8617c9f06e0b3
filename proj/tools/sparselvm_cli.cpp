// Command-line experiment runner.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "sparselvm/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparselvm;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string method;
  std::string k;
  std::optional<int> replicates;
  std::optional<double> holdout;
  std::optional<std::uint64_t> seed;
  std::optional<double> time_budget;
  std::string out_dir;
  bool save_chain = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config_path, "JSON config file");
  sub->add_option("--method", f.method, "Method or comma list: l1, lxpca, nxpca, spike_slab, random_baseline");
  sub->add_option("--k", f.k, "Number of factors, or a comma list");
  sub->add_option("--replicates", f.replicates, "Replicate holdout splits");
  sub->add_option("--holdout", f.holdout, "Held-out fraction of observed entries");
  sub->add_option("--seed", f.seed, "Master seed");
  sub->add_option("--time-budget", f.time_budget, "Wall-clock budget per sampler run [s]");
  sub->add_option("--out-dir", f.out_dir, "Directory for outputs");
  sub->add_flag("--save-chain", f.save_chain, "Write kept samples to chain_<split>.csv");
  sub->allow_extras();
  sub->footer("Any config field can be set with --<dotted.key> <value>, e.g. --spike_slab.burn_in 200.");
}

std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0) throw CLI::ExtrasError({tok});
    std::string key = tok.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw CLI::ArgumentMismatch("missing value for --" + key);
      value = extras[++i];
    }
    out.emplace_back(key, value);
  }
  return out;
}

ExperimentConfig build_config(const CommonFlags& f, const std::vector<std::string>& extras,
                              const std::optional<std::string>& default_methods) {
  json j = config_to_json(ExperimentConfig{});
  if (default_methods) j["methods"] = *default_methods;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw std::runtime_error("cannot open config " + f.config_path);
    j.merge_patch(json::parse(in));
  }
  for (const auto& [key, value] : dotted_overrides(extras)) apply_override(j, key, value);
  if (!f.method.empty()) j["methods"] = f.method;
  if (!f.k.empty()) j["K"] = f.k;
  if (f.replicates) j["replicates"] = *f.replicates;
  if (f.holdout) j["holdout_fraction"] = *f.holdout;
  if (f.seed) j["seed"] = *f.seed;
  if (f.time_budget) j["time_budget_seconds"] = *f.time_budget;
  if (!f.out_dir.empty()) j["out_dir"] = f.out_dir;
  if (f.save_chain) j["save_chain"] = true;
  return config_from_json(j);
}

void write_matrix_csv(const fs::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_double(m(r, c));
    out << '\n';
  }
}

fs::path out_dir_or_default(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.out_dir.empty() ? fs::path("out") : fs::path(cfg.out_dir);
  fs::create_directories(dir);
  return dir;
}

void print_summary(const ExperimentResult& r) {
  std::printf("%-16s %4s %8s %22s %22s\n", "method", "K", "splits", "nlp_bits", "rmse");
  for (const auto& s : r.summary) {
    std::printf("%-16s %4lld %8zu %12.3f +- %7.3f %12.4f +- %7.4f\n",
                std::string(method_name(s.method)).c_str(), static_cast<long long>(s.K),
                s.report.per_split.size(), s.report.nlp_mean, s.report.nlp_std,
                s.report.rmse_mean, s.report.rmse_std);
  }
  for (const auto& row : r.rows) {
    if (row.failed) {
      std::fprintf(stderr, "error: %s K=%lld split %d: %s\n",
                   std::string(method_name(row.method)).c_str(), static_cast<long long>(row.K),
                   row.split_id, row.error.c_str());
    }
  }
}

int cmd_generate(const ExperimentConfig& cfg) {
  const fs::path dir = out_dir_or_default(cfg);
  json truth = {{"source", cfg.data.kind}};
  if (cfg.data.kind == "block_images") {
    const auto bi = generate_block_images(cfg.data.block);
    save_csv(bi.data, dir / "data.csv", dir / "data.json");
    write_matrix_csv(dir / "true_z.csv", bi.true_z.cast<double>());
    write_matrix_csv(dir / "true_features.csv", bi.true_features.cast<double>());
  } else if (cfg.data.kind == "sparse_counts") {
    const auto sc = generate_sparse_counts(cfg.data.counts_N, cfg.data.counts_D,
                                           cfg.data.counts_K_true, cfg.data.counts_density,
                                           cfg.data.counts_seed);
    save_csv(sc.data, dir / "data.csv", dir / "data.json");
    write_matrix_csv(dir / "true_mean.csv", sc.true_mean);
    truth["true_nonzero_count"] = sc.true_nonzero_count;
  } else {
    throw std::invalid_argument("generate: data.source must be block_images or sparse_counts");
  }
  std::ofstream(dir / "truth.json") << truth.dump(2) << '\n';
  std::cout << "wrote " << (dir / "data.csv").string() << " and " << (dir / "data.json").string()
            << '\n';
  return 0;
}

int cmd_fit(const ExperimentConfig& cfg) {
  const auto loaded = load_source(cfg.data);
  const Method m = cfg.methods.front();
  const Index K = cfg.k_list.front();
  const fs::path dir = out_dir_or_default(cfg);
  json info = {{"method", std::string(method_name(m))}, {"K", K}};
  if (m == Method::RandomBaseline) throw std::invalid_argument("fit: random_baseline has no model");
  const FitOutput fit = fit_method(m, loaded.data, K, cfg, task_seed(cfg.seed, m, K, 0));
  const auto& states = fit.states;
  Matrix V = Matrix::Zero(states.front().V.rows(), K);
  Matrix T = Matrix::Zero(K, states.front().Theta.cols());
  for (const auto& s : states) {
    V += s.V;
    T += s.Theta;
  }
  V /= static_cast<double>(states.size());
  T /= static_cast<double>(states.size());
  write_matrix_csv(dir / "V.csv", V);
  write_matrix_csv(dir / "Theta.csv", T);
  info["samples"] = states.size();
  info["converged"] = fit.converged;
  info["wall_seconds"] = fit.wall_seconds;
  info["warnings"] = fit.warnings;
  info["train_loglik_nats"] = observed_loglik(loaded.data, FactorState{V, T});
  if (fit.weak_chain) {
    const auto& d = fit.weak_chain->diagnostics;
    info["accept_rate"] = d.accept_rate;
    info["final_step_size"] = d.final_step_size;
    info["divergences"] = d.divergences;
    info["iterations"] = d.iterations;
  }
  if (fit.ss_chain) {
    const auto& d = fit.ss_chain->diagnostics;
    info["slab_fallbacks"] = d.slab_fallbacks;
    info["slice_stalls"] = d.slice_stalls;
    info["iterations"] = d.iterations;
    info["budget_exhausted"] = d.budget_exhausted;
  }
  if (cfg.save_chain) write_chain_csv(dir / "chain_full.csv", loaded.data, fit, cfg);
  std::ofstream(dir / "fit.json") << info.dump(2) << '\n';
  std::cout << info.dump(2) << '\n';
  return 0;
}

int cmd_experiment(const ExperimentConfig& cfg, bool sparsity) {
  ExperimentConfig c = cfg;
  if (c.out_dir.empty()) c.out_dir = "out";
  const auto result = run_experiment(c);
  print_summary(result);
  if (sparsity) {
    const auto sp = run_sparsity_recovery(c);
    std::printf("\nnon-zero count of reconstruction (truth %lld)\n",
                static_cast<long long>(sp.true_count));
    for (const auto& r : sp.rows) {
      std::printf("%-16s K=%-4lld %10.1f +- %8.1f\n", std::string(method_name(r.method)).c_str(),
                  static_cast<long long>(r.K), r.mean, r.std);
    }
  }
  std::cout << "outputs in " << c.out_dir << '\n';
  return result.ok() ? 0 : 1;
}

int cmd_cv(const ExperimentConfig& cfg) {
  const auto loaded = load_source(cfg.data);
  const Index K = cfg.k_list.front();
  L1Config lc = cfg.l1;
  lc.seed = cfg.seed;
  const auto cv =
      cross_validate(loaded.data, K, cfg.alpha_grid, cfg.beta_grid, lc, cfg.validation_fraction);
  const fs::path dir = out_dir_or_default(cfg);
  std::ofstream out(dir / "cv.csv");
  out << "alpha,beta,nlp_bits,converged\n";
  for (const auto& c : cv.table) {
    out << format_double(c.alpha) << ',' << format_double(c.beta) << ','
        << format_double(c.nlp_bits) << ',' << (c.converged ? "true" : "false") << '\n';
    std::printf("alpha=%-10g beta=%-10g nlp=%10.3f bits%s\n", c.alpha, c.beta, c.nlp_bits,
                c.converged ? "" : "  (not converged)");
  }
  std::printf("best alpha=%g beta=%g\n", cv.best_alpha, cv.best_beta);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse latent-variable matrix factorisation: fit, evaluate and compare L1, "
               "LXPCA, NXPCA and spike-and-slab models."};
  app.require_subcommand(1);
  CommonFlags flags;
  bool sparsity = false;
  auto* gen = app.add_subcommand("generate", "Write a synthetic data set (data.csv + data.json)");
  auto* fit = app.add_subcommand("fit", "Fit one method on the full data set");
  auto* evaluate = app.add_subcommand("evaluate", "Holdout evaluation of the configured method(s)");
  auto* compare = app.add_subcommand("compare", "Holdout comparison of several methods");
  auto* cv = app.add_subcommand("cv", "L1 grid search over alpha and beta");
  for (auto* s : {gen, fit, evaluate, compare, cv}) add_common(s, flags);
  compare->add_flag("--sparsity", sparsity, "Also tabulate reconstruction non-zero counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    const std::optional<std::string> default_methods =
        active == compare ? std::optional<std::string>("l1,lxpca,spike_slab,random_baseline")
                          : std::nullopt;
    const ExperimentConfig cfg = build_config(flags, active->remaining(), default_methods);
    if (active == gen) return cmd_generate(cfg);
    if (active == fit) return cmd_fit(cfg);
    if (active == evaluate) return cmd_experiment(cfg, false);
    if (active == compare) return cmd_experiment(cfg, sparsity);
    return cmd_cv(cfg);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
