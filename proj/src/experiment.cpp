#include "sparselvm/experiment.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sparselvm/parallel.hpp"

namespace sparselvm {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Reads fields of one JSON object and rejects keys it was never asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: " + where() + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for " + path_ + key + ": " + e.what());
    }
  }

  void get_optional(const std::string& key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    double v = 0.0;
    get(key, v);
    out = v;
  }

  void get_optional(const std::string& key, std::optional<Index>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    Index v = 0;
    get(key, v);
    out = v;
  }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  ObjectReader sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return ObjectReader(j_.contains(key) ? j_.at(key) : empty, path_ + key + ".");
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw std::invalid_argument("config: unknown key " + path_ + item.key());
      }
    }
  }

 private:
  std::string where() const { return path_.empty() ? "root" : path_.substr(0, path_.size() - 1); }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<Method> read_methods(const json& j) {
  std::vector<Method> out;
  if (j.is_string()) {
    for (const auto& s : split_list(j.get<std::string>())) out.push_back(parse_method(s));
  } else if (j.is_array()) {
    for (const auto& e : j) out.push_back(parse_method(e.get<std::string>()));
  } else {
    throw std::invalid_argument("config: methods must be a string or a list of strings");
  }
  return out;
}

std::vector<Index> read_k_list(const json& j) {
  std::vector<Index> out;
  if (j.is_number_integer()) {
    out.push_back(j.get<Index>());
  } else if (j.is_string()) {
    for (const auto& s : split_list(j.get<std::string>())) out.push_back(std::stoll(s));
  } else if (j.is_array()) {
    for (const auto& e : j) out.push_back(e.get<Index>());
  } else {
    throw std::invalid_argument("config: K must be an integer or a list of integers");
  }
  return out;
}

WeakSparseHyper make_weak_hyper(const ExperimentConfig& cfg, const ObservationMatrix& data) {
  WeakSparseHyper h = default_weak_hyper(data.family(), data.cols());
  h.gamma_shape = cfg.gamma_shape;
  h.gamma_scale = cfg.gamma_scale;
  return h;
}

SpikeSlabHyper make_ss_hyper(const ExperimentConfig& cfg, const ObservationMatrix& data) {
  SpikeSlabHyper h = default_spike_slab_hyper(data.family(), data.cols());
  h.e = cfg.ss_e;
  h.f = cfg.ss_f;
  h.ng_mean = cfg.ss_ng_mean;
  h.ng_precision_scale = cfg.ss_ng_precision_scale;
  h.ng_shape = cfg.ss_ng_shape;
  h.ng_rate = cfg.ss_ng_rate;
  h.slice.initial_width = cfg.slice_width;
  return h;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

Method parse_method(std::string_view name) {
  if (name == "l1") return Method::L1;
  if (name == "lxpca") return Method::LXPCA;
  if (name == "nxpca") return Method::NXPCA;
  if (name == "spike_slab") return Method::SpikeSlab;
  if (name == "random_baseline") return Method::RandomBaseline;
  throw std::invalid_argument("unknown method '" + std::string(name) +
                              "' (expected l1, lxpca, nxpca, spike_slab or random_baseline)");
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::L1:
      return "l1";
    case Method::LXPCA:
      return "lxpca";
    case Method::NXPCA:
      return "nxpca";
    case Method::SpikeSlab:
      return "spike_slab";
    case Method::RandomBaseline:
      return "random_baseline";
  }
  return "unknown";
}

bool is_bayesian(Method m) {
  return m == Method::LXPCA || m == Method::NXPCA || m == Method::SpikeSlab;
}

LoadedData load_source(const DataSource& src) {
  if (src.kind == "block_images") {
    return {generate_block_images(src.block).data, std::nullopt};
  }
  if (src.kind == "sparse_counts") {
    auto sc = generate_sparse_counts(src.counts_N, src.counts_D, src.counts_K_true,
                                     src.counts_density, src.counts_seed);
    return {std::move(sc.data), sc.true_nonzero_count};
  }
  if (src.kind == "csv") {
    if (src.csv_values.empty() || src.csv_meta.empty()) {
      throw std::invalid_argument("config: data.csv.values and data.csv.meta are required");
    }
    return {load_csv(src.csv_values, src.csv_meta), src.true_nonzero_count};
  }
  throw std::invalid_argument("config: unknown data source '" + src.kind +
                              "' (expected block_images, sparse_counts or csv)");
}

void ExperimentConfig::validate() const {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw std::invalid_argument("config: holdout_fraction must lie in (0, 1)");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("config: validation_fraction must lie in (0, 1)");
  }
  if (!(holdout_fraction + validation_fraction < 1.0)) {
    throw std::invalid_argument("config: holdout_fraction + validation_fraction must be < 1");
  }
  if (replicates < 1) throw std::invalid_argument("config: replicates must be >= 1");
  if (methods.empty()) throw std::invalid_argument("config: no methods given");
  if (k_list.empty()) throw std::invalid_argument("config: K list is empty");
  for (Index k : k_list) {
    if (k < 1) throw std::invalid_argument("config: every K must be >= 1");
  }
  if (alpha_grid.empty() || beta_grid.empty()) {
    throw std::invalid_argument("config: alpha_grid and beta_grid must be non-empty");
  }
  if (time_budget_seconds && !(*time_budget_seconds > 0.0)) {
    throw std::invalid_argument("config: time_budget_seconds must be positive");
  }
  if (!(nonzero_threshold > 0.0)) {
    throw std::invalid_argument("config: nonzero_threshold must be positive");
  }
  l1.validate();
  hmc.validate();
  spike_slab.validate();
  if (!(slice_width > 0.0)) throw std::invalid_argument("config: slice_width must be positive");
}

json config_to_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(std::string(method_name(m)));
  json j;
  j["data"] = {
      {"source", c.data.kind},
      {"block_images",
       {{"n_images", c.data.block.n_images},
        {"flip_prob", c.data.block.flip_prob},
        {"feature_prob", c.data.block.feature_prob},
        {"seed", c.data.block.seed}}},
      {"sparse_counts",
       {{"N", c.data.counts_N},
        {"D", c.data.counts_D},
        {"K_true", c.data.counts_K_true},
        {"density", c.data.counts_density},
        {"seed", c.data.counts_seed}}},
      {"csv", {{"values", c.data.csv_values}, {"meta", c.data.csv_meta}}},
      {"true_nonzero_count",
       c.data.true_nonzero_count ? json(*c.data.true_nonzero_count) : json(nullptr)},
  };
  j["methods"] = methods;
  j["K"] = c.k_list;
  j["holdout_fraction"] = c.holdout_fraction;
  j["replicates"] = c.replicates;
  j["validation_fraction"] = c.validation_fraction;
  j["seed"] = c.seed;
  j["time_budget_seconds"] = c.time_budget_seconds ? json(*c.time_budget_seconds) : json(nullptr);
  j["workers"] = c.workers;
  j["save_chain"] = c.save_chain;
  j["report_timing"] = c.report_timing;
  j["nonzero_threshold"] = c.nonzero_threshold;
  j["out_dir"] = c.out_dir;
  j["l1"] = {
      {"alpha_grid", c.alpha_grid},
      {"beta_grid", c.beta_grid},
      {"regulariser", std::string(regulariser_name(c.l1.regulariser))},
      {"max_outer_iters", c.l1.max_outer_iters},
      {"inner_iters", c.l1.inner_iters},
      {"rel_tol", c.l1.rel_tol},
      {"init_scale", c.l1.init_scale},
  };
  j["hmc"] = {
      {"leapfrog_steps", c.hmc.leapfrog_steps},
      {"step_size", c.hmc.step_size},
      {"adapt_target", c.hmc.adapt_target},
      {"burn_in", c.hmc.burn_in},
      {"keep", c.hmc.keep},
      {"thin", c.hmc.thin},
      {"gamma_shape", c.gamma_shape},
      {"gamma_scale", c.gamma_scale},
  };
  j["spike_slab"] = {
      {"burn_in", c.spike_slab.chain.burn_in},
      {"keep", c.spike_slab.chain.keep},
      {"thin", c.spike_slab.chain.thin},
      {"random_scan", c.spike_slab.random_scan},
      {"slab_slice_steps", c.spike_slab.slab_slice_steps},
      {"threads", c.spike_slab.threads},
      {"e", c.ss_e},
      {"f", c.ss_f},
      {"ng_mean", c.ss_ng_mean},
      {"ng_precision_scale", c.ss_ng_precision_scale},
      {"ng_shape", c.ss_ng_shape},
      {"ng_rate", c.ss_ng_rate},
      {"slice_width", c.slice_width},
  };
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader root(j, "");
  {
    auto d = root.sub("data");
    d.get("source", c.data.kind);
    auto b = d.sub("block_images");
    b.get("n_images", c.data.block.n_images);
    b.get("flip_prob", c.data.block.flip_prob);
    b.get("feature_prob", c.data.block.feature_prob);
    b.get("seed", c.data.block.seed);
    b.finish();
    auto s = d.sub("sparse_counts");
    s.get("N", c.data.counts_N);
    s.get("D", c.data.counts_D);
    s.get("K_true", c.data.counts_K_true);
    s.get("density", c.data.counts_density);
    s.get("seed", c.data.counts_seed);
    s.finish();
    auto f = d.sub("csv");
    f.get("values", c.data.csv_values);
    f.get("meta", c.data.csv_meta);
    f.finish();
    d.get_optional("true_nonzero_count", c.data.true_nonzero_count);
    d.finish();
  }
  if (const json* m = root.raw("methods")) c.methods = read_methods(*m);
  if (const json* k = root.raw("K")) c.k_list = read_k_list(*k);
  root.get("holdout_fraction", c.holdout_fraction);
  root.get("replicates", c.replicates);
  root.get("validation_fraction", c.validation_fraction);
  root.get("seed", c.seed);
  root.get_optional("time_budget_seconds", c.time_budget_seconds);
  root.get("workers", c.workers);
  root.get("save_chain", c.save_chain);
  root.get("report_timing", c.report_timing);
  root.get("nonzero_threshold", c.nonzero_threshold);
  root.get("out_dir", c.out_dir);
  {
    auto l = root.sub("l1");
    l.get("alpha_grid", c.alpha_grid);
    l.get("beta_grid", c.beta_grid);
    std::string reg(regulariser_name(c.l1.regulariser));
    l.get("regulariser", reg);
    c.l1.regulariser = parse_regulariser(reg);
    l.get("max_outer_iters", c.l1.max_outer_iters);
    l.get("inner_iters", c.l1.inner_iters);
    l.get("rel_tol", c.l1.rel_tol);
    l.get("init_scale", c.l1.init_scale);
    l.finish();
  }
  {
    auto h = root.sub("hmc");
    h.get("leapfrog_steps", c.hmc.leapfrog_steps);
    h.get("step_size", c.hmc.step_size);
    h.get("adapt_target", c.hmc.adapt_target);
    h.get("burn_in", c.hmc.burn_in);
    h.get("keep", c.hmc.keep);
    h.get("thin", c.hmc.thin);
    h.get("gamma_shape", c.gamma_shape);
    h.get("gamma_scale", c.gamma_scale);
    h.finish();
  }
  {
    auto s = root.sub("spike_slab");
    s.get("burn_in", c.spike_slab.chain.burn_in);
    s.get("keep", c.spike_slab.chain.keep);
    s.get("thin", c.spike_slab.chain.thin);
    s.get("random_scan", c.spike_slab.random_scan);
    s.get("slab_slice_steps", c.spike_slab.slab_slice_steps);
    s.get("threads", c.spike_slab.threads);
    s.get("e", c.ss_e);
    s.get("f", c.ss_f);
    s.get("ng_mean", c.ss_ng_mean);
    s.get("ng_precision_scale", c.ss_ng_precision_scale);
    s.get("ng_shape", c.ss_ng_shape);
    s.get("ng_rate", c.ss_ng_rate);
    s.get("slice_width", c.slice_width);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

void apply_override(json& j, const std::string& dotted_key, const std::string& value) {
  json* node = &j;
  std::stringstream ss(dotted_key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) {
      throw std::invalid_argument("unknown config key '" + dotted_key + "'");
    }
    node = &(*node)[part];
  }
  json parsed = json::parse(value, nullptr, false);
  *node = parsed.is_discarded() ? json(value) : parsed;
}

bool ExperimentResult::ok() const {
  for (const auto& r : rows) {
    if (r.failed) return false;
  }
  return true;
}

std::uint64_t task_seed(std::uint64_t seed, Method m, Index K, int split_id) {
  return derive_seed(seed, {0x7A5C, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(K),
                            static_cast<std::uint64_t>(split_id)});
}

FitOutput fit_method(Method method, const ObservationMatrix& train, Index K,
                     const ExperimentConfig& cfg, std::uint64_t seed) {
  FitOutput out;
  const auto t0 = Clock::now();
  switch (method) {
    case Method::RandomBaseline:
      break;
    case Method::L1: {
      L1Config lc = cfg.l1;
      lc.seed = seed;
      auto cv = cross_validate(train, K, cfg.alpha_grid, cfg.beta_grid, lc, cfg.validation_fraction);
      out.converged = cv.best_fit.converged;
      out.states.push_back(std::move(cv.best_fit.state));
      break;
    }
    case Method::LXPCA:
    case Method::NXPCA: {
      HmcConfig hc = cfg.hmc;
      hc.seed = seed;
      hc.time_budget_seconds = cfg.time_budget_seconds;
      const auto prior = method == Method::LXPCA ? WeakPrior::Laplace : WeakPrior::Exponential;
      auto chain = hmc_fit(train, K, make_weak_hyper(cfg, train), prior, hc);
      out.converged = !chain.diagnostics.budget_exhausted && chain.diagnostics.warnings.empty();
      out.warnings = chain.diagnostics.warnings;
      for (const auto& s : chain.samples) out.states.push_back(s.factor);
      out.weak_chain = std::move(chain);
      break;
    }
    case Method::SpikeSlab: {
      SpikeSlabConfig sc = cfg.spike_slab;
      sc.chain.seed = seed;
      sc.chain.time_budget_seconds = cfg.time_budget_seconds;
      auto chain = fit_spike_slab(train, K, make_ss_hyper(cfg, train), sc);
      out.converged = !chain.diagnostics.budget_exhausted;
      if (chain.diagnostics.slab_fallbacks > 0) {
        out.warnings.push_back(std::to_string(chain.diagnostics.slab_fallbacks) +
                               " slab weights fell back to quadrature");
      }
      for (const auto& s : chain.samples) out.states.push_back(s.factor);
      out.ss_chain = std::move(chain);
      break;
    }
  }
  out.wall_seconds = seconds_since(t0);
  return out;
}

void write_chain_csv(const std::filesystem::path& path, const ObservationMatrix& train,
                     const FitOutput& fit, const ExperimentConfig& cfg) {
  if (!fit.weak_chain && !fit.ss_chain) return;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const FactorState& f0 = fit.states.front();
  const Index N = f0.V.rows();
  const Index K = f0.V.cols();
  const Index D = f0.Theta.cols();
  for (Index n = 0; n < N; ++n) {
    for (Index k = 0; k < K; ++k) out << "v_" << n << "_" << k << ",";
  }
  for (Index k = 0; k < K; ++k) {
    for (Index d = 0; d < D; ++d) out << "theta_" << k << "_" << d << ",";
  }
  if (fit.weak_chain) {
    for (Index k = 0; k < K; ++k) out << "b_" << k << ",";
  } else {
    for (Index k = 0; k < K; ++k) out << "pi_" << k << ",mu_" << k << ",sigma2_" << k << ",";
    out << "nnz_z,";
  }
  out << "log_joint\n";
  auto write_factor = [&](const FactorState& f) {
    for (Index n = 0; n < N; ++n) {
      for (Index k = 0; k < K; ++k) out << format_double(f.V(n, k)) << ",";
    }
    for (Index k = 0; k < K; ++k) {
      for (Index d = 0; d < D; ++d) out << format_double(f.Theta(k, d)) << ",";
    }
  };
  if (fit.weak_chain) {
    const auto hyper = make_weak_hyper(cfg, train);
    for (const auto& s : fit.weak_chain->samples) {
      write_factor(s.factor);
      for (Index k = 0; k < K; ++k) out << format_double(s.b[k]) << ",";
      out << format_double(log_joint(train, s, hyper).value) << "\n";
    }
  } else {
    const auto hyper = make_ss_hyper(cfg, train);
    for (const auto& s : fit.ss_chain->samples) {
      write_factor(s.factor);
      for (Index k = 0; k < K; ++k) {
        out << format_double(s.pi[k]) << "," << format_double(s.mu[k]) << ","
            << format_double(s.sigma2[k]) << ",";
      }
      out << s.Z.count() << "," << format_double(spike_slab_log_joint(train, s, hyper)) << "\n";
    }
  }
}

std::string report_csv(const std::vector<ReportRow>& rows, bool report_timing) {
  std::ostringstream os;
  os << "method,family,K,split_id,nlp_bits,rmse,wall_seconds,converged\n";
  for (const auto& r : rows) {
    os << method_name(r.method) << ',' << family_name(r.family) << ',' << r.K << ','
       << r.split_id << ',';
    if (r.failed) {
      os << "NA,NA,";
    } else {
      os << format_double(r.nlp_bits) << ',' << format_double(r.rmse) << ',';
    }
    os << format_double(report_timing ? r.wall_seconds : 0.0) << ',';
    os << (r.failed ? "error" : (r.converged ? "true" : "false")) << '\n';
  }
  return os.str();
}

json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result) {
  json results = json::array();
  for (const auto& s : result.summary) {
    json warnings = json::array();
    json errors = json::array();
    for (const auto& r : result.rows) {
      if (r.method != s.method || r.K != s.K) continue;
      for (const auto& w : r.warnings) {
        warnings.push_back("split " + std::to_string(r.split_id) + ": " + w);
      }
      if (r.failed) errors.push_back("split " + std::to_string(r.split_id) + ": " + r.error);
    }
    results.push_back({
        {"method", std::string(method_name(s.method))},
        {"K", s.K},
        {"replicates", s.report.per_split.size()},
        {"failures", s.failures},
        {"nlp_bits", {{"mean", s.report.nlp_mean}, {"std", s.report.nlp_std}}},
        {"rmse", {{"mean", s.report.rmse_mean}, {"std", s.report.rmse_std}}},
        {"warnings", warnings},
        {"errors", errors},
    });
  }
  return {{"config", config_to_json(cfg)}, {"results", results}, {"ok", result.ok()}};
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const LoadedData loaded = load_source(cfg.data);
  const ObservationMatrix& data = loaded.data;
  const auto splits = make_splits(data, cfg.holdout_fraction, cfg.replicates, cfg.seed);
  const std::filesystem::path out_dir = cfg.out_dir;
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(out_dir);

  struct Task {
    Method method;
    Index K;
    int split;
  };
  std::vector<Task> tasks;
  for (Method m : cfg.methods) {
    // The baseline ignores K; one stratum per K keeps the report rectangular.
    for (Index K : cfg.k_list) {
      for (int s = 0; s < cfg.replicates; ++s) tasks.push_back({m, K, s});
    }
  }

  ExperimentResult result;
  result.rows.resize(tasks.size());
  parallel_for(tasks.size(), cfg.workers, [&](std::size_t i) {
    const Task& t = tasks[i];
    const HoldoutSplit& split = splits[static_cast<std::size_t>(t.split)];
    ReportRow& row = result.rows[i];
    row.method = t.method;
    row.family = data.family().kind;
    row.K = t.K;
    row.split_id = t.split;
    try {
      if (t.method == Method::RandomBaseline) {
        const auto t0 = Clock::now();
        const auto sc = score(predict_baseline(split), split);
        row.nlp_bits = sc.nlp_bits;
        row.rmse = sc.rmse;
        row.converged = true;
        row.wall_seconds = seconds_since(t0);
        return;
      }
      const FitOutput fit =
          fit_method(t.method, split.train, t.K, cfg, task_seed(cfg.seed, t.method, t.K, t.split));
      const auto sc = score(predict(std::span<const FactorState>(fit.states), split), split);
      row.nlp_bits = sc.nlp_bits;
      row.rmse = sc.rmse;
      row.converged = fit.converged;
      row.wall_seconds = fit.wall_seconds;
      row.warnings = fit.warnings;
      if (cfg.save_chain && !cfg.out_dir.empty() && is_bayesian(t.method)) {
        const auto dir =
            out_dir / (std::string(method_name(t.method)) + "_K" + std::to_string(t.K));
        std::filesystem::create_directories(dir);
        write_chain_csv(dir / ("chain_" + std::to_string(t.split) + ".csv"), split.train, fit, cfg);
      }
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
  });

  for (Method m : cfg.methods) {
    for (Index K : cfg.k_list) {
      MethodSummary s{m, K, {}, 0};
      std::vector<SplitScore> scores;
      for (const auto& r : result.rows) {
        if (r.method != m || r.K != K) continue;
        if (r.failed) {
          ++s.failures;
        } else {
          scores.push_back({r.nlp_bits, r.rmse});
        }
      }
      s.report = summarise(std::move(scores));
      result.summary.push_back(std::move(s));
    }
  }

  if (!cfg.out_dir.empty()) {
    write_text(out_dir / "report.csv", report_csv(result.rows, cfg.report_timing));
    write_text(out_dir / "summary.json", summary_json(cfg, result).dump(2) + "\n");
    for (const std::string metric : {"nlp_bits", "rmse"}) {
      std::ostringstream os;
      os << "K,method,mean,std\n";
      for (const auto& s : result.summary) {
        const bool nlp = metric == "nlp_bits";
        os << s.K << ',' << method_name(s.method) << ','
           << format_double(nlp ? s.report.nlp_mean : s.report.rmse_mean) << ','
           << format_double(nlp ? s.report.nlp_std : s.report.rmse_std) << '\n';
      }
      write_text(out_dir / ("plotdata_" + metric + ".csv"), os.str());
    }
  }
  return result;
}

Index count_nonzero(const Matrix& mean, double threshold) {
  return static_cast<Index>((mean.array() >= threshold).count());
}

Matrix reconstruction_mean(std::span<const FactorState> states, const FamilySpec& fam) {
  if (states.empty()) throw std::invalid_argument("reconstruction_mean: no states");
  Matrix acc = Matrix::Zero(states.front().V.rows(), states.front().Theta.cols());
  for (const auto& s : states) {
    acc += natural_params(s).unaryExpr([&](double p) { return mean_function(fam, p); });
  }
  return acc / static_cast<double>(states.size());
}

SparsityResult run_sparsity_recovery(const ExperimentConfig& cfg) {
  cfg.validate();
  const LoadedData loaded = load_source(cfg.data);
  if (!loaded.true_nonzero_count) {
    throw std::invalid_argument(
        "sparsity recovery needs a known true non-zero count (sparse_counts source or "
        "data.true_nonzero_count)");
  }
  const ObservationMatrix& data = loaded.data;
  const auto splits = make_splits(data, cfg.holdout_fraction, cfg.replicates, cfg.seed);

  struct Task {
    std::size_t row;
    int split;
  };
  SparsityResult result;
  result.true_count = *loaded.true_nonzero_count;
  std::vector<Task> tasks;
  for (Method m : cfg.methods) {
    if (m == Method::RandomBaseline) continue;
    for (Index K : cfg.k_list) {
      result.rows.push_back({m, K, std::vector<Index>(static_cast<std::size_t>(cfg.replicates)), 0, 0});
      for (int s = 0; s < cfg.replicates; ++s) tasks.push_back({result.rows.size() - 1, s});
    }
  }
  parallel_for(tasks.size(), cfg.workers, [&](std::size_t i) {
    const Task& t = tasks[i];
    SparsityRow& row = result.rows[t.row];
    const auto& split = splits[static_cast<std::size_t>(t.split)];
    const FitOutput fit = fit_method(row.method, split.train, row.K, cfg,
                                     task_seed(cfg.seed, row.method, row.K, t.split));
    row.counts[static_cast<std::size_t>(t.split)] = count_nonzero(
        reconstruction_mean(std::span<const FactorState>(fit.states), data.family()),
        cfg.nonzero_threshold);
  });
  for (auto& row : result.rows) {
    std::vector<double> c(row.counts.begin(), row.counts.end());
    const auto ms = mean_std(c);
    row.mean = ms.mean;
    row.std = ms.std;
  }
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ostringstream os;
    os << "K,method,mean,std,true_count\n";
    for (const auto& r : result.rows) {
      os << r.K << ',' << method_name(r.method) << ',' << format_double(r.mean) << ','
         << format_double(r.std) << ',' << result.true_count << '\n';
    }
    write_text(std::filesystem::path(cfg.out_dir) / "sparsity.csv", os.str());
  }
  return result;
}

}  // namespace sparselvm
