#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparselvm/datasets.hpp"
#include "sparselvm/eval.hpp"
#include "sparselvm/l1_solver.hpp"
#include "sparselvm/spike_slab.hpp"
#include "sparselvm/weak_bayes.hpp"

namespace sparselvm {

enum class Method { L1, LXPCA, NXPCA, SpikeSlab, RandomBaseline };

Method parse_method(std::string_view name);
std::string_view method_name(Method m);
bool is_bayesian(Method m);

struct DataSource {
  /// "block_images", "sparse_counts" or "csv".
  std::string kind = "block_images";
  BlockImagesConfig block;
  Index counts_N = 100;
  Index counts_D = 200;
  Index counts_K_true = 5;
  double counts_density = 0.07;
  std::uint64_t counts_seed = 0;
  std::string csv_values;
  std::string csv_meta;
  /// Known truth for user-supplied files in sparsity recovery.
  std::optional<Index> true_nonzero_count;
};

struct LoadedData {
  ObservationMatrix data;
  std::optional<Index> true_nonzero_count;
};

LoadedData load_source(const DataSource& src);

struct ExperimentConfig {
  DataSource data;
  std::vector<Method> methods{Method::SpikeSlab};
  std::vector<Index> k_list{4};
  double holdout_fraction = 0.10;
  int replicates = 20;
  double validation_fraction = 0.05;
  std::uint64_t seed = 0;
  /// Applies to the sampling methods; counts fitting time only.
  std::optional<double> time_budget_seconds;
  unsigned workers = 1;
  bool save_chain = false;
  /// When false, wall_seconds is written as 0 so reports are byte-identical.
  bool report_timing = true;
  double nonzero_threshold = 0.5;
  std::string out_dir;

  std::vector<double> alpha_grid{0.1, 0.3, 1.0, 3.0};
  std::vector<double> beta_grid{1.0, 10.0, 100.0};
  /// Unit-scale start: the solver's 0.01 default leaves every fit on the
  /// block-images benchmark at V = 0 once alpha exceeds about 0.03.
  L1Config l1 = [] {
    L1Config c;
    c.init_scale = 1.0;
    return c;
  }();

  HmcConfig hmc;
  double gamma_shape = 1.0;
  double gamma_scale = 1.0;

  SpikeSlabConfig spike_slab;
  double ss_e = 1.0;
  double ss_f = 1.0;
  double ss_ng_mean = 0.0;
  double ss_ng_precision_scale = 1.0;
  double ss_ng_shape = 1.0;
  double ss_ng_rate = 1.0;
  double slice_width = 1.0;

  void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Reads a config from JSON, filling absent fields with defaults. Unknown
/// keys are an error.
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Sets a dotted key (e.g. "spike_slab.burn_in") in a config JSON. The value
/// text is parsed as JSON when possible and used as a string otherwise. The
/// key must already exist.
void apply_override(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

struct ReportRow {
  Method method;
  Family family;
  Index K;
  int split_id;
  double nlp_bits = 0.0;
  double rmse = 0.0;
  double wall_seconds = 0.0;
  bool converged = false;
  bool failed = false;
  std::string error;
  std::vector<std::string> warnings;
};

struct MethodSummary {
  Method method;
  Index K;
  EvalReport report;
  int failures = 0;
};

struct ExperimentResult {
  std::vector<ReportRow> rows;
  std::vector<MethodSummary> summary;
  bool ok() const;
};

/// One fitted model on one split, ready for prediction.
struct FitOutput {
  std::vector<FactorState> states;
  bool converged = true;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;
  std::optional<WeakChain> weak_chain;
  std::optional<SpikeSlabChain> ss_chain;
};

/// Fits `method` on the split's training matrix.
FitOutput fit_method(Method method, const ObservationMatrix& train, Index K,
                     const ExperimentConfig& cfg, std::uint64_t seed);

/// Seed of the (method, K, split) task.
std::uint64_t task_seed(std::uint64_t seed, Method m, Index K, int split_id);

/// Runs every (method, K, split) task and, when out_dir is set, writes
/// report.csv, summary.json, plotdata_nlp_bits.csv, plotdata_rmse.csv and
/// optional chain dumps.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::string report_csv(const std::vector<ReportRow>& rows, bool report_timing);
nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result);

/// Entries of `mean` at or above `threshold`.
Index count_nonzero(const Matrix& mean, double threshold);

/// Reconstructed mean matrix: mean_function(V Theta), averaged over samples.
Matrix reconstruction_mean(std::span<const FactorState> states, const FamilySpec& fam);

struct SparsityRow {
  Method method;
  Index K;
  std::vector<Index> counts;
  double mean = 0.0;
  double std = 0.0;
};

struct SparsityResult {
  Index true_count = 0;
  std::vector<SparsityRow> rows;
};

/// Non-zero counts of each method's reconstruction over the replicate
/// splits. Writes sparsity.csv when out_dir is set.
SparsityResult run_sparsity_recovery(const ExperimentConfig& cfg);

void write_chain_csv(const std::filesystem::path& path, const ObservationMatrix& train,
                     const FitOutput& fit, const ExperimentConfig& cfg);

}  // namespace sparselvm
