#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sparselvm/model_core.hpp"

namespace sparselvm {

struct HoldoutSplit {
  /// Source data with the test entries masked as missing.
  ObservationMatrix train;
  std::vector<std::pair<Index, Index>> test_index;
  std::vector<double> test_values;
  std::uint64_t seed = 0;
};

/// `replicates` splits, each holding out round(fraction * observed) entries
/// drawn uniformly without replacement. A draw that empties a row is
/// rejected and redrawn, up to 100 attempts per split.
std::vector<HoldoutSplit> make_splits(const ObservationMatrix& data, double fraction,
                                      int replicates, std::uint64_t seed);

/// -sum(log p) / ln 2. Throws std::invalid_argument naming the first
/// non-finite entry.
double nlp_bits(std::span<const double> log_probs_nats);

double rmse(std::span<const double> predicted, std::span<const double> truth);

struct Prediction {
  std::vector<double> log_prob;
  std::vector<double> mean;
};

/// Plug-in predictive of a point estimate at each test entry.
Prediction predict(const FactorState& state, const HoldoutSplit& split);

/// Monte Carlo predictive: the likelihood is averaged over samples before
/// taking the log.
Prediction predict(std::span<const FactorState> chain, const HoldoutSplit& split);

/// Uniform predictor: every test entry scored at psi = 0.
Prediction predict_baseline(const HoldoutSplit& split);

struct SplitScore {
  double nlp_bits = 0.0;
  double rmse = 0.0;
};

SplitScore score(const Prediction& pred, const HoldoutSplit& split);

struct EvalReport {
  std::vector<SplitScore> per_split;
  double nlp_mean = 0.0;
  double nlp_std = 0.0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
};

/// Mean and sample standard deviation (zero for a single split).
EvalReport summarise(std::vector<SplitScore> per_split);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

}  // namespace sparselvm
