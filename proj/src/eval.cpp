#include "sparselvm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "sparselvm/random.hpp"

namespace sparselvm {

namespace {

constexpr int kMaxSplitAttempts = 100;

}  // namespace

std::vector<HoldoutSplit> make_splits(const ObservationMatrix& data, double fraction,
                                      int replicates, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("make_splits: fraction must lie in (0, 1)");
  }
  if (replicates < 1) throw std::invalid_argument("make_splits: replicates must be >= 1");

  std::vector<std::pair<Index, Index>> observed;
  for (Index n = 0; n < data.rows(); ++n) {
    for (Index d = 0; d < data.cols(); ++d) {
      if (data.is_observed(n, d)) observed.emplace_back(n, d);
    }
  }
  const auto n_test =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(observed.size())));

  std::vector<HoldoutSplit> splits;
  splits.reserve(static_cast<std::size_t>(replicates));
  for (int r = 0; r < replicates; ++r) {
    const std::uint64_t split_seed = derive_seed(seed, {static_cast<std::uint64_t>(r)});
    Rng rng(split_seed);
    std::vector<std::pair<Index, Index>> chosen;
    Mask mask;
    bool ok = false;
    for (int attempt = 0; attempt < kMaxSplitAttempts && !ok; ++attempt) {
      auto pool = observed;
      // Partial Fisher-Yates: the first n_test entries are the sample.
      for (std::size_t i = 0; i < n_test; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_test));
      mask = data.observed();
      for (const auto& [n, d] : chosen) mask(n, d) = false;
      ok = true;
      for (Index n = 0; n < data.rows() && ok; ++n) {
        if (data.observed().row(n).any() && !mask.row(n).any()) ok = false;
      }
    }
    if (!ok) {
      throw std::runtime_error("make_splits: split infeasible, every draw of " +
                               std::to_string(n_test) + " test entries left a row empty");
    }
    std::sort(chosen.begin(), chosen.end());
    HoldoutSplit split{data.with_mask(std::move(mask)), chosen, {}, split_seed};
    split.test_values.reserve(chosen.size());
    for (const auto& [n, d] : chosen) split.test_values.push_back(data.value(n, d));
    splits.push_back(std::move(split));
  }
  return splits;
}

double nlp_bits(std::span<const double> log_probs_nats) {
  if (log_probs_nats.empty()) throw std::invalid_argument("nlp_bits: no log-probabilities");
  double total = 0.0;
  for (std::size_t i = 0; i < log_probs_nats.size(); ++i) {
    if (!std::isfinite(log_probs_nats[i])) {
      throw std::invalid_argument("nlp_bits: non-finite log-probability at test index " +
                                  std::to_string(i));
    }
    total -= log_probs_nats[i] / std::numbers::ln2;
  }
  return total;
}

double rmse(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("rmse: " + std::to_string(predicted.size()) +
                                " predictions for " + std::to_string(truth.size()) + " values");
  }
  if (predicted.empty()) throw std::invalid_argument("rmse: no values");
  double ss = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double r = predicted[i] - truth[i];
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(predicted.size()));
}

Prediction predict(const FactorState& state, const HoldoutSplit& split) {
  return predict(std::span<const FactorState>(&state, 1), split);
}

Prediction predict(std::span<const FactorState> chain, const HoldoutSplit& split) {
  if (chain.empty()) throw std::invalid_argument("predict: empty chain");
  for (const auto& s : chain) s.check_against(split.train);
  const auto& fam = split.train.family();
  const std::size_t m = split.test_index.size();
  const double log_s = std::log(static_cast<double>(chain.size()));
  Prediction out;
  out.log_prob.resize(m);
  out.mean.resize(m);
  std::vector<double> terms(chain.size());
  for (std::size_t i = 0; i < m; ++i) {
    const auto [n, d] = split.test_index[i];
    const double x = split.test_values[i];
    double mean = 0.0;
    for (std::size_t s = 0; s < chain.size(); ++s) {
      const double psi = chain[s].V.row(n).dot(chain[s].Theta.col(d));
      terms[s] = log_prob_unchecked(fam, x, psi);
      mean += mean_function(fam, psi);
    }
    const double top = *std::max_element(terms.begin(), terms.end());
    double acc = 0.0;
    if (std::isfinite(top)) {
      for (double t : terms) acc += std::exp(t - top);
      out.log_prob[i] = top + std::log(acc) - log_s;
    } else {
      out.log_prob[i] = top;
    }
    out.mean[i] = mean / static_cast<double>(chain.size());
  }
  return out;
}

Prediction predict_baseline(const HoldoutSplit& split) {
  const auto& fam = split.train.family();
  Prediction out;
  for (double x : split.test_values) {
    out.log_prob.push_back(log_prob_unchecked(fam, x, 0.0));
    out.mean.push_back(mean_function(fam, 0.0));
  }
  return out;
}

SplitScore score(const Prediction& pred, const HoldoutSplit& split) {
  if (split.test_values.empty()) return {};
  return {nlp_bits(pred.log_prob), rmse(pred.mean, split.test_values)};
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

EvalReport summarise(std::vector<SplitScore> per_split) {
  EvalReport r;
  std::vector<double> nlp;
  std::vector<double> err;
  for (const auto& s : per_split) {
    nlp.push_back(s.nlp_bits);
    err.push_back(s.rmse);
  }
  const auto a = mean_std(nlp);
  const auto b = mean_std(err);
  r.nlp_mean = a.mean;
  r.nlp_std = a.std;
  r.rmse_mean = b.mean;
  r.rmse_std = b.std;
  r.per_split = std::move(per_split);
  return r;
}

}  // namespace sparselvm
