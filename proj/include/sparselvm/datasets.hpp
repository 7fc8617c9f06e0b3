#pragma once

#include <cstdint>
#include <filesystem>

#include "sparselvm/model_core.hpp"

namespace sparselvm {

struct BlockImagesConfig {
  Index n_images = 100;
  double flip_prob = 0.1;
  double feature_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr Index kBlockImageSide = 6;
inline constexpr Index kBlockImagePixels = kBlockImageSide * kBlockImageSide;
inline constexpr Index kBlockImageFeatures = 4;

struct BlockImages {
  ObservationMatrix data;
  Mask true_z;         // N x 4
  Mask true_features;  // 4 x 36
};

/// The four 3x3 corner blocks of the 6x6 grid, one per row (row-major pixels).
Mask block_features();

/// Each image switches each feature on with feature_prob, ORs the active
/// blocks, then flips every pixel with flip_prob.
BlockImages generate_block_images(const BlockImagesConfig& cfg);

struct SparseCounts {
  ObservationMatrix data;
  Matrix true_mean;  // N x D rate matrix
  Index true_nonzero_count = 0;
};

/// Topic-style Poisson counts: every row loads on one or two of K_true
/// factors with weights in [0.8, 1.2], each factor activates columns at rates
/// in [0.7, 3] so that the expected non-zero fraction of V Theta equals
/// `density`, and x ~ Poisson(V Theta).
SparseCounts generate_sparse_counts(Index N, Index D, Index K_true, double density,
                                    std::uint64_t seed);

/// Values CSV (header col0..col{D-1}, `NA` for missing) plus a JSON sidecar
/// with the family and Gaussian noise variance. Errors carry 1-based file
/// line and 0-based column.
ObservationMatrix load_csv(const std::filesystem::path& values_path,
                           const std::filesystem::path& meta_path);

void save_csv(const ObservationMatrix& data, const std::filesystem::path& values_path,
              const std::filesystem::path& meta_path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

}  // namespace sparselvm
