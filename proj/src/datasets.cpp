#include "sparselvm/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparselvm/random.hpp"

namespace sparselvm {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void load_error(const std::filesystem::path& path, std::size_t line, Index col,
                             const std::string& what) {
  std::ostringstream os;
  os << path.string() << ": line " << line;
  if (col >= 0) os << ", column " << col;
  os << ": " << what;
  throw std::runtime_error(os.str());
}

}  // namespace

void BlockImagesConfig::validate() const {
  if (n_images < 1) throw std::invalid_argument("block images: n_images must be positive");
  if (!(flip_prob >= 0.0 && flip_prob < 1.0)) {
    throw std::invalid_argument("block images: flip_prob must lie in [0, 1)");
  }
  if (!(feature_prob > 0.0 && feature_prob < 1.0)) {
    throw std::invalid_argument("block images: feature_prob must lie in (0, 1)");
  }
}

Mask block_features() {
  Mask f = Mask::Constant(kBlockImageFeatures, kBlockImagePixels, false);
  const Index half = kBlockImageSide / 2;
  for (Index k = 0; k < kBlockImageFeatures; ++k) {
    const Index r0 = (k / 2) * half;
    const Index c0 = (k % 2) * half;
    for (Index r = r0; r < r0 + half; ++r) {
      for (Index c = c0; c < c0 + half; ++c) f(k, r * kBlockImageSide + c) = true;
    }
  }
  return f;
}

BlockImages generate_block_images(const BlockImagesConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Mask features = block_features();
  Mask z(cfg.n_images, kBlockImageFeatures);
  Matrix x = Matrix::Zero(cfg.n_images, kBlockImagePixels);
  for (Index n = 0; n < cfg.n_images; ++n) {
    for (Index k = 0; k < kBlockImageFeatures; ++k) z(n, k) = draw_bernoulli(rng, cfg.feature_prob);
    for (Index p = 0; p < kBlockImagePixels; ++p) {
      bool on = false;
      for (Index k = 0; k < kBlockImageFeatures; ++k) on = on || (z(n, k) && features(k, p));
      if (draw_bernoulli(rng, cfg.flip_prob)) on = !on;
      x(n, p) = on ? 1.0 : 0.0;
    }
  }
  return {ObservationMatrix(std::move(x), FamilySpec::bernoulli()), std::move(z), features};
}

SparseCounts generate_sparse_counts(Index N, Index D, Index K_true, double density,
                                    std::uint64_t seed) {
  if (N < 1 || D < 1 || K_true < 1) {
    throw std::invalid_argument("sparse counts: N, D and K_true must be positive");
  }
  if (!(density > 0.0 && density < 1.0)) {
    throw std::invalid_argument("sparse counts: density must lie in (0, 1)");
  }
  Rng rng(seed);
  // Rows use one or two topics with equal probability; q solves
  // 1 - E[(1 - q)^m] = density for the column activation probability.
  const Index max_topics = std::min<Index>(2, K_true);
  const double q = max_topics == 1
                       ? density
                       : 1.0 - 0.5 * (-1.0 + std::sqrt(1.0 + 8.0 * (1.0 - density)));
  Matrix V = Matrix::Zero(N, K_true);
  std::vector<Index> topics(static_cast<std::size_t>(K_true));
  for (Index n = 0; n < N; ++n) {
    std::iota(topics.begin(), topics.end(), Index{0});
    std::shuffle(topics.begin(), topics.end(), rng);
    const Index m = max_topics == 1 ? 1 : 1 + static_cast<Index>(draw_bernoulli(rng, 0.5));
    for (Index j = 0; j < m; ++j) V(n, topics[j]) = 0.8 + 0.4 * draw_uniform(rng);
  }
  Matrix T = Matrix::Zero(K_true, D);
  for (Index k = 0; k < K_true; ++k) {
    for (Index d = 0; d < D; ++d) {
      if (draw_bernoulli(rng, q)) T(k, d) = 0.7 + 2.3 * draw_uniform(rng);
    }
  }
  SparseCounts out{ObservationMatrix(Matrix::Zero(N, D), FamilySpec::poisson()), V * T, 0};
  Matrix x(N, D);
  for (Index n = 0; n < N; ++n) {
    for (Index d = 0; d < D; ++d) {
      const double m = out.true_mean(n, d);
      x(n, d) = m > 0.0 ? static_cast<double>(std::poisson_distribution<long>(m)(rng)) : 0.0;
      if (m > 0.0) ++out.true_nonzero_count;
    }
  }
  out.data = ObservationMatrix(std::move(x), FamilySpec::poisson());
  return out;
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

ObservationMatrix load_csv(const std::filesystem::path& values_path,
                           const std::filesystem::path& meta_path) {
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw std::runtime_error("cannot open metadata file " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(meta_path.string() + ": " + e.what());
  }
  if (!meta.contains("family") || !meta["family"].is_string()) {
    throw std::runtime_error(meta_path.string() + ": missing string field \"family\"");
  }
  FamilySpec fam;
  try {
    fam.kind = parse_family(meta["family"].get<std::string>());
  } catch (const std::exception& e) {
    throw std::runtime_error(meta_path.string() + ": " + e.what());
  }
  if (meta.contains("gaussian_noise_variance")) {
    if (!meta["gaussian_noise_variance"].is_number()) {
      throw std::runtime_error(meta_path.string() + ": gaussian_noise_variance must be a number");
    }
    fam.gaussian_noise_variance = meta["gaussian_noise_variance"].get<double>();
  }
  fam.validate();

  std::ifstream in(values_path);
  if (!in) throw std::runtime_error("cannot open values file " + values_path.string());
  std::string line;
  if (!std::getline(in, line)) load_error(values_path, 1, -1, "missing header");
  const auto header = split_fields(line);
  const auto D = static_cast<Index>(header.size());
  for (Index d = 0; d < D; ++d) {
    if (header[d] != "col" + std::to_string(d)) {
      load_error(values_path, 1, d, "expected header field col" + std::to_string(d));
    }
  }
  std::vector<std::vector<double>> vals;
  std::vector<std::vector<bool>> obs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (static_cast<Index>(fields.size()) != D) {
      load_error(values_path, line_no, -1,
                 "expected " + std::to_string(D) + " fields, found " +
                     std::to_string(fields.size()));
    }
    std::vector<double> row(D, 0.0);
    std::vector<bool> row_obs(D, true);
    for (Index d = 0; d < D; ++d) {
      const std::string& f = fields[d];
      if (f == "NA") {
        row_obs[d] = false;
        continue;
      }
      double v = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size() ||
          !std::isfinite(v)) {
        load_error(values_path, line_no, d, "malformed cell '" + f + "'");
      }
      if (!in_support(fam, v)) {
        load_error(values_path, line_no, d,
                   "value " + f + " outside the " + std::string(family_name(fam.kind)) +
                       " support");
      }
      row[d] = v;
    }
    vals.push_back(std::move(row));
    obs.push_back(std::move(row_obs));
  }
  const auto N = static_cast<Index>(vals.size());
  Matrix x(N, D);
  Mask m(N, D);
  for (Index n = 0; n < N; ++n) {
    for (Index d = 0; d < D; ++d) {
      x(n, d) = vals[n][d];
      m(n, d) = obs[n][d];
    }
  }
  ObservationMatrix out(std::move(x), std::move(m), fam);
  out.require_observed_rows();
  return out;
}

void save_csv(const ObservationMatrix& data, const std::filesystem::path& values_path,
              const std::filesystem::path& meta_path) {
  std::ofstream out(values_path);
  if (!out) throw std::runtime_error("cannot write " + values_path.string());
  for (Index d = 0; d < data.cols(); ++d) out << (d ? "," : "") << "col" << d;
  out << '\n';
  for (Index n = 0; n < data.rows(); ++n) {
    for (Index d = 0; d < data.cols(); ++d) {
      if (d) out << ',';
      out << (data.is_observed(n, d) ? format_double(data.value(n, d)) : std::string("NA"));
    }
    out << '\n';
  }
  nlohmann::json meta = {
      {"family", std::string(family_name(data.family().kind))},
      {"gaussian_noise_variance", data.family().gaussian_noise_variance},
  };
  std::ofstream mo(meta_path);
  if (!mo) throw std::runtime_error("cannot write " + meta_path.string());
  mo << meta.dump(2) << '\n';
}

}  // namespace sparselvm
