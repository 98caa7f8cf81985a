#pragma once

// Local intrinsic dimensionality, maximum-likelihood estimator:
//
//   LID(x) = -( (1/k) * sum_{i=1..k} log(r_i / r_k) )^{-1}
//
// with r_1 <= ... <= r_k the distances from x to its k nearest neighbors in
// a reference batch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/features.hpp"
#include "sdefense/rng.hpp"

namespace sdefense {

struct LIDConfig {
  std::size_t batch_size = 100;
  std::size_t k_neighbors = 20;
  std::size_t batches = 10;

  void validate() const {
    if (k_neighbors == 0 || k_neighbors >= batch_size)
      throw std::invalid_argument("LIDConfig: need 0 < k_neighbors < batch_size");
    if (batches == 0) throw std::invalid_argument("LIDConfig: batches must be positive");
  }
};

struct LidEstimate {
  double value = 0.0;
  // Set when every reference distance was zero (or fewer than two usable
  // neighbors remained); value is then 0.
  bool degenerate = false;
};

// `distances` need not be sorted. Zero distances among the k nearest are
// dropped from the sum and from the count.
inline LidEstimate lid_from_distances(std::vector<double> distances, std::size_t k) {
  if (k == 0 || distances.empty()) return {0.0, true};
  k = std::min(k, distances.size());
  std::partial_sort(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(k), distances.end());
  const double rk = distances[k - 1];
  if (!(rk > 0.0)) return {0.0, true};
  double s = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(distances[i] > 0.0)) continue;
    s += std::log(distances[i] / rk);
    ++used;
  }
  s /= static_cast<double>(used);
  if (s == 0.0) return {0.0, true};
  return {-1.0 / s, false};
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// LID of `query` against the rows of `reference` listed in `rows` (all rows if empty).
inline LidEstimate lid_estimate(std::span<const double> query, const FeatureMatrix& reference, std::size_t k,
                                std::span<const std::size_t> rows = {}) {
  if (reference.cols() != query.size()) throw std::invalid_argument("lid_estimate: dimension mismatch");
  std::vector<double> d;
  if (rows.empty()) {
    d.reserve(reference.rows());
    for (std::size_t r = 0; r < reference.rows(); ++r) d.push_back(euclidean(query, reference.row(r)));
  } else {
    d.reserve(rows.size());
    for (std::size_t r : rows) d.push_back(euclidean(query, reference.row(r)));
  }
  return lid_from_distances(std::move(d), k);
}

// Per-layer LID features for one sample, averaged over `batches` random
// reference batches drawn (without replacement within a batch) from the
// per-layer reference pools. All pools must have the same number of rows;
// the same batch indices are used for every layer.
inline std::vector<double> lid_scores(std::span<const std::vector<double>> sample_layers,
                                      std::span<const FeatureMatrix> reference_layers, const LIDConfig& config,
                                      std::uint64_t seed) {
  config.validate();
  if (sample_layers.size() != reference_layers.size() || reference_layers.empty())
    throw std::invalid_argument("lid_scores: layer count mismatch");
  const std::size_t pool = reference_layers[0].rows();
  for (const auto& r : reference_layers)
    if (r.rows() != pool) throw std::invalid_argument("lid_scores: reference pools differ in size");
  if (pool < config.batch_size) {
    throw std::invalid_argument("lid_scores: reference pool of " + std::to_string(pool) +
                                " is smaller than batch size " + std::to_string(config.batch_size));
  }
  Rng rng(seed);
  std::vector<std::size_t> all(pool);
  for (std::size_t i = 0; i < pool; ++i) all[i] = i;
  std::vector<double> out(sample_layers.size(), 0.0);
  for (std::size_t b = 0; b < config.batches; ++b) {
    // Partial Fisher-Yates: first batch_size entries form the batch.
    for (std::size_t i = 0; i < config.batch_size; ++i) std::swap(all[i], all[i + rng.below(pool - i)]);
    std::span<const std::size_t> batch(all.data(), config.batch_size);
    for (std::size_t l = 0; l < sample_layers.size(); ++l)
      out[l] += lid_estimate(sample_layers[l], reference_layers[l], config.k_neighbors, batch).value;
  }
  for (double& v : out) v /= static_cast<double>(config.batches);
  return out;
}

}  // namespace sdefense
