#pragma once

// Mahalanobis-distance baseline: class-conditional Gaussians with a pooled
// covariance per tapped layer, fitted on benign features (per-channel means
// of each activation). The per-layer score is the largest negative squared
// Mahalanobis distance over classes, optionally after nudging the input a
// small signed-gradient step toward the closest class Gaussian.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/features.hpp"
#include "sdefense/model.hpp"

namespace sdefense {

// Lower-triangular Cholesky factor of a row-major n x n matrix, or nullopt if
// the matrix is not numerically positive definite (a pivot below 1e-12 of
// the largest diagonal entry counts as zero).
inline std::optional<std::vector<double>> cholesky(std::span<const double> a, std::size_t n) {
  double max_diag = 0.0;
  for (std::size_t j = 0; j < n; ++j) max_diag = std::max(max_diag, a[j * n + j]);
  const double floor = 1e-12 * max_diag;
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > floor) || !std::isfinite(d)) return std::nullopt;
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
  return l;
}

// Solves (L L^T) x = b.
inline std::vector<double> cholesky_solve(std::span<const double> l, std::size_t n, std::span<const double> b) {
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * y[k];
    y[i] = s / l[i * n + i];
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = y[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l[k * n + i] * x[k];
    x[i] = s / l[i * n + i];
  }
  return x;
}

struct GaussianLayerStats {
  std::size_t dim = 0;
  std::vector<std::vector<double>> class_means;
  std::vector<double> covariance;  // row-major dim x dim, after any ridge
  std::vector<double> cholesky_factor;
  double ridge = 0.0;  // non-zero when regularization was needed
};

struct MahalanobisStats {
  std::vector<std::size_t> layer_ordinals;
  std::vector<GaussianLayerStats> layers;
  double noise_magnitude = 0.0;
};

// Per-channel spatial mean of a [C,H,W] map; rank-1 activations pass through.
inline std::vector<double> channel_means(const Tensor& map) {
  if (map.rank() == 1) return map.vec();
  if (map.rank() != 3) throw std::invalid_argument("channel_means: expected rank-1 or rank-3 map");
  const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += map[ch * hw + i];
    out[ch] = s / static_cast<double>(hw);
  }
  return out;
}

inline GaussianLayerStats fit_gaussian_layer(const FeatureMatrix& features, std::span<const std::size_t> labels,
                                             std::size_t num_classes) {
  if (features.rows() != labels.size() || features.rows() == 0)
    throw std::invalid_argument("fit_gaussian_layer: rows/labels mismatch or empty");
  GaussianLayerStats s;
  const std::size_t d = features.cols();
  s.dim = d;
  s.class_means.assign(num_classes, std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    if (labels[r] >= num_classes) throw std::invalid_argument("fit_gaussian_layer: label out of range");
    const auto row = features.row(r);
    for (std::size_t j = 0; j < d; ++j) s.class_means[labels[r]][j] += row[j];
    ++counts[labels[r]];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("fit_gaussian_layer: class " + std::to_string(c) + " has no samples");
    for (double& v : s.class_means[c]) v /= static_cast<double>(counts[c]);
  }
  s.covariance.assign(d * d, 0.0);
  std::vector<double> diff(d);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto row = features.row(r);
    for (std::size_t j = 0; j < d; ++j) diff[j] = row[j] - s.class_means[labels[r]][j];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) s.covariance[i * d + j] += diff[i] * diff[j];
  }
  const double inv_n = 1.0 / static_cast<double>(features.rows());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) s.covariance[j * d + i] = (s.covariance[i * d + j] *= inv_n);

  auto chol = cholesky(s.covariance, d);
  if (!chol) {
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += s.covariance[i * d + i];
    double ridge = 1e-6 * (trace > 0.0 ? trace : 1.0) / static_cast<double>(d);
    while (!chol) {
      std::vector<double> reg = s.covariance;
      for (std::size_t i = 0; i < d; ++i) reg[i * d + i] += ridge;
      chol = cholesky(reg, d);
      if (chol) {
        s.covariance = std::move(reg);
        s.ridge = ridge;
      } else {
        ridge *= 10.0;
      }
    }
  }
  s.cholesky_factor = std::move(*chol);
  return s;
}

// Squared Mahalanobis distance of f to class c.
inline double mahalanobis_sq(const GaussianLayerStats& s, std::size_t c, std::span<const double> f,
                             std::vector<double>* solved = nullptr) {
  if (f.size() != s.dim) throw std::invalid_argument("mahalanobis: feature dimension mismatch");
  std::vector<double> diff(s.dim);
  for (std::size_t j = 0; j < s.dim; ++j) diff[j] = f[j] - s.class_means[c][j];
  std::vector<double> x = cholesky_solve(s.cholesky_factor, s.dim, diff);
  double q = 0.0;
  for (std::size_t j = 0; j < s.dim; ++j) q += diff[j] * x[j];
  if (solved) *solved = std::move(x);
  return q;
}

// max over classes of -(f - mu_c)^T Sigma^{-1} (f - mu_c).
inline double mahalanobis_confidence(const GaussianLayerStats& s, std::span<const double> f,
                                     std::size_t* closest = nullptr) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < s.class_means.size(); ++c) {
    const double score = -mahalanobis_sq(s, c, f);
    if (score > best) {
      best = score;
      if (closest) *closest = c;
    }
  }
  return best;
}

// Fits per-layer statistics from benign images with their class labels.
inline MahalanobisStats fit_mahalanobis(const ModelParams& params, const LabeledImageSet& benign,
                                        std::span<const std::size_t> ordinals) {
  if (ordinals.empty()) throw std::invalid_argument("fit_mahalanobis: no layers");
  for (std::size_t o : ordinals)
    if (o == 0) throw std::invalid_argument("fit_mahalanobis: ordinal 0 is the input, not an activation");
  std::vector<FeatureMatrix> per_layer(ordinals.size());
  for (std::size_t i = 0; i < benign.size(); ++i) {
    const auto maps = feature_maps(params, benign.images[i], ordinals);
    for (std::size_t l = 0; l < maps.size(); ++l) per_layer[l].append_row(channel_means(maps[l]));
  }
  MahalanobisStats st;
  st.layer_ordinals.assign(ordinals.begin(), ordinals.end());
  for (const auto& m : per_layer) st.layers.push_back(fit_gaussian_layer(m, benign.labels, params.config.num_classes));
  return st;
}

// Per-layer scores. With noise_magnitude > 0 the input is first moved by
// -noise * sign(grad_x d^2), d^2 the distance to the closest class at that
// layer, which raises the score.
inline std::vector<double> mahalanobis_scores(const ModelParams& params, const MahalanobisStats& stats,
                                              const Tensor& image, double noise_magnitude) {
  std::vector<double> scores;
  scores.reserve(stats.layers.size());
  const ForwardTrace trace = forward(params, image);
  for (std::size_t l = 0; l < stats.layers.size(); ++l) {
    const std::size_t ordinal = stats.layer_ordinals[l];
    check_ordinal(params, ordinal);
    const std::size_t pos = params.activation_index[ordinal - 1];
    const Tensor& act = trace.outputs[pos];
    const GaussianLayerStats& s = stats.layers[l];
    const std::vector<double> f = channel_means(act);
    if (noise_magnitude == 0.0) {
      scores.push_back(mahalanobis_confidence(s, f));
      continue;
    }
    std::size_t closest = 0;
    mahalanobis_confidence(s, f, &closest);
    std::vector<double> solved;
    mahalanobis_sq(s, closest, f, &solved);
    // d(d^2)/d(act): 2 * Sigma^{-1}(f - mu) spread evenly over each channel.
    Tensor grad(act.shape());
    const std::size_t hw = act.rank() == 3 ? act.dim(1) * act.dim(2) : 1;
    for (std::size_t ch = 0; ch < s.dim; ++ch)
      for (std::size_t i = 0; i < hw; ++i) grad[ch * hw + i] = 2.0 * solved[ch] / static_cast<double>(hw);
    const Tensor gx = backward(params, trace, pos, std::move(grad), nullptr);
    Tensor moved = image;
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] -= noise_magnitude * ((gx[i] > 0.0) - (gx[i] < 0.0));
    const std::size_t ord[1] = {ordinal};
    scores.push_back(mahalanobis_confidence(s, channel_means(feature_maps(params, moved, ord)[0])));
  }
  return scores;
}

}  // namespace sdefense
