#pragma once

// Lightweight comparators for the logistic-regression detector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "sdefense/features.hpp"

namespace sdefense {

// Majority vote among the k nearest training rows (Euclidean). Equal
// distances are broken by the lower row index.
inline int knn_classify(const LabeledFeatureSet& train, std::span<const double> query, std::size_t k) {
  train.validate();
  if (train.size() == 0) throw std::invalid_argument("knn_classify: empty training set");
  if (k == 0 || k % 2 == 0) throw std::invalid_argument("knn_classify: k must be odd");
  if (query.size() != train.features.cols()) throw std::invalid_argument("knn_classify: dimension mismatch");
  k = std::min(k, train.size());
  std::vector<std::pair<double, std::size_t>> d(train.size());
  for (std::size_t r = 0; r < train.size(); ++r) {
    const auto row = train.features.row(r);
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += (row[j] - query[j]) * (row[j] - query[j]);
    d[r] = {s, r};
  }
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::size_t votes = 0;
  for (std::size_t i = 0; i < k; ++i) votes += train.labels[d[i].second] == 1;
  return 2 * votes > k ? 1 : 0;
}

struct GaussianNB {
  std::vector<double> mean[2], var[2];
  double log_prior[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  double variance_floor = 0.0;
};

// Per-class, per-feature Gaussians. The variance floor is 1e-9 times the
// largest feature variance (at least 1e-12), as in common implementations.
inline GaussianNB fit_gnb(const LabeledFeatureSet& train) {
  train.validate();
  if (train.size() == 0) throw std::invalid_argument("gnb: empty training set");
  const std::size_t d = train.features.cols();
  GaussianNB m;
  const std::size_t n[2] = {train.count(0), train.count(1)};
  m.count[0] = n[0];
  m.count[1] = n[1];
  double max_var = 0.0;
  {
    std::vector<double> mu(d, 0.0), sq(d, 0.0);
    for (std::size_t r = 0; r < train.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) mu[j] += train.features.row(r)[j];
    for (double& v : mu) v /= static_cast<double>(train.size());
    for (std::size_t r = 0; r < train.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) sq[j] += std::pow(train.features.row(r)[j] - mu[j], 2);
    for (double v : sq) max_var = std::max(max_var, v / static_cast<double>(train.size()));
  }
  m.variance_floor = std::max(1e-9 * max_var, 1e-12);
  for (int c = 0; c < 2; ++c) {
    m.mean[c].assign(d, 0.0);
    m.var[c].assign(d, 0.0);
    if (n[c] == 0) continue;
    for (std::size_t r = 0; r < train.size(); ++r)
      if (train.labels[r] == c)
        for (std::size_t j = 0; j < d; ++j) m.mean[c][j] += train.features.row(r)[j];
    for (double& v : m.mean[c]) v /= static_cast<double>(n[c]);
    for (std::size_t r = 0; r < train.size(); ++r)
      if (train.labels[r] == c)
        for (std::size_t j = 0; j < d; ++j) m.var[c][j] += std::pow(train.features.row(r)[j] - m.mean[c][j], 2);
    for (double& v : m.var[c]) v = v / static_cast<double>(n[c]) + m.variance_floor;
    m.log_prior[c] = std::log(static_cast<double>(n[c]) / static_cast<double>(train.size()));
  }
  return m;
}

inline double gnb_log_likelihood(const GaussianNB& m, int c, std::span<const double> x) {
  if (x.size() != m.mean[c].size()) throw std::invalid_argument("gnb: dimension mismatch");
  double ll = m.log_prior[c];
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double v = m.var[c][j];
    ll -= 0.5 * (std::log(2.0 * std::numbers::pi * v) + (x[j] - m.mean[c][j]) * (x[j] - m.mean[c][j]) / v);
  }
  return ll;
}

// Ties resolve to label 0.
inline int gnb_classify(const GaussianNB& m, std::span<const double> query) {
  if (m.count[1] == 0) return 0;
  if (m.count[0] == 0) return 1;
  return gnb_log_likelihood(m, 1, query) > gnb_log_likelihood(m, 0, query) ? 1 : 0;
}

inline int gnb_classify(const LabeledFeatureSet& train, std::span<const double> query) {
  return gnb_classify(fit_gnb(train), query);
}

}  // namespace sdefense
