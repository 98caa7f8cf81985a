#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdefense {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct EvalReport {
  // Undefined when only one class is present.
  std::optional<double> auc;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  ConfusionCounts counts;
  std::map<std::string, std::string> provenance;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Mann-Whitney AUC with half credit for ties. The rank sum is accumulated in
// integers (doubled ranks) so the result is the exact ratio
//   (2 * #wins + #ties) / (2 * n_pos * n_neg).
inline std::optional<double> auc_score(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::uint64_t n_pos = 0;
  for (int l : labels) n_pos += l == 1;
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  // Twice the rank sum of positives; tie groups get first+last rank each.
  std::uint64_t rank2_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::uint64_t twice_avg = static_cast<std::uint64_t>(i + 1) + static_cast<std::uint64_t>(j + 1);
    for (std::size_t r = i; r <= j; ++r)
      if (labels[order[r]] == 1) rank2_pos += twice_avg;
    i = j + 1;
  }
  const std::uint64_t u2 = rank2_pos - n_pos * (n_pos + 1);
  return static_cast<double>(u2) / static_cast<double>(2 * n_pos * n_neg);
}

// Scores above 0.5 count as adversarial (label 1).
inline EvalReport compute_metrics(std::span<const double> scores, std::span<const int> labels,
                                  double threshold = 0.5) {
  if (scores.size() != labels.size()) throw std::invalid_argument("compute_metrics: length mismatch");
  if (scores.empty()) throw std::invalid_argument("compute_metrics: empty input");
  EvalReport r;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pos = scores[i] > threshold;
    if (labels[i] == 1) {
      pos ? ++r.counts.tp : ++r.counts.fn;
    } else {
      pos ? ++r.counts.fp : ++r.counts.tn;
    }
  }
  const auto& c = r.counts;
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  r.precision_undefined = c.tp + c.fp == 0;
  r.precision = r.precision_undefined ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  r.recall_undefined = c.tp + c.fn == 0;
  r.recall = r.recall_undefined ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.auc = auc_score(scores, labels);
  return r;
}

}  // namespace sdefense
