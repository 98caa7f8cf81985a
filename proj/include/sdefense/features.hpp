#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/spectral.hpp"

namespace sdefense {

// Row-major sample x feature matrix.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw std::invalid_argument("FeatureMatrix: data length mismatch");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  const std::vector<double>& data() const { return data_; }

  void append_row(std::span<const double> r) {
    if (rows_ == 0 && cols_ == 0) cols_ = r.size();
    if (r.size() != cols_) {
      throw std::invalid_argument("FeatureMatrix: row of length " + std::to_string(r.size()) + ", expected " +
                                  std::to_string(cols_));
    }
    data_.insert(data_.end(), r.begin(), r.end());
    ++rows_;
  }

  FeatureMatrix select_rows(std::span<const std::size_t> idx) const {
    FeatureMatrix out(0, cols_);
    out.data_.reserve(idx.size() * cols_);
    for (std::size_t i : idx) out.append_row(row(i));
    return out;
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Which detector produced a feature column set. For the spectral detectors the
// spectral descriptor is authoritative; baselines carry their own tags.
enum class FeatureKind { Spectral, LID, Mahalanobis };

struct FeatureSetDescriptor {
  FeatureKind kind = FeatureKind::Spectral;
  FeatureDescriptor spectral;
  std::optional<double> noise_magnitude;  // Mahalanobis only

  friend bool operator==(const FeatureSetDescriptor&, const FeatureSetDescriptor&) = default;

  std::string name() const {
    switch (kind) {
      case FeatureKind::Spectral: return spectral.name();
      case FeatureKind::LID: return "LID";
      case FeatureKind::Mahalanobis: return "M-D";
    }
    return "?";
  }
};

// Label 0 = benign, 1 = adversarial.
struct LabeledFeatureSet {
  FeatureMatrix features;
  std::vector<int> labels;
  std::string attack;
  std::optional<double> epsilon;
  FeatureSetDescriptor descriptor;

  std::size_t size() const { return labels.size(); }

  void validate() const {
    if (features.rows() != labels.size()) {
      throw std::invalid_argument("LabeledFeatureSet: " + std::to_string(features.rows()) + " rows but " +
                                  std::to_string(labels.size()) + " labels");
    }
    for (int l : labels)
      if (l != 0 && l != 1) throw std::invalid_argument("LabeledFeatureSet: labels must be 0 or 1");
  }

  std::size_t count(int label) const {
    std::size_t n = 0;
    for (int l : labels) n += l == label;
    return n;
  }
};

}  // namespace sdefense
