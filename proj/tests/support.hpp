#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "sdefense/rng.hpp"
#include "sdefense/tensor.hpp"

namespace testing_support {

using sdefense::Rng;
using sdefense::Shape;
using sdefense::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// X(u,v) = sum_{x,y} f(x,y) exp(-2 pi i (u x + v y) / N), straight from the definition.
inline std::vector<std::complex<double>> direct_dft2(std::span<const double> f, std::size_t n) {
  std::vector<std::complex<double>> out(n * n);
  const double w = -2.0 * std::numbers::pi / static_cast<double>(n);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      std::complex<double> s = 0.0;
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t y = 0; y < n; ++y) {
          const double ang = w * static_cast<double>((u * x + v * y) % n);
          s += f[x * n + y] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      out[u * n + v] = s;
    }
  return out;
}

// A fixed affine classifier z = W x + b, with the attack-facing interface.
class LinearClassifier {
 public:
  struct Trace {
    std::vector<double> z;
  };

  LinearClassifier(std::vector<std::vector<double>> w, std::vector<double> b, Shape input)
      : w_(std::move(w)), b_(std::move(b)), input_(std::move(input)) {}

  std::size_t num_classes() const { return w_.size(); }
  Trace trace(const Tensor& x) const {
    Trace t{b_};
    for (std::size_t c = 0; c < w_.size(); ++c)
      for (std::size_t i = 0; i < x.size(); ++i) t.z[c] += w_[c][i] * x[i];
    return t;
  }
  static std::span<const double> logits(const Trace& t) { return t.z; }
  Tensor input_vjp(const Trace&, std::span<const double> weights) const {
    Tensor g(input_);
    for (std::size_t c = 0; c < w_.size(); ++c)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += weights[c] * w_[c][i];
    return g;
  }
  const std::vector<double>& row(std::size_t c) const { return w_[c]; }
  double bias(std::size_t c) const { return b_[c]; }

 private:
  std::vector<std::vector<double>> w_;
  std::vector<double> b_;
  Shape input_;
};

}  // namespace testing_support
