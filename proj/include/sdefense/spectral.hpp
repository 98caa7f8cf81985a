#pragma once

// 2D DFT and the magnitude / phase Fourier-spectrum (MFS / PFS) features of
// input images and tapped feature maps.
//
//   F(l,k) = sum_{m,n} exp(-2 pi i (l m + k n) / N) X(m,n)
//
// computed row-column with a radix-2 FFT when N is a power of two and a
// direct O(N^2) transform per row otherwise.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/model.hpp"
#include "sdefense/tensor.hpp"

namespace sdefense {

using Complex = std::complex<double>;

namespace detail {

inline bool is_power_of_two(std::size_t n) { return n && !(n & (n - 1)); }

inline void fft_radix2(std::vector<Complex>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    std::vector<Complex> tw(half);
    for (std::size_t k = 0; k < half; ++k) tw[k] = std::polar(1.0, ang * static_cast<double>(k));
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * tw[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

inline void dft_direct(std::vector<Complex>& a) {
  const std::size_t n = a.size();
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex s = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * m) % n) / static_cast<double>(n);
      s += a[m] * std::polar(1.0, ang);
    }
    out[k] = s;
  }
  a = std::move(out);
}

inline void dft1(std::vector<Complex>& a) {
  if (is_power_of_two(a.size())) {
    fft_radix2(a);
  } else {
    dft_direct(a);
  }
}

}  // namespace detail

// Real and imaginary planes, each [C, N, N].
struct Spectrum {
  Tensor real;
  Tensor imag;
};

// Transform of one square channel; result planes are [1, N, N].
inline Spectrum dft2(std::span<const double> channel, std::size_t n) {
  if (n == 0 || channel.size() != n * n) throw std::invalid_argument("dft2: channel is not N x N");
  std::vector<Complex> grid(channel.begin(), channel.end());
  std::vector<Complex> line(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) line[c] = grid[r * n + c];
    detail::dft1(line);
    for (std::size_t c = 0; c < n; ++c) grid[r * n + c] = line[c];
  }
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t r = 0; r < n; ++r) line[r] = grid[r * n + c];
    detail::dft1(line);
    for (std::size_t r = 0; r < n; ++r) grid[r * n + c] = line[r];
  }
  Spectrum s{Tensor({1, n, n}), Tensor({1, n, n})};
  for (std::size_t i = 0; i < n * n; ++i) {
    s.real[i] = grid[i].real();
    s.imag[i] = grid[i].imag();
  }
  return s;
}

// Accepts [N, N] or [C, N, N]; each channel is transformed independently.
inline Spectrum dft2(const Tensor& x) {
  if (x.rank() == 2) {
    if (x.dim(0) != x.dim(1))
      throw std::invalid_argument("dft2: channel " + shape_string(x.shape()) + " is not square");
    return dft2(x.values(), x.dim(0));
  }
  if (x.rank() != 3) throw std::invalid_argument("dft2: expected [N,N] or [C,N,N], got " + shape_string(x.shape()));
  const std::size_t c = x.dim(0), n = x.dim(1);
  if (x.dim(2) != n) throw std::invalid_argument("dft2: feature map " + shape_string(x.shape()) + " is not square");
  Spectrum s{Tensor({c, n, n}), Tensor({c, n, n})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Spectrum one = dft2(x.values().subspan(ch * n * n, n * n), n);
    std::copy(one.real.values().begin(), one.real.values().end(), s.real.data() + ch * n * n);
    std::copy(one.imag.values().begin(), one.imag.values().end(), s.imag.data() + ch * n * n);
  }
  return s;
}

inline double coefficient_magnitude(double re, double im) { return std::hypot(re, im); }

// Quadrant-aware angle in (-pi, pi]; a zero coefficient has phase 0.
inline double coefficient_phase(double re, double im) {
  if (re == 0.0 && im == 0.0) return 0.0;
  return std::atan2(im + 0.0, re);
}

inline Tensor magnitude(const Spectrum& s) {
  Tensor out(s.real.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = coefficient_magnitude(s.real[i], s.imag[i]);
  return out;
}

inline Tensor phase(const Spectrum& s) {
  Tensor out(s.real.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = coefficient_phase(s.real[i], s.imag[i]);
  return out;
}

enum class SpectrumMode { MFS, PFS };
enum class FeatureSource { Input, Layers };

inline const char* to_string(SpectrumMode m) { return m == SpectrumMode::MFS ? "MFS" : "PFS"; }
inline const char* to_string(FeatureSource s) { return s == FeatureSource::Input ? "Input" : "Layer"; }

// Square-ring band on the centered spectrum. The ring index of a coefficient
// is twice its Chebyshev distance to DC (clamped to N-1), so bounds live in
// [0, N] and e.g. {0, N/4, N/2, 3N/4, N} split the spectrum into quarters of
// the Nyquist radius.
struct FrequencyBand {
  std::size_t lo = 0;
  std::size_t hi = 0;
  friend bool operator==(const FrequencyBand&, const FrequencyBand&) = default;
};

inline std::size_t band_coordinate(std::size_t row, std::size_t col, std::size_t n) {
  auto dist = [n](std::size_t i) { return std::min(i, n - i); };
  const std::size_t d = std::max(dist(row), dist(col));
  return std::min(2 * d, n - 1);
}

inline bool in_band(std::size_t row, std::size_t col, std::size_t n, const FrequencyBand& band) {
  const std::size_t s = band_coordinate(row, col, n);
  return band.lo <= s && s < band.hi;
}

struct FeatureDescriptor {
  SpectrumMode mode = SpectrumMode::MFS;
  FeatureSource source = FeatureSource::Input;
  std::vector<std::size_t> layer_ordinals;  // Layers only
  std::optional<FrequencyBand> band;        // Input only
  // Input image geometry (Input only).
  std::size_t channels = 0;
  std::size_t side = 0;

  friend bool operator==(const FeatureDescriptor&, const FeatureDescriptor&) = default;

  std::string name() const {
    std::string s = std::string(to_string(source)) + to_string(mode);
    if (source == FeatureSource::Layers) {
      s += "[";
      for (std::size_t i = 0; i < layer_ordinals.size(); ++i) s += (i ? "," : "") + std::to_string(layer_ordinals[i]);
      s += "]";
    }
    if (band) s += "{" + std::to_string(band->lo) + "," + std::to_string(band->hi) + "}";
    return s;
  }
};

struct FeatureVector {
  std::vector<double> values;
  FeatureDescriptor descriptor;
};

namespace detail {
inline void append_spectrum(const Tensor& map, SpectrumMode mode, std::vector<double>& out) {
  const Spectrum s = dft2(map);
  const Tensor f = mode == SpectrumMode::MFS ? magnitude(s) : phase(s);
  out.insert(out.end(), f.values().begin(), f.values().end());
}
}  // namespace detail

// Per-channel DFT, magnitude or phase, flattened channel-major (C*N*N values).
inline FeatureVector extract_input_features(const Tensor& image, SpectrumMode mode) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw std::invalid_argument("extract_input_features: expected square [C,N,N] image, got " +
                                shape_string(image.shape()));
  }
  FeatureVector fv;
  fv.descriptor.mode = mode;
  fv.descriptor.source = FeatureSource::Input;
  fv.descriptor.channels = image.dim(0);
  fv.descriptor.side = image.dim(1);
  fv.values.reserve(image.size());
  detail::append_spectrum(image, mode, fv.values);
  return fv;
}

// Dense-layer activations (rank 1, length L) are treated as L channels of 1x1 maps.
inline Tensor as_spectral_map(const Tensor& map) {
  if (map.rank() == 1) return map.reshaped({map.dim(0), 1, 1});
  if (map.rank() != 3 || map.dim(1) != map.dim(2)) {
    throw std::invalid_argument("layer features: feature map " + shape_string(map.shape()) + " is not square");
  }
  return map;
}

inline FeatureVector extract_layer_features(const ModelParams& params, const Tensor& image,
                                            std::span<const std::size_t> ordinals, SpectrumMode mode) {
  if (ordinals.empty()) throw std::invalid_argument("extract_layer_features: no layers requested");
  const std::vector<Tensor> maps = feature_maps(params, image, ordinals);
  FeatureVector fv;
  fv.descriptor.mode = mode;
  fv.descriptor.source = FeatureSource::Layers;
  fv.descriptor.layer_ordinals.assign(ordinals.begin(), ordinals.end());
  for (const Tensor& m : maps) detail::append_spectrum(as_spectral_map(m), mode, fv.values);
  return fv;
}

inline std::size_t layer_feature_dimension(const ModelParams& params, std::span<const std::size_t> ordinals) {
  std::size_t total = 0;
  for (std::size_t o : ordinals) {
    check_ordinal(params, o);
    total += o == 0 ? shape_product(params.config.input_shape())
                    : shape_product(params.layers[params.activation_index[o - 1]].output_shape);
  }
  return total;
}

inline FeatureVector apply_band(const FeatureVector& features, const FrequencyBand& band) {
  const FeatureDescriptor& d = features.descriptor;
  if (d.source != FeatureSource::Input || d.side == 0) {
    throw std::invalid_argument("apply_band: band masking needs input-mode features with known N");
  }
  if (d.band) throw std::invalid_argument("apply_band: features are already band-limited");
  const std::size_t n = d.side;
  if (band.lo >= band.hi || band.hi > n) {
    throw std::invalid_argument("apply_band: band [" + std::to_string(band.lo) + "," + std::to_string(band.hi) +
                                ") outside [0," + std::to_string(n) + "]");
  }
  if (features.values.size() != d.channels * n * n) {
    throw std::invalid_argument("apply_band: feature length does not match descriptor");
  }
  FeatureVector out;
  out.descriptor = d;
  out.descriptor.band = band;
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < n; ++k)
        if (in_band(r, k, n, band)) out.values.push_back(features.values[(c * n + r) * n + k]);
  return out;
}

}  // namespace sdefense
