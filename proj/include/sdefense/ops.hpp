#pragma once

// Differentiable primitives for the feed-forward classifier. Every forward op
// has a matching layer-local backward; there is no tape.
//
// conv2d is cross-correlation (no kernel flip), stride 1, zero padding.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/tensor.hpp"

namespace sdefense {

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t padding = 1;

  std::size_t weight_count() const { return out_channels * in_channels * kernel_h * kernel_w; }
};

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank-" + std::to_string(rank) +
                                " tensor, got " + shape_string(t.shape()));
  }
}

inline std::vector<double> pad_planes(const Tensor& input, std::size_t pad) {
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  std::vector<double> out(c * hp * wp, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(input.data() + (ch * h + y) * w, w, out.data() + (ch * hp + y + pad) * wp + pad);
  return out;
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, std::span<const double> kernels, std::span<const double> bias,
                     const ConvGeometry& g) {
  detail::require_rank(input, 3, "conv2d");
  if (g.kernel_h % 2 == 0 || g.kernel_w % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel size " + std::to_string(g.kernel_h) + "x" +
                                std::to_string(g.kernel_w) + " must be odd");
  }
  if (input.dim(0) != g.in_channels) {
    throw std::invalid_argument("conv2d: input channel dimension is " + std::to_string(input.dim(0)) +
                                " but kernels expect " + std::to_string(g.in_channels));
  }
  if (kernels.size() != g.weight_count()) {
    throw std::invalid_argument("conv2d: kernel buffer holds " + std::to_string(kernels.size()) +
                                " values, geometry needs " + std::to_string(g.weight_count()));
  }
  if (bias.size() != g.out_channels) {
    throw std::invalid_argument("conv2d: bias length " + std::to_string(bias.size()) +
                                " does not match out_channels " + std::to_string(g.out_channels));
  }
  const std::size_t h = input.dim(1), w = input.dim(2);
  const std::size_t hp = h + 2 * g.padding, wp = w + 2 * g.padding;
  if (hp < g.kernel_h) throw std::invalid_argument("conv2d: height " + std::to_string(h) + " smaller than kernel");
  if (wp < g.kernel_w) throw std::invalid_argument("conv2d: width " + std::to_string(w) + " smaller than kernel");
  const std::size_t ho = hp - g.kernel_h + 1, wo = wp - g.kernel_w + 1;

  const std::vector<double> padded = detail::pad_planes(input, g.padding);
  Tensor out({g.out_channels, ho, wo});
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    double* oplane = out.data() + co * ho * wo;
    std::fill_n(oplane, ho * wo, bias[co]);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const double* iplane = padded.data() + ci * hp * wp;
      const double* k = kernels.data() + ((co * g.in_channels + ci) * g.kernel_h) * g.kernel_w;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const double wv = k[ky * g.kernel_w + kx];
          for (std::size_t y = 0; y < ho; ++y) {
            double* orow = oplane + y * wo;
            const double* irow = iplane + (y + ky) * wp + kx;
            for (std::size_t x = 0; x < wo; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
  return out;
}

// kernels: [C_out, C_in, kH, kW].
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, std::span<const double> bias,
                     std::size_t padding) {
  detail::require_rank(kernels, 4, "conv2d kernels");
  ConvGeometry g{kernels.dim(1), kernels.dim(0), kernels.dim(2), kernels.dim(3), padding};
  return conv2d(input, kernels.values(), bias, g);
}

// Accumulates into grad_kernels / grad_bias when they are non-empty; grad_input may be null.
inline void conv2d_backward(const Tensor& input, std::span<const double> kernels, const ConvGeometry& g,
                            const Tensor& grad_out, Tensor* grad_input, std::span<double> grad_kernels,
                            std::span<double> grad_bias) {
  const std::size_t h = input.dim(1), w = input.dim(2);
  const std::size_t hp = h + 2 * g.padding, wp = w + 2 * g.padding;
  const std::size_t ho = grad_out.dim(1), wo = grad_out.dim(2);

  if (!grad_bias.empty()) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const double* gplane = grad_out.data() + co * ho * wo;
      double s = 0.0;
      for (std::size_t i = 0; i < ho * wo; ++i) s += gplane[i];
      grad_bias[co] += s;
    }
  }

  if (!grad_kernels.empty()) {
    const std::vector<double> padded = detail::pad_planes(input, g.padding);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const double* gplane = grad_out.data() + co * ho * wo;
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const double* iplane = padded.data() + ci * hp * wp;
        double* gk = grad_kernels.data() + ((co * g.in_channels + ci) * g.kernel_h) * g.kernel_w;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
            double s = 0.0;
            for (std::size_t y = 0; y < ho; ++y) {
              const double* grow = gplane + y * wo;
              const double* irow = iplane + (y + ky) * wp + kx;
              for (std::size_t x = 0; x < wo; ++x) s += grow[x] * irow[x];
            }
            gk[ky * g.kernel_w + kx] += s;
          }
        }
      }
    }
  }

  if (grad_input) {
    std::vector<double> gpad(g.in_channels * hp * wp, 0.0);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const double* gplane = grad_out.data() + co * ho * wo;
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        double* pplane = gpad.data() + ci * hp * wp;
        const double* k = kernels.data() + ((co * g.in_channels + ci) * g.kernel_h) * g.kernel_w;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
            const double wv = k[ky * g.kernel_w + kx];
            for (std::size_t y = 0; y < ho; ++y) {
              const double* grow = gplane + y * wo;
              double* prow = pplane + (y + ky) * wp + kx;
              for (std::size_t x = 0; x < wo; ++x) prow[x] += wv * grow[x];
            }
          }
        }
      }
    }
    Tensor gi({g.in_channels, h, w});
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(gpad.data() + (ci * hp + y + g.padding) * wp + g.padding, w, gi.data() + (ci * h + y) * w);
    *grad_input = std::move(gi);
  }
}

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(input[i] > 0.0)) g[i] = 0.0;
  return g;
}

// 2x2 window, stride 2. `argmax` receives the flat input index chosen per output
// cell (first maximum in row-major window order).
inline Tensor maxpool2(const Tensor& input, std::vector<std::size_t>* argmax = nullptr) {
  detail::require_rank(input, 3, "maxpool2");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0) throw std::invalid_argument("maxpool2: height " + std::to_string(h) + " is odd");
  if (w % 2 != 0) throw std::invalid_argument("maxpool2: width " + std::to_string(w) + " is odd");
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out({c, ho, wo});
  if (argmax) argmax->assign(c * ho * wo, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (ch * h + 2 * y + dy) * w + 2 * x + dx;
            if (input[idx] > input[best]) best = idx;
          }
        const std::size_t o = (ch * ho + y) * wo + x;
        out[o] = input[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

inline Tensor maxpool2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                const Tensor& grad_out) {
  Tensor g(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) g[argmax[o]] += grad_out[o];
  return g;
}

// weights: row-major [out, in].
inline std::vector<double> dense(std::span<const double> input, std::span<const double> weights,
                                 std::span<const double> bias) {
  const std::size_t out = bias.size();
  if (out == 0 || weights.size() != out * input.size()) {
    throw std::invalid_argument("dense: weight matrix of " + std::to_string(weights.size()) +
                                " values does not match " + std::to_string(out) + " outputs x " +
                                std::to_string(input.size()) + " inputs");
  }
  std::vector<double> y(bias.begin(), bias.end());
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = weights.data() + o * input.size();
    double s = 0.0;
    for (std::size_t i = 0; i < input.size(); ++i) s += row[i] * input[i];
    y[o] += s;
  }
  return y;
}

inline std::vector<double> dense(std::span<const double> input, const Tensor& weights,
                                 std::span<const double> bias) {
  detail::require_rank(weights, 2, "dense weights");
  if (weights.dim(1) != input.size()) {
    throw std::invalid_argument("dense: weight column count " + std::to_string(weights.dim(1)) +
                                " does not match input length " + std::to_string(input.size()));
  }
  if (weights.dim(0) != bias.size()) {
    throw std::invalid_argument("dense: weight row count " + std::to_string(weights.dim(0)) +
                                " does not match bias length " + std::to_string(bias.size()));
  }
  return dense(input, weights.values(), bias);
}

inline void dense_backward(std::span<const double> input, std::span<const double> weights,
                           std::span<const double> grad_out, std::span<double> grad_input,
                           std::span<double> grad_weights, std::span<double> grad_bias) {
  const std::size_t in = input.size();
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    const double go = grad_out[o];
    if (!grad_bias.empty()) grad_bias[o] += go;
    if (!grad_weights.empty()) {
      double* gw = grad_weights.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gw[i] += go * input[i];
    }
    if (!grad_input.empty()) {
      const double* row = weights.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) grad_input[i] += go * row[i];
    }
  }
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
  for (double& v : p) v /= z;
  return p;
}

namespace detail {
inline void check_label(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::invalid_argument("softmax_xent: label " + std::to_string(label) + " out of range for " +
                                std::to_string(logits.size()) + " classes");
  }
}
}  // namespace detail

inline double softmax_xent(std::span<const double> logits, std::size_t label) {
  detail::check_label(logits, label);
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  return std::log(z) - (logits[label] - m);
}

// d loss / d logits = softmax - onehot.
inline std::vector<double> softmax_xent_grad(std::span<const double> logits, std::size_t label) {
  detail::check_label(logits, label);
  std::vector<double> g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace sdefense
