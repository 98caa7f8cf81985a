#pragma once

// MiniVGG: stacked blocks of 3x3 conv + ReLU, 2x2 max pooling after each
// block, one hidden dense + ReLU layer and a final dense layer producing
// logits. Parameters live in one flat vector addressed through a per-layer
// layout table.
//
// Activation ordinals count ReLU layers in forward order starting at 1;
// ordinal 0 denotes the input image.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/ops.hpp"
#include "sdefense/rng.hpp"
#include "sdefense/tensor.hpp"

namespace sdefense {

struct ConvBlock {
  std::size_t out_channels = 0;
  std::size_t layers = 0;
  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

struct ModelConfig {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<ConvBlock> conv_blocks{{16, 2}, {32, 2}, {64, 2}};
  std::size_t hidden_units = 128;
  std::size_t num_classes = 10;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  Shape input_shape() const { return {channels, height, width}; }

  void validate() const {
    if (channels == 0 || height == 0 || width == 0)
      throw std::invalid_argument("ModelConfig: input dimensions must be positive");
    if (conv_blocks.empty()) throw std::invalid_argument("ModelConfig: at least one conv block required");
    const std::size_t div = std::size_t{1} << conv_blocks.size();
    if (height % div != 0 || width % div != 0) {
      throw std::invalid_argument("ModelConfig: input " + std::to_string(height) + "x" + std::to_string(width) +
                                  " not divisible by 2^" + std::to_string(conv_blocks.size()));
    }
    for (const auto& b : conv_blocks)
      if (b.out_channels == 0 || b.layers == 0)
        throw std::invalid_argument("ModelConfig: conv block with zero channels or layers");
    if (hidden_units == 0) throw std::invalid_argument("ModelConfig: hidden_units must be positive");
    if (num_classes < 2) throw std::invalid_argument("ModelConfig: need at least two classes");
  }
};

enum class LayerKind { Conv, Relu, MaxPool, Dense };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  ConvGeometry conv{};          // Conv only
  std::size_t in_features = 0;  // Dense only
  std::size_t out_features = 0;
  std::size_t weight_offset = 0;
  std::size_t weight_count = 0;
  std::size_t bias_offset = 0;
  std::size_t bias_count = 0;
  Shape output_shape;
};

struct ModelParams {
  ModelConfig config;
  std::vector<double> values;
  std::vector<LayerSpec> layers;
  // activation_index[ordinal - 1] = position of that ReLU in `layers`.
  std::vector<std::size_t> activation_index;

  std::size_t activation_count() const { return activation_index.size(); }
};

struct LabeledImageSet {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return images.size(); }

  void validate() const {
    if (images.size() != labels.size()) {
      throw std::invalid_argument("LabeledImageSet: " + std::to_string(images.size()) + " images but " +
                                  std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < images.size(); ++i)
      for (double v : images[i].values())
        if (!(v >= 0.0 && v <= 1.0))
          throw std::invalid_argument("LabeledImageSet: image " + std::to_string(i) + " has pixel outside [0,1]");
  }
};

// Layout with all parameters zero.
inline ModelParams build_layout(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  std::size_t offset = 0;
  std::size_t c = config.channels, h = config.height, w = config.width;
  auto add_relu = [&](Shape shape) {
    LayerSpec r;
    r.kind = LayerKind::Relu;
    r.output_shape = std::move(shape);
    p.activation_index.push_back(p.layers.size());
    p.layers.push_back(r);
  };
  for (const auto& block : config.conv_blocks) {
    for (std::size_t l = 0; l < block.layers; ++l) {
      LayerSpec conv;
      conv.kind = LayerKind::Conv;
      conv.conv = ConvGeometry{c, block.out_channels, 3, 3, 1};
      conv.weight_offset = offset;
      conv.weight_count = conv.conv.weight_count();
      offset += conv.weight_count;
      conv.bias_offset = offset;
      conv.bias_count = block.out_channels;
      offset += conv.bias_count;
      c = block.out_channels;
      conv.output_shape = {c, h, w};
      p.layers.push_back(conv);
      add_relu({c, h, w});
    }
    LayerSpec pool;
    pool.kind = LayerKind::MaxPool;
    h /= 2;
    w /= 2;
    pool.output_shape = {c, h, w};
    p.layers.push_back(pool);
  }
  auto add_dense = [&](std::size_t in, std::size_t out) {
    LayerSpec d;
    d.kind = LayerKind::Dense;
    d.in_features = in;
    d.out_features = out;
    d.weight_offset = offset;
    d.weight_count = in * out;
    offset += d.weight_count;
    d.bias_offset = offset;
    d.bias_count = out;
    offset += out;
    d.output_shape = {out};
    p.layers.push_back(d);
  };
  add_dense(c * h * w, config.hidden_units);
  add_relu({config.hidden_units});
  add_dense(config.hidden_units, config.num_classes);
  p.values.assign(offset, 0.0);
  return p;
}

inline std::size_t parameter_count(const ModelConfig& config) { return build_layout(config).values.size(); }

// Uniform fan-in scaling, U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases.
inline ModelParams init_params(const ModelConfig& config) {
  ModelParams p = build_layout(config);
  Rng rng(derive_seed(config.seed, "init"));
  for (const auto& layer : p.layers) {
    if (layer.kind != LayerKind::Conv && layer.kind != LayerKind::Dense) continue;
    const std::size_t fan_in = layer.kind == LayerKind::Conv
                                   ? layer.conv.in_channels * layer.conv.kernel_h * layer.conv.kernel_w
                                   : layer.in_features;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < layer.weight_count; ++i) p.values[layer.weight_offset + i] = rng.uniform(-bound, bound);
  }
  return p;
}

namespace detail {
inline std::span<const double> weights_of(const ModelParams& p, const LayerSpec& l) {
  return std::span<const double>(p.values).subspan(l.weight_offset, l.weight_count);
}
inline std::span<const double> bias_of(const ModelParams& p, const LayerSpec& l) {
  return std::span<const double>(p.values).subspan(l.bias_offset, l.bias_count);
}

inline Tensor apply_layer(const ModelParams& p, const LayerSpec& layer, const Tensor& x,
                          std::vector<std::size_t>* pool_argmax) {
  switch (layer.kind) {
    case LayerKind::Conv:
      return conv2d(x, weights_of(p, layer), bias_of(p, layer), layer.conv);
    case LayerKind::Relu:
      return relu(x);
    case LayerKind::MaxPool:
      return maxpool2(x, pool_argmax);
    case LayerKind::Dense:
      return Tensor({layer.out_features}, dense(x.values(), weights_of(p, layer), bias_of(p, layer)));
  }
  throw std::logic_error("apply_layer: unknown layer kind");
}
}  // namespace detail

struct ForwardTrace {
  Tensor input;
  std::vector<Tensor> outputs;  // outputs[i] is the output of layer i
  std::vector<std::vector<std::size_t>> pool_argmax;

  const Tensor& layer_input(std::size_t i) const { return i == 0 ? input : outputs[i - 1]; }
  std::span<const double> logits() const { return outputs.back().values(); }
};

inline void check_input_shape(const ModelParams& p, const Tensor& image) {
  if (image.shape() != p.config.input_shape()) {
    throw std::invalid_argument("model: input shape " + shape_string(image.shape()) + " does not match expected " +
                                shape_string(p.config.input_shape()));
  }
}

inline ForwardTrace forward(const ModelParams& p, const Tensor& image) {
  check_input_shape(p, image);
  ForwardTrace t;
  t.input = image;
  t.outputs.reserve(p.layers.size());
  t.pool_argmax.resize(p.layers.size());
  for (std::size_t i = 0; i < p.layers.size(); ++i)
    t.outputs.push_back(detail::apply_layer(p, p.layers[i], t.layer_input(i), &t.pool_argmax[i]));
  return t;
}

// Backpropagates `grad` (gradient w.r.t. the output of layer `from_layer`)
// down to the input image. Parameter gradients accumulate into grad_params
// when it is non-null. Returns the input gradient, or an empty tensor when
// want_input is false.
inline Tensor backward(const ModelParams& p, const ForwardTrace& t, std::size_t from_layer, Tensor grad,
                       std::vector<double>* grad_params, bool want_input = true) {
  if (from_layer >= p.layers.size()) throw std::out_of_range("backward: layer index out of range");
  if (grad.shape() != t.outputs[from_layer].shape()) {
    throw std::invalid_argument("backward: gradient shape " + shape_string(grad.shape()) +
                                " does not match layer output " + shape_string(t.outputs[from_layer].shape()));
  }
  if (grad_params && grad_params->size() != p.values.size()) grad_params->assign(p.values.size(), 0.0);
  for (std::size_t i = from_layer + 1; i-- > 0;) {
    const LayerSpec& layer = p.layers[i];
    const Tensor& in = t.layer_input(i);
    const bool need_input_grad = i > 0 || want_input;
    switch (layer.kind) {
      case LayerKind::Relu:
        grad = relu_backward(in, grad);
        break;
      case LayerKind::MaxPool:
        grad = maxpool2_backward(in.shape(), t.pool_argmax[i], grad);
        break;
      case LayerKind::Conv: {
        std::span<double> gw, gb;
        if (grad_params) {
          gw = std::span<double>(*grad_params).subspan(layer.weight_offset, layer.weight_count);
          gb = std::span<double>(*grad_params).subspan(layer.bias_offset, layer.bias_count);
        }
        Tensor gin;
        conv2d_backward(in, detail::weights_of(p, layer), layer.conv, grad, need_input_grad ? &gin : nullptr, gw, gb);
        grad = std::move(gin);
        break;
      }
      case LayerKind::Dense: {
        std::span<double> gw, gb;
        if (grad_params) {
          gw = std::span<double>(*grad_params).subspan(layer.weight_offset, layer.weight_count);
          gb = std::span<double>(*grad_params).subspan(layer.bias_offset, layer.bias_count);
        }
        Tensor gin;
        if (need_input_grad) {
          gin = Tensor(in.shape());
          dense_backward(in.values(), detail::weights_of(p, layer), grad.values(), gin.values(), gw, gb);
        } else {
          dense_backward(in.values(), detail::weights_of(p, layer), grad.values(), {}, gw, gb);
        }
        grad = std::move(gin);
        break;
      }
    }
    if (!need_input_grad) return Tensor();
  }
  return grad;
}

struct Prediction {
  std::vector<double> logits;
  std::size_t label = 0;
};

inline Prediction predict(const ModelParams& p, const Tensor& image) {
  check_input_shape(p, image);
  Tensor x = image;
  for (const auto& layer : p.layers) x = detail::apply_layer(p, layer, x, nullptr);
  Prediction out;
  out.logits = x.vec();
  out.label = argmax(out.logits);
  return out;
}

struct GradientPair {
  double loss = 0.0;
  Tensor grad_input;
  std::vector<double> grad_params;
};

inline GradientPair loss_and_gradients(const ModelParams& p, const Tensor& image, std::size_t label) {
  const ForwardTrace t = forward(p, image);
  GradientPair g;
  g.loss = softmax_xent(t.logits(), label);
  Tensor grad_logits({p.config.num_classes}, softmax_xent_grad(t.logits(), label));
  g.grad_input = backward(p, t, p.layers.size() - 1, std::move(grad_logits), &g.grad_params);
  return g;
}

inline void check_ordinal(const ModelParams& p, std::size_t ordinal) {
  if (ordinal > p.activation_count()) {
    throw std::invalid_argument("activation ordinal " + std::to_string(ordinal) + " out of range; model has " +
                                std::to_string(p.activation_count()) + " activations");
  }
}

// Post-ReLU feature maps at the requested ordinals, in request order.
inline std::vector<Tensor> feature_maps(const ModelParams& p, const Tensor& image,
                                        std::span<const std::size_t> ordinals) {
  check_input_shape(p, image);
  std::size_t deepest = 0;
  for (std::size_t o : ordinals) {
    check_ordinal(p, o);
    deepest = std::max(deepest, o);
  }
  std::vector<Tensor> taps(p.activation_count() + 1);
  taps[0] = image;
  Tensor x = image;
  std::size_t next = 1;
  for (std::size_t i = 0; i < p.layers.size() && next <= deepest; ++i) {
    x = detail::apply_layer(p, p.layers[i], x, nullptr);
    if (p.layers[i].kind == LayerKind::Relu) taps[next++] = x;
  }
  std::vector<Tensor> out;
  out.reserve(ordinals.size());
  for (std::size_t o : ordinals) out.push_back(taps[o]);
  return out;
}

// Runs the layers after activation `ordinal` on a tapped map.
inline std::vector<double> logits_from_activation(const ModelParams& p, std::size_t ordinal, const Tensor& map) {
  check_ordinal(p, ordinal);
  if (ordinal == 0) return predict(p, map).logits;
  const std::size_t pos = p.activation_index[ordinal - 1];
  if (map.shape() != p.layers[pos].output_shape) {
    throw std::invalid_argument("logits_from_activation: map shape " + shape_string(map.shape()) +
                                " does not match activation " + std::to_string(ordinal));
  }
  Tensor x = map;
  for (std::size_t i = pos + 1; i < p.layers.size(); ++i) x = detail::apply_layer(p, p.layers[i], x, nullptr);
  return x.vec();
}

// Adapter exposing a trained network to the attack routines.
class Network {
 public:
  using Trace = ForwardTrace;

  explicit Network(const ModelParams& params) : params_(&params) {}

  const ModelParams& params() const { return *params_; }
  std::size_t num_classes() const { return params_->config.num_classes; }
  Shape input_shape() const { return params_->config.input_shape(); }

  Trace trace(const Tensor& x) const { return forward(*params_, x); }
  static std::span<const double> logits(const Trace& t) { return t.logits(); }

  // Gradient of sum_j weights[j] * logit_j with respect to the input.
  Tensor input_vjp(const Trace& t, std::span<const double> weights) const {
    Tensor g({num_classes()}, std::vector<double>(weights.begin(), weights.end()));
    return backward(*params_, t, params_->layers.size() - 1, std::move(g), nullptr);
  }

 private:
  const ModelParams* params_;
};

struct TrainOptions {
  double momentum = 0.9;
  std::size_t batch_size = 32;
};

struct TrainLog {
  std::vector<double> epoch_loss;
};

// Mini-batch SGD with momentum; shuffle order and initialization derive from
// config.seed only.
inline ModelParams train(const ModelConfig& config, const LabeledImageSet& train_set, std::size_t epochs, double lr,
                         TrainLog* log = nullptr, const TrainOptions& options = {}) {
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  train_set.validate();
  for (std::size_t l : train_set.labels)
    if (l >= config.num_classes)
      throw std::invalid_argument("train: label " + std::to_string(l) + " >= num_classes " +
                                  std::to_string(config.num_classes));
  ModelParams p = init_params(config);
  std::vector<double> velocity(p.values.size(), 0.0);
  std::vector<double> grad(p.values.size(), 0.0);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(config.seed, "shuffle"));

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const ForwardTrace t = forward(p, train_set.images[idx]);
        const double loss = softmax_xent(t.logits(), train_set.labels[idx]);
        if (!std::isfinite(loss)) {
          throw std::runtime_error("train: loss became non-finite at epoch " + std::to_string(epoch) + ", sample " +
                                   std::to_string(idx));
        }
        epoch_loss += loss;
        Tensor gl({config.num_classes}, softmax_xent_grad(t.logits(), train_set.labels[idx]));
        backward(p, t, p.layers.size() - 1, std::move(gl), &grad, false);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        velocity[i] = options.momentum * velocity[i] - lr * grad[i] * scale;
        p.values[i] += velocity[i];
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) throw std::runtime_error("train: diverged in epoch " + std::to_string(epoch));
    if (log) log->epoch_loss.push_back(epoch_loss);
  }
  return p;
}

inline double accuracy(const ModelParams& p, const LabeledImageSet& set) {
  if (set.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) correct += predict(p, set.images[i]).label == set.labels[i];
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

}  // namespace sdefense
