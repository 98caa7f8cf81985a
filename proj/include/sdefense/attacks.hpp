#pragma once

// Untargeted evasion attacks: FGSM, BIM and PGD (L-infinity), DeepFool and
// Carlini-Wagner (L2). The gradient attacks ascend the cross-entropy of the
// true label. All attacks return images inside [0,1].

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/ops.hpp"
#include "sdefense/rng.hpp"
#include "sdefense/tensor.hpp"

namespace sdefense {

// A classifier exposing logits and vector-Jacobian products of the logits
// with respect to its input.
template <class M>
concept DifferentiableClassifier = requires(const M& m, const Tensor& x, const typename M::Trace& t,
                                            std::span<const double> w) {
  { m.num_classes() } -> std::convertible_to<std::size_t>;
  { m.trace(x) } -> std::convertible_to<typename M::Trace>;
  { M::logits(t) } -> std::convertible_to<std::span<const double>>;
  { m.input_vjp(t, w) } -> std::convertible_to<Tensor>;
};

enum class AttackMethod { FGSM, BIM, PGD, DeepFool, CW };

inline const char* to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::FGSM: return "FGSM";
    case AttackMethod::BIM: return "BIM";
    case AttackMethod::PGD: return "PGD";
    case AttackMethod::DeepFool: return "DeepFool";
    case AttackMethod::CW: return "CW";
  }
  return "?";
}

inline AttackMethod parse_attack_method(const std::string& s) {
  for (AttackMethod m : {AttackMethod::FGSM, AttackMethod::BIM, AttackMethod::PGD, AttackMethod::DeepFool,
                         AttackMethod::CW})
    if (s == to_string(m)) return m;
  if (s == "Deepfool" || s == "DF") return AttackMethod::DeepFool;
  if (s == "C&W") return AttackMethod::CW;
  throw std::invalid_argument("unknown attack method '" + s + "'");
}

inline bool uses_epsilon(AttackMethod m) {
  return m == AttackMethod::FGSM || m == AttackMethod::BIM || m == AttackMethod::PGD;
}

struct AttackConfig {
  AttackMethod method = AttackMethod::FGSM;
  std::optional<double> epsilon;
  double alpha = 0.0;
  std::size_t iterations = 1;
  double cw_c_init = 1e-3;
  std::size_t cw_binary_steps = 9;
  std::size_t cw_inner_steps = 1000;
  double cw_lr = 0.01;
  double overshoot = 0.02;
  std::uint64_t seed = 0;

  static AttackConfig defaults(AttackMethod method, std::optional<double> epsilon = std::nullopt) {
    AttackConfig c;
    c.method = method;
    switch (method) {
      case AttackMethod::FGSM:
        c.epsilon = epsilon.value_or(0.03);
        c.alpha = *c.epsilon;
        c.iterations = 1;
        break;
      case AttackMethod::BIM:
        c.epsilon = epsilon.value_or(0.03);
        c.alpha = 0.2 * *c.epsilon;
        c.iterations = 10;
        break;
      case AttackMethod::PGD:
        c.epsilon = epsilon.value_or(0.03);
        c.alpha = *c.epsilon / 10.0;
        c.iterations = 40;
        break;
      case AttackMethod::DeepFool:
        c.iterations = 50;
        c.overshoot = 0.02;
        break;
      case AttackMethod::CW:
        c.iterations = 1;
        break;
    }
    return c;
  }

  std::string name() const { return to_string(method); }

  void validate() const {
    if (uses_epsilon(method) != epsilon.has_value()) {
      throw std::invalid_argument(std::string("AttackConfig: epsilon must be set exactly for FGSM/BIM/PGD (method ") +
                                  to_string(method) + ")");
    }
    if (epsilon && !(*epsilon > 0.0 && *epsilon <= 1.0))
      throw std::invalid_argument("AttackConfig: epsilon " + std::to_string(*epsilon) + " outside (0,1]");
    if (iterations == 0 || cw_binary_steps == 0 || cw_inner_steps == 0)
      throw std::invalid_argument("AttackConfig: iteration counts must be positive");
    if ((method == AttackMethod::BIM || method == AttackMethod::PGD) && !(alpha > 0.0 && alpha <= *epsilon))
      throw std::invalid_argument("AttackConfig: step size alpha must lie in (0, epsilon]");
    if (method == AttackMethod::CW && !(cw_c_init > 0.0 && cw_lr > 0.0))
      throw std::invalid_argument("AttackConfig: C&W constants must be positive");
    if (overshoot < 0.0) throw std::invalid_argument("AttackConfig: overshoot must be non-negative");
  }
};

struct AttackResult {
  Tensor original;
  Tensor adversarial;
  std::size_t true_label = 0;
  std::size_t original_pred = 0;
  std::size_t adversarial_pred = 0;
  bool success = false;
  double l_inf = 0.0;
  double l2 = 0.0;
  std::size_t iterations_used = 0;
};

// Per-iteration observer for the iterative attacks.
using IterateHook = std::function<void(const Tensor&)>;

namespace detail {

template <DifferentiableClassifier M>
std::size_t predicted_label(const M& model, const Tensor& x) {
  return argmax(M::logits(model.trace(x)));
}

template <DifferentiableClassifier M>
AttackResult finish(const M& model, const Tensor& original, Tensor adversarial, std::size_t label,
                    std::size_t original_pred, std::size_t iterations) {
  AttackResult r;
  r.original = original;
  r.adversarial = std::move(adversarial);
  r.true_label = label;
  r.original_pred = original_pred;
  r.adversarial_pred = predicted_label(model, r.adversarial);
  r.success = r.adversarial_pred != label;
  r.l_inf = max_abs_diff(r.adversarial, r.original);
  r.l2 = l2_distance(r.adversarial, r.original);
  r.iterations_used = iterations;
  return r;
}

// Gradient of the true-label cross-entropy with respect to the input.
template <DifferentiableClassifier M>
Tensor loss_gradient(const M& model, const typename M::Trace& t, std::size_t label) {
  Tensor g = model.input_vjp(t, softmax_xent_grad(M::logits(t), label));
  if (!g.all_finite()) throw std::runtime_error("attack: non-finite input gradient");
  return g;
}

inline double sign(double v) { return (v > 0.0) - (v < 0.0); }

inline void clip_unit(Tensor& x) {
  for (double& v : x.values()) v = std::clamp(v, 0.0, 1.0);
}

inline void check_unit_image(const Tensor& x) {
  for (double v : x.values())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("attack: image has pixel outside [0,1]");
}

template <DifferentiableClassifier M>
void check_label(const M& model, std::size_t label) {
  if (label >= model.num_classes())
    throw std::invalid_argument("attack: label " + std::to_string(label) + " out of range");
}

// Signed-gradient ascent from `start`, projected onto the eps-ball around
// `original` and onto [0,1] after every step.
template <DifferentiableClassifier M>
Tensor iterate_sign_steps(const M& model, const Tensor& original, Tensor x, std::size_t label, double epsilon,
                          double alpha, std::size_t iterations, const IterateHook& hook) {
  for (std::size_t it = 0; it < iterations; ++it) {
    const Tensor g = loss_gradient(model, model.trace(x), label);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double stepped = x[i] + alpha * sign(g[i]);
      x[i] = std::clamp(std::clamp(stepped, original[i] - epsilon, original[i] + epsilon), 0.0, 1.0);
    }
    if (hook) hook(x);
  }
  return x;
}

}  // namespace detail

template <DifferentiableClassifier M>
AttackResult fgsm(const M& model, const Tensor& image, std::size_t label, double epsilon) {
  detail::check_unit_image(image);
  detail::check_label(model, label);
  if (epsilon < 0.0) throw std::invalid_argument("fgsm: negative epsilon");
  const auto t = model.trace(image);
  const std::size_t pred = argmax(M::logits(t));
  const Tensor g = detail::loss_gradient(model, t, label);
  Tensor adv = image;
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = std::clamp(image[i] + epsilon * detail::sign(g[i]), 0.0, 1.0);
  return detail::finish(model, image, std::move(adv), label, pred, 1);
}

template <DifferentiableClassifier M>
AttackResult bim(const M& model, const Tensor& image, std::size_t label, double epsilon, double alpha,
                 std::size_t iterations, const IterateHook& hook = {}) {
  detail::check_unit_image(image);
  detail::check_label(model, label);
  const std::size_t pred = detail::predicted_label(model, image);
  Tensor adv = detail::iterate_sign_steps(model, image, image, label, epsilon, alpha, iterations, hook);
  return detail::finish(model, image, std::move(adv), label, pred, iterations);
}

template <DifferentiableClassifier M>
AttackResult pgd(const M& model, const Tensor& image, std::size_t label, double epsilon, double alpha,
                 std::size_t iterations, std::uint64_t seed, const IterateHook& hook = {}) {
  detail::check_unit_image(image);
  detail::check_label(model, label);
  const std::size_t pred = detail::predicted_label(model, image);
  Rng rng(seed);
  Tensor start = image;
  for (std::size_t i = 0; i < start.size(); ++i)
    start[i] = std::clamp(image[i] + rng.uniform(-epsilon, epsilon), 0.0, 1.0);
  if (hook) hook(start);
  Tensor adv = detail::iterate_sign_steps(model, image, std::move(start), label, epsilon, alpha, iterations, hook);
  return detail::finish(model, image, std::move(adv), label, pred, iterations);
}

// Multi-class DeepFool: linearize every logit difference against the true
// class, step to the nearest linearized boundary, accumulate, and apply the
// accumulated step scaled by (1 + overshoot). Stops at the first label flip.
template <DifferentiableClassifier M>
AttackResult deepfool(const M& model, const Tensor& image, std::size_t label, double overshoot,
                      std::size_t max_iterations) {
  detail::check_unit_image(image);
  detail::check_label(model, label);
  const std::size_t k = model.num_classes();
  if (k < 2) throw std::invalid_argument("deepfool: need at least two classes");

  Tensor total(image.shape());
  Tensor x = image;
  std::size_t original_pred = label;
  std::size_t steps = 0;
  for (std::size_t it = 0; it <= max_iterations; ++it) {
    const auto t = model.trace(x);
    const auto z = M::logits(t);
    const std::size_t pred = argmax(z);
    if (it == 0) original_pred = pred;
    if (pred != label || it == max_iterations) break;

    double best_ratio = std::numeric_limits<double>::infinity();
    Tensor best_w;
    double best_f = 0.0, best_norm2 = 0.0;
    std::vector<double> weights(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      if (c == label) continue;
      std::fill(weights.begin(), weights.end(), 0.0);
      weights[c] = 1.0;
      weights[label] = -1.0;
      Tensor w = model.input_vjp(t, weights);
      double norm2 = 0.0;
      for (double v : w.values()) norm2 += v * v;
      if (!std::isfinite(norm2)) throw std::runtime_error("deepfool: non-finite gradient");
      if (norm2 == 0.0) continue;
      const double f = z[c] - z[label];
      const double ratio = std::abs(f) / std::sqrt(norm2);
      if (ratio < best_ratio) {
        best_ratio = ratio;
        best_w = std::move(w);
        best_f = f;
        best_norm2 = norm2;
      }
    }
    if (best_w.empty()) {
      throw std::runtime_error("deepfool: gradient of every logit difference is zero; no boundary direction");
    }
    const double scale = std::abs(best_f) / best_norm2;
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += scale * best_w[i];
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = std::clamp(image[i] + (1.0 + overshoot) * total[i], 0.0, 1.0);
    ++steps;
  }
  return detail::finish(model, image, std::move(x), label, original_pred, steps);
}

struct CwOptions {
  double c_init = 1e-3;
  std::size_t binary_steps = 9;
  std::size_t inner_steps = 1000;
  double lr = 0.01;
  double nudge = 1e-6;
  bool abort_early = true;
};

inline double cw_box(double w) { return 0.5 * (std::tanh(w) + 1.0); }

// Carlini-Wagner L2, untargeted, confidence 0. Minimizes
//   ||box(w) - x||^2 + c * max(Z_true - max_{i != true} Z_i, 0)
// over w with Adam; c starts at c_init and is adjusted by binary search
// (multiplied by 10 until a first success bounds it). Returns the lowest-L2
// successful image, or the original when every round fails.
template <DifferentiableClassifier M>
AttackResult carlini_wagner_l2(const M& model, const Tensor& image, std::size_t label, const CwOptions& opt) {
  detail::check_unit_image(image);
  detail::check_label(model, label);
  const std::size_t k = model.num_classes();
  const std::size_t pred0 = detail::predicted_label(model, image);
  if (pred0 != label) return detail::finish(model, image, image, label, pred0, 0);

  const std::size_t n = image.size();
  std::vector<double> w0(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double inner = image[i] * (1.0 - 2.0 * opt.nudge) + opt.nudge;
    w0[i] = std::atanh(2.0 * inner - 1.0);
  }

  double lower = 0.0, upper = 1e10, c = opt.c_init;
  double best_dist = std::numeric_limits<double>::infinity();
  std::optional<Tensor> best;
  std::size_t total_steps = 0;
  const std::size_t check_every = std::max<std::size_t>(1, (opt.inner_steps + 9) / 10);
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  for (std::size_t round = 0; round < opt.binary_steps; ++round) {
    std::vector<double> w = w0, m(n, 0.0), v(n, 0.0);
    bool round_success = false;
    double prev_loss = std::numeric_limits<double>::infinity();
    Tensor x(image.shape());
    std::vector<double> weights(k, 0.0);
    for (std::size_t step = 0; step < opt.inner_steps; ++step) {
      ++total_steps;
      for (std::size_t i = 0; i < n; ++i) x[i] = cw_box(w[i]);
      const auto t = model.trace(x);
      const auto z = M::logits(t);
      std::size_t other = label == 0 ? 1 : 0;
      for (std::size_t j = 0; j < k; ++j)
        if (j != label && z[j] > z[other]) other = j;
      const double margin = z[label] - z[other];
      double dist = 0.0;
      for (std::size_t i = 0; i < n; ++i) dist += (x[i] - image[i]) * (x[i] - image[i]);
      const double loss = dist + c * std::max(margin, 0.0);
      if (!std::isfinite(loss)) break;

      if (argmax(z) != label) {
        round_success = true;
        if (dist < best_dist) {
          best_dist = dist;
          best = x;
        }
      }
      if (opt.abort_early && step % check_every == 0) {
        if (loss > prev_loss * 0.9999) break;
        prev_loss = loss;
      }

      Tensor gz;
      if (margin > 0.0) {
        std::fill(weights.begin(), weights.end(), 0.0);
        weights[label] = c;
        weights[other] = -c;
        gz = model.input_vjp(t, weights);
      }
      const double t_step = static_cast<double>(step + 1);
      const double bc1 = 1.0 - std::pow(beta1, t_step), bc2 = 1.0 - std::pow(beta2, t_step);
      for (std::size_t i = 0; i < n; ++i) {
        double gx = 2.0 * (x[i] - image[i]);
        if (!gz.empty()) gx += gz[i];
        const double th = std::tanh(w[i]);
        const double gw = gx * 0.5 * (1.0 - th * th);
        m[i] = beta1 * m[i] + (1.0 - beta1) * gw;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gw * gw;
        w[i] -= opt.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + adam_eps);
      }
    }
    if (round_success) {
      upper = std::min(upper, c);
      if (upper < 1e9) c = 0.5 * (lower + upper);
    } else {
      lower = std::max(lower, c);
      c = upper < 1e9 ? 0.5 * (lower + upper) : c * 10.0;
    }
  }
  Tensor adv = best ? std::move(*best) : image;
  return detail::finish(model, image, std::move(adv), label, pred0, total_steps);
}

template <DifferentiableClassifier M>
AttackResult run_attack(const M& model, const Tensor& image, std::size_t label, const AttackConfig& config,
                        std::uint64_t seed) {
  switch (config.method) {
    case AttackMethod::FGSM:
      return fgsm(model, image, label, *config.epsilon);
    case AttackMethod::BIM:
      return bim(model, image, label, *config.epsilon, config.alpha, config.iterations);
    case AttackMethod::PGD:
      return pgd(model, image, label, *config.epsilon, config.alpha, config.iterations, seed);
    case AttackMethod::DeepFool:
      return deepfool(model, image, label, config.overshoot, config.iterations);
    case AttackMethod::CW: {
      CwOptions o;
      o.c_init = config.cw_c_init;
      o.binary_steps = config.cw_binary_steps;
      o.inner_steps = config.cw_inner_steps;
      o.lr = config.cw_lr;
      return carlini_wagner_l2(model, image, label, o);
    }
  }
  throw std::logic_error("run_attack: unknown method");
}

struct BatchOutcome {
  std::vector<AttackResult> successes;
  std::vector<std::size_t> indices;  // source index of each success
  std::size_t attempts = 0;
  // Attempts where the attack itself gave up (e.g. DeepFool on a flat
  // region); they count as unsuccessful.
  std::size_t aborted = 0;
  std::string first_abort;
  // Undefined for an empty batch.
  std::optional<double> success_rate;
};

// Attacks every image (each must be classified correctly) and keeps only the
// successful results. Sample i uses seed (config.seed XOR i). A per-image
// abort is recorded and the batch continues.
template <DifferentiableClassifier M>
BatchOutcome attack_batch(const M& model, std::span<const Tensor> images, std::span<const std::size_t> labels,
                          const AttackConfig& config) {
  config.validate();
  if (images.size() != labels.size()) throw std::invalid_argument("attack_batch: images/labels length mismatch");
  BatchOutcome out;
  out.attempts = images.size();
  if (images.empty()) return out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (detail::predicted_label(model, images[i]) != labels[i]) {
      throw std::invalid_argument("attack_batch: image " + std::to_string(i) +
                                  " is not classified correctly; filter before attacking");
    }
    AttackResult r;
    try {
      r = run_attack(model, images[i], labels[i], config, config.seed ^ static_cast<std::uint64_t>(i));
    } catch (const std::runtime_error& e) {
      if (out.aborted++ == 0) out.first_abort = "image " + std::to_string(i) + ": " + e.what();
      continue;
    }
    if (r.success) {
      out.successes.push_back(std::move(r));
      out.indices.push_back(i);
    }
  }
  out.success_rate = static_cast<double>(out.successes.size()) / static_cast<double>(out.attempts);
  return out;
}

}  // namespace sdefense
