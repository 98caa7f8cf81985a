#pragma once

// L2-regularized binary logistic regression:
//   minimize mean_i log(1 + exp(-s_i (w.x_i + b))) + l2/2 |w|^2,  s_i = +-1.
// The bias is not regularized. Training is full-batch and deterministic.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/features.hpp"

namespace sdefense {

struct LogRegOptions {
  double l2_strength = 1e-4;
  std::size_t max_iter = 1000;
  double tol = 1e-6;
  std::size_t memory = 10;
  // Fit on z-scored features (training mean/std), then fold the scaling back
  // into the stored weights. Raw spectra span several orders of magnitude,
  // which leaves the unscaled problem badly conditioned.
  bool standardize = false;
};

struct LogRegModel {
  std::vector<double> weights;
  double bias = 0.0;
  FeatureSetDescriptor descriptor;
  std::size_t iterations = 0;
  bool converged = false;

  double decision(std::span<const double> x) const {
    if (x.size() != weights.size()) {
      throw std::invalid_argument("logreg: feature dimension " + std::to_string(x.size()) + " does not match model " +
                                  std::to_string(weights.size()));
    }
    double z = bias;
    for (std::size_t i = 0; i < x.size(); ++i) z += weights[i] * x[i];
    return z;
  }
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(-m)) without overflow.
inline double logistic_loss(double margin) {
  if (margin > 0.0) return std::log1p(std::exp(-margin));
  return -margin + std::log1p(std::exp(margin));
}

inline double predict_score(const LogRegModel& model, std::span<const double> x) { return sigmoid(model.decision(x)); }

inline std::vector<double> predict_scores(const LogRegModel& model, const LabeledFeatureSet& data) {
  if (!(data.descriptor == model.descriptor)) {
    throw std::invalid_argument("logreg: features '" + data.descriptor.name() + "' do not match detector trained on '" +
                                model.descriptor.name() + "'");
  }
  std::vector<double> s(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) s[i] = predict_score(model, data.features.row(i));
  return s;
}

namespace detail {

struct LogRegObjective {
  const FeatureMatrix& x;
  const std::vector<int>& y;
  double l2;

  // Mean logistic loss + l2/2 |w|^2; fills gradient (weights then bias).
  double eval(const std::vector<double>& w, double b, std::vector<double>* gw, double* gb) const {
    const std::size_t n = x.rows(), d = x.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    if (gw) gw->assign(d, 0.0);
    if (gb) *gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = x.row(i);
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * row[j];
      const double s = y[i] == 1 ? 1.0 : -1.0;
      loss += logistic_loss(s * z);
      if (gw) {
        const double coef = (sigmoid(z) - (y[i] == 1 ? 1.0 : 0.0)) * inv_n;
        for (std::size_t j = 0; j < d; ++j) (*gw)[j] += coef * row[j];
        *gb += coef;
      }
    }
    loss *= inv_n;
    double wn = 0.0;
    for (std::size_t j = 0; j < d; ++j) wn += w[j] * w[j];
    loss += 0.5 * l2 * wn;
    if (gw)
      for (std::size_t j = 0; j < d; ++j) (*gw)[j] += l2 * w[j];
    return loss;
  }
};

}  // namespace detail

// Limited-memory BFGS (two-loop recursion, history `memory`) with Armijo
// backtracking; falls back to the steepest-descent direction whenever the
// quasi-Newton direction is not a descent direction. Converged when the
// gradient norm drops below tol.
inline LogRegModel train_logreg(const LabeledFeatureSet& data, const LogRegOptions& opt = {}) {
  data.validate();
  if (data.count(0) < 2 || data.count(1) < 2) throw std::invalid_argument("train_logreg: need >= 2 samples per class");
  const std::size_t d = data.features.cols();
  const std::size_t p = d + 1;  // weights then bias
  const std::size_t n = data.features.rows();
  std::vector<double> mean(d, 0.0), scale(d, 1.0);
  FeatureMatrix scaled;
  if (opt.standardize) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += data.features.row(i)[j];
    for (double& v : mean) v /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = data.features.row(i)[j] - mean[j];
        var[j] += c * c;
      }
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(n));
      if (sd > 0.0) scale[j] = sd;
    }
    std::vector<double> z(data.features.data());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) z[i * d + j] = (z[i * d + j] - mean[j]) / scale[j];
    scaled = FeatureMatrix(n, d, std::move(z));
  }
  detail::LogRegObjective obj{opt.standardize ? scaled : data.features, data.labels, opt.l2_strength};
  auto evaluate = [&](const std::vector<double>& theta, std::vector<double>* grad) {
    std::vector<double> w(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(d));
    std::vector<double> gw;
    double gb = 0.0;
    const double loss = obj.eval(w, theta[d], grad ? &gw : nullptr, grad ? &gb : nullptr);
    if (grad) {
      gw.push_back(gb);
      *grad = std::move(gw);
    }
    return loss;
  };
  auto dot = [p](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < p; ++i) s += a[i] * b[i];
    return s;
  };

  LogRegModel m;
  m.descriptor = data.descriptor;
  std::vector<double> theta(p, 0.0), grad, dir(p), trial(p), trial_grad;
  double loss = evaluate(theta, &grad);
  if (!std::isfinite(loss)) throw std::runtime_error("train_logreg: non-finite loss");
  std::vector<std::vector<double>> s_hist, y_hist;
  std::vector<double> rho_hist;
  std::vector<double> alpha(opt.memory);

  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    if (std::sqrt(dot(grad, grad)) < opt.tol) {
      m.converged = true;
      break;
    }
    dir = grad;
    const std::size_t h = s_hist.size();
    for (std::size_t i = h; i-- > 0;) {
      alpha[i] = rho_hist[i] * dot(s_hist[i], dir);
      for (std::size_t j = 0; j < p; ++j) dir[j] -= alpha[i] * y_hist[i][j];
    }
    const double gamma = h ? dot(s_hist[h - 1], y_hist[h - 1]) / dot(y_hist[h - 1], y_hist[h - 1])
                           : 1.0 / std::max(1.0, std::sqrt(dot(grad, grad)));
    for (double& v : dir) v *= gamma;
    for (std::size_t i = 0; i < h; ++i) {
      const double beta = rho_hist[i] * dot(y_hist[i], dir);
      for (std::size_t j = 0; j < p; ++j) dir[j] += (alpha[i] - beta) * s_hist[i][j];
    }
    double slope = -dot(grad, dir);
    if (!(slope < 0.0)) {
      dir = grad;
      slope = -dot(grad, grad);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    double t = 1.0;
    double trial_loss = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      for (std::size_t j = 0; j < p; ++j) trial[j] = theta[j] - t * dir[j];
      trial_loss = evaluate(trial, nullptr);
      if (std::isfinite(trial_loss) && trial_loss <= loss + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      m.converged = true;  // no further decrease representable
      break;
    }
    trial_loss = evaluate(trial, &trial_grad);
    std::vector<double> sv(p), yv(p);
    for (std::size_t j = 0; j < p; ++j) {
      sv[j] = trial[j] - theta[j];
      yv[j] = trial_grad[j] - grad[j];
    }
    const double sy = dot(sv, yv);
    if (sy > 1e-12 * std::sqrt(dot(sv, sv) * dot(yv, yv))) {
      if (s_hist.size() == opt.memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
      s_hist.push_back(std::move(sv));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
    }
    theta.swap(trial);
    grad.swap(trial_grad);
    loss = trial_loss;
    m.iterations = it + 1;
  }
  m.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(d));
  m.bias = theta[d];
  if (opt.standardize) {
    for (std::size_t j = 0; j < d; ++j) {
      m.weights[j] /= scale[j];
      m.bias -= m.weights[j] * mean[j];
    }
  }
  return m;
}

}  // namespace sdefense
