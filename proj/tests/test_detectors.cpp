#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "sdefense/comparators.hpp"
#include "sdefense/lid.hpp"
#include "sdefense/logreg.hpp"
#include "sdefense/mahalanobis.hpp"
#include "sdefense/metrics.hpp"

using namespace sdefense;

namespace {

LabeledFeatureSet make_set(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels) {
  LabeledFeatureSet s;
  for (const auto& r : rows) s.features.append_row(r);
  s.labels = labels;
  return s;
}

// Pair-counting definition of AUC as an exact rational (2*wins + ties) / (2*P*N).
std::optional<double> auc_by_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  std::uint64_t num = 0, pos = 0, neg = 0;
  for (int l : y) (l == 1 ? pos : neg)++;
  if (pos == 0 || neg == 0) return std::nullopt;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) num += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
  return static_cast<double>(num) / static_cast<double>(2 * pos * neg);
}

}  // namespace

TEST(Auc, MatchesPairCountingExactly) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores so that ties are common.
      s[i] = static_cast<double>(rng.below(8)) / 4.0;
      y[i] = static_cast<int>(rng.below(2));
    }
    const auto want = auc_by_pairs(s, y);
    const auto got = auc_score(s, y);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (want) EXPECT_EQ(*got, *want) << "trial " << trial;
  }
}

TEST(Auc, KnownValues) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(*auc_score(s, y), 0.75);
  const std::vector<int> one_class{1, 1, 1, 1};
  EXPECT_FALSE(auc_score(s, one_class).has_value());
}

TEST(Metrics, CountsAndUndefinedRatios) {
  const std::vector<double> s{0.9, 0.2, 0.6, 0.4, 0.5};
  const std::vector<int> y{1, 1, 0, 0, 0};
  const EvalReport r = compute_metrics(s, y);
  EXPECT_EQ(r.counts, (ConfusionCounts{1, 1, 2, 1}));
  EXPECT_DOUBLE_EQ(r.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  const std::vector<double> low{0.1, 0.2};
  const std::vector<int> yl{1, 0};
  const EvalReport u = compute_metrics(low, yl);
  EXPECT_TRUE(u.precision_undefined);
  EXPECT_FALSE(u.recall_undefined);
  EXPECT_EQ(u.recall, 0.0);
  EXPECT_THROW(compute_metrics(std::vector<double>{}, std::vector<int>{}), std::invalid_argument);
}

TEST(LogReg, SeparatesShiftedGaussians) {
  Rng rng(2);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 400; ++i) {
    const int y = i % 2;
    rows.push_back({rng.normal() + (y ? 2.0 : -2.0), rng.normal()});
    labels.push_back(y);
  }
  const LogRegModel m = train_logreg(make_set(rows, labels));
  EXPECT_TRUE(m.converged);
  EXPECT_GT(m.weights[0], 1.0);
  EXPECT_LT(std::abs(m.weights[1]), 0.2 * m.weights[0]);
  EXPECT_LT(std::abs(m.bias), 0.2 * m.weights[0]);
}

TEST(LogReg, RecoversBayesBoundaryDirection) {
  // Two unit-covariance Gaussians with means +/- mu, mu rotated 5 degrees:
  // the Bayes boundary is the line through the origin normal to mu.
  const double angle = 5.0 * std::numbers::pi / 180.0;
  Rng rng(3);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 10000; ++i) {
    const int y = i % 2;
    const double sgn = y ? 1.0 : -1.0;
    rows.push_back({sgn * std::cos(angle) + rng.normal(), sgn * std::sin(angle) + rng.normal()});
    labels.push_back(y);
  }
  LogRegOptions o;
  o.l2_strength = 0.0;
  const LogRegModel m = train_logreg(make_set(rows, labels), o);
  const double learned = std::atan2(m.weights[1], m.weights[0]);
  EXPECT_NEAR(learned, angle, 2.0 * std::numbers::pi / 180.0);
  EXPECT_NEAR(m.bias, 0.0, 0.05);
  // The Bayes weight vector is 2 mu.
  EXPECT_NEAR(std::hypot(m.weights[0], m.weights[1]), 2.0, 0.15);
}

TEST(LogReg, StandardizedFitIsScaleFree) {
  // Same problem with one feature blown up by 1e4: with l2 = 0 the
  // standardized fit reaches the same decision function, expressed in raw units.
  Rng rng(8);
  std::vector<std::vector<double>> rows, big;
  std::vector<int> labels;
  for (int i = 0; i < 300; ++i) {
    const int y = i % 2;
    const double a = rng.normal() + (y ? 0.7 : -0.7), b = rng.normal() + (y ? 0.3 : -0.3);
    rows.push_back({a, b});
    big.push_back({a, 1e4 * b});
    labels.push_back(y);
  }
  LogRegOptions o;
  o.l2_strength = 0.0;
  o.standardize = true;
  const LogRegModel m = train_logreg(make_set(rows, labels), o);
  const LogRegModel s = train_logreg(make_set(big, labels), o);
  EXPECT_TRUE(s.converged);
  EXPECT_NEAR(s.weights[0], m.weights[0], 1e-4);
  EXPECT_NEAR(s.weights[1] * 1e4, m.weights[1], 1e-4);
  EXPECT_NEAR(s.bias, m.bias, 1e-4);
  o.standardize = false;
  const LogRegModel raw = train_logreg(make_set(rows, labels), o);
  EXPECT_NEAR(raw.weights[0], m.weights[0], 1e-4);
  EXPECT_NEAR(raw.bias, m.bias, 1e-4);
}

TEST(LogReg, RejectsMismatchedFeatures) {
  LabeledFeatureSet s = make_set({{0.0}, {0.1}, {1.0}, {1.1}}, {0, 0, 1, 1});
  const LogRegModel m = train_logreg(s);
  LabeledFeatureSet other = s;
  other.descriptor.kind = FeatureKind::LID;
  EXPECT_THROW(predict_scores(m, other), std::invalid_argument);
  EXPECT_THROW(train_logreg(make_set({{0.0}, {1.0}, {2.0}}, {0, 1, 1})), std::invalid_argument);
}

TEST(Comparators, KnnMajorityVote) {
  const LabeledFeatureSet s = make_set({{0.0}, {0.1}, {0.2}, {1.0}, {1.1}}, {0, 0, 1, 1, 1});
  EXPECT_EQ(knn_classify(s, std::vector<double>{0.05}, 3), 0);
  EXPECT_EQ(knn_classify(s, std::vector<double>{1.05}, 3), 1);
  EXPECT_EQ(knn_classify(s, std::vector<double>{0.0}, 5), 1);
  EXPECT_THROW(knn_classify(s, std::vector<double>{0.0}, 2), std::invalid_argument);
}

TEST(Comparators, GaussianNaiveBayes) {
  const LabeledFeatureSet s = make_set({{0.0, 5.0}, {0.2, 5.5}, {-0.2, 4.5}, {3.0, 5.0}, {3.2, 5.4}, {2.8, 4.6}},
                                       {0, 0, 0, 1, 1, 1});
  const GaussianNB m = fit_gnb(s);
  EXPECT_DOUBLE_EQ(m.mean[1][0], 3.0);
  EXPECT_EQ(gnb_classify(m, std::vector<double>{0.4, 5.0}), 0);
  EXPECT_EQ(gnb_classify(m, std::vector<double>{2.5, 5.0}), 1);
  // Constant feature: the variance floor keeps the likelihood finite.
  const LabeledFeatureSet c = make_set({{1.0}, {1.0}, {2.0}, {2.0}}, {0, 0, 1, 1});
  EXPECT_EQ(gnb_classify(c, std::vector<double>{1.0}), 0);
  EXPECT_TRUE(std::isfinite(gnb_log_likelihood(fit_gnb(c), 1, std::vector<double>{1.0})));
}

TEST(Lid, UniformBallRecoversDimension) {
  Rng rng(4);
  const std::size_t dim = 5, n = 2000;
  FeatureMatrix pts(0, dim);
  while (pts.rows() < n) {
    std::vector<double> p(dim);
    double r2 = 0.0;
    for (double& v : p) {
      v = rng.uniform(-1.0, 1.0);
      r2 += v * v;
    }
    if (r2 <= 1.0) pts.append_row(p);
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += lid_estimate(pts.row(i), pts, 20).value;
  mean /= static_cast<double>(n);
  EXPECT_NEAR(mean, 5.0, 1.5);
}

TEST(Lid, LineIsOneDimensionalAndScaleInvariant) {
  Rng rng(5);
  FeatureMatrix line(0, 3), scaled(0, 3);
  for (int i = 0; i < 500; ++i) {
    const double t = rng.uniform(0.0, 1.0);
    line.append_row(std::vector<double>{t, 2 * t, -t});
    scaled.append_row(std::vector<double>{7 * t, 14 * t, -7 * t});
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < 500; ++i) {
    const double a = lid_estimate(line.row(i), line, 20).value;
    const double b = lid_estimate(scaled.row(i), scaled, 20).value;
    EXPECT_NEAR(a, b, 1e-9 * a);
    mean += a;
  }
  EXPECT_NEAR(mean / 500.0, 1.0, 0.3);
}

TEST(Lid, DegenerateNeighborhoods) {
  EXPECT_TRUE(lid_from_distances({0.0, 0.0, 0.0}, 2).degenerate);
  EXPECT_TRUE(lid_from_distances({}, 2).degenerate);
  const LidEstimate e = lid_from_distances({0.0, 1.0, 2.0, 4.0}, 3);
  EXPECT_FALSE(e.degenerate);
  EXPECT_NEAR(e.value, -1.0 / (0.5 * (std::log(0.5) + 0.0)), 1e-12);
}

TEST(Lid, ScoresAreSeeded) {
  Rng rng(6);
  FeatureMatrix pool(0, 2);
  for (int i = 0; i < 150; ++i) pool.append_row(std::vector<double>{rng.normal(), rng.normal()});
  const std::vector<std::vector<double>> sample{{0.1, 0.2}};
  const std::vector<FeatureMatrix> ref{pool};
  LIDConfig c;
  c.batches = 3;
  EXPECT_EQ(lid_scores(sample, ref, c, 9), lid_scores(sample, ref, c, 9));
  EXPECT_NE(lid_scores(sample, ref, c, 9), lid_scores(sample, ref, c, 10));
  c.batch_size = 200;
  EXPECT_THROW(lid_scores(sample, ref, c, 9), std::invalid_argument);
}

TEST(Mahalanobis, MatchesEigenReference) {
  Rng rng(7);
  const std::size_t d = 4, n = 120, classes = 3;
  FeatureMatrix f(0, d);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<double>(c) * (j + 1.0) + rng.normal();
    row[1] += 0.5 * row[0];
    f.append_row(row);
    labels.push_back(c);
  }
  const GaussianLayerStats s = fit_gaussian_layer(f, labels, classes);
  EXPECT_EQ(s.ridge, 0.0);

  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = f.row(i)[j];
  std::vector<Eigen::VectorXd> mu(classes, Eigen::VectorXd::Zero(d));
  for (std::size_t i = 0; i < n; ++i) mu[labels[i]] += x.row(i).transpose() / static_cast<double>(n / classes);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd c = x.row(i).transpose() - mu[labels[i]];
    cov += c * c.transpose() / static_cast<double>(n);
  }
  const Eigen::MatrixXd inv = cov.inverse();
  const std::vector<double> q{0.3, -1.0, 2.0, 0.7};
  const Eigen::Map<const Eigen::VectorXd> qv(q.data(), d);
  double best = -1e300;
  for (std::size_t c = 0; c < classes; ++c) {
    const Eigen::VectorXd diff = qv - mu[c];
    const double want = diff.dot(inv * diff);
    EXPECT_NEAR(mahalanobis_sq(s, c, q), want, 1e-9 * want);
    best = std::max(best, -want);
  }
  EXPECT_NEAR(mahalanobis_confidence(s, q), best, 1e-9 * std::abs(best));
}

TEST(Mahalanobis, ClassMeanScoresZeroExactly) {
  Rng rng(8);
  FeatureMatrix f(0, 3);
  std::vector<std::size_t> labels;
  for (int i = 0; i < 60; ++i) {
    f.append_row(std::vector<double>{rng.normal() + i % 2, rng.normal(), rng.normal() * 3});
    labels.push_back(i % 2);
  }
  const GaussianLayerStats s = fit_gaussian_layer(f, labels, 2);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(mahalanobis_sq(s, c, s.class_means[c]), 0.0);
    EXPECT_EQ(mahalanobis_confidence(s, s.class_means[c]), 0.0);
  }
}

TEST(Mahalanobis, SingularCovarianceGetsRidge) {
  FeatureMatrix f(0, 2);
  std::vector<std::size_t> labels;
  for (int i = 0; i < 10; ++i) {
    f.append_row(std::vector<double>{static_cast<double>(i), 2.0 * i});
    labels.push_back(i % 2);
  }
  const GaussianLayerStats s = fit_gaussian_layer(f, labels, 2);
  EXPECT_GT(s.ridge, 0.0);
  EXPECT_TRUE(std::isfinite(mahalanobis_sq(s, 0, std::vector<double>{1.0, 0.0})));
  labels.assign(10, 0);
  EXPECT_THROW(fit_gaussian_layer(f, labels, 2), std::invalid_argument);
}
