#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "sdefense/checkpoint.hpp"
#include "sdefense/model.hpp"
#include "support.hpp"

using namespace sdefense;
using testing_support::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.height = c.width = 8;
  c.conv_blocks = {{3, 1}, {4, 2}};
  c.hidden_units = 6;
  c.num_classes = 3;
  c.seed = 11;
  return c;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST(Model, LayoutCountsParametersAndActivations) {
  const ModelConfig c = tiny_config();
  const ModelParams p = init_params(c);
  // conv 3->3, 3->4, 4->4, dense 16->6, dense 6->3
  const std::size_t want = (3 * 3 * 9 + 3) + (4 * 3 * 9 + 4) + (4 * 4 * 9 + 4) + (16 * 6 + 6) + (6 * 3 + 3);
  EXPECT_EQ(p.values.size(), want);
  EXPECT_EQ(parameter_count(c), want);
  EXPECT_EQ(p.activation_count(), 4u);
}

TEST(Model, ConfigValidation) {
  ModelConfig c = tiny_config();
  c.height = c.width = 6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.conv_blocks.clear();
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Model, InitIsSeeded) {
  ModelConfig c = tiny_config();
  EXPECT_EQ(init_params(c).values, init_params(c).values);
  c.seed = 12;
  EXPECT_NE(init_params(c).values, init_params(tiny_config()).values);
}

TEST(Model, ParameterGradientMatchesFiniteDifferences) {
  const ModelParams p = init_params(tiny_config());
  Rng rng(5);
  const Tensor x = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
  const GradientPair g = loss_and_gradients(p, x, 1);
  ASSERT_EQ(g.grad_params.size(), p.values.size());
  const double h = 1e-6;
  for (int k = 0; k < 60; ++k) {
    const std::size_t i = rng.below(p.values.size());
    ModelParams a = p, b = p;
    a.values[i] += h;
    b.values[i] -= h;
    const double fd = (loss_and_gradients(a, x, 1).loss - loss_and_gradients(b, x, 1).loss) / (2 * h);
    EXPECT_LT(rel_err(fd, g.grad_params[i]), 1e-4) << "param " << i;
  }
}

TEST(Model, InputGradientMatchesFiniteDifferences) {
  const ModelParams p = init_params(tiny_config());
  Rng rng(6);
  const Tensor x = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
  const GradientPair g = loss_and_gradients(p, x, 2);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); i += 7) {
    Tensor a = x, b = x;
    a[i] += h;
    b[i] -= h;
    const double fd = (loss_and_gradients(p, a, 2).loss - loss_and_gradients(p, b, 2).loss) / (2 * h);
    EXPECT_LT(rel_err(fd, g.grad_input[i]), 1e-4) << "pixel " << i;
  }
}

TEST(Model, PredictRejectsWrongShape) {
  const ModelParams p = init_params(tiny_config());
  EXPECT_THROW(predict(p, Tensor({3, 16, 16})), std::invalid_argument);
}

TEST(Model, FeatureMapsFollowRequestOrder) {
  const ModelParams p = init_params(tiny_config());
  Rng rng(7);
  const Tensor x = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
  const std::size_t ords[] = {4, 0, 2};
  const auto maps = feature_maps(p, x, ords);
  ASSERT_EQ(maps.size(), 3u);
  EXPECT_EQ(maps[0].shape(), Shape{6});
  EXPECT_EQ(maps[1], x);
  EXPECT_EQ(maps[2].shape(), (Shape{4, 4, 4}));
  for (double v : maps[2].values()) EXPECT_GE(v, 0.0);
  const std::size_t bad[] = {5};
  EXPECT_THROW(feature_maps(p, x, bad), std::invalid_argument);
}

TEST(Model, SplicingAnActivationReproducesLogits) {
  const ModelParams p = init_params(tiny_config());
  Rng rng(8);
  const Tensor x = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
  const auto want = predict(p, x).logits;
  for (std::size_t o = 0; o <= p.activation_count(); ++o) {
    const std::size_t ord[] = {o};
    const auto got = logits_from_activation(p, o, feature_maps(p, x, ord)[0]);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_DOUBLE_EQ(got[k], want[k]) << "ordinal " << o;
  }
}

TEST(Model, TrainingLearnsAndIsDeterministic) {
  // Class c brightens channel c; easy enough for a few epochs.
  Rng rng(3);
  LabeledImageSet data;
  for (std::size_t i = 0; i < 90; ++i) {
    Tensor x = random_tensor({3, 8, 8}, rng, 0.2, 0.5);
    for (std::size_t k = 0; k < 64; ++k) x[(i % 3) * 64 + k] += 0.4;
    data.images.push_back(std::move(x));
    data.labels.push_back(i % 3);
  }
  TrainLog log;
  const ModelParams p = train(tiny_config(), data, 10, 0.02, &log);
  ASSERT_EQ(log.epoch_loss.size(), 10u);
  EXPECT_LT(log.epoch_loss.back(), 0.5 * log.epoch_loss.front());
  EXPECT_GT(accuracy(p, data), 0.9);
  EXPECT_EQ(train(tiny_config(), data, 10, 0.02).values, p.values);
}

TEST(Model, TrainRejectsBadLabels) {
  LabeledImageSet s;
  s.images.push_back(Tensor({3, 8, 8}, 0.5));
  s.labels.push_back(7);
  EXPECT_THROW(train(tiny_config(), s, 1, 0.01), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
  const ModelParams p = init_params(tiny_config());
  const ModelParams q = decode_checkpoint(encode_checkpoint(p));
  EXPECT_EQ(q.config, p.config);
  EXPECT_EQ(q.values, p.values);
  const auto path = std::filesystem::temp_directory_path() / "sdefense_test_model.sdck";
  save_checkpoint(p, path);
  EXPECT_EQ(load_checkpoint(path).values, p.values);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::string bytes = encode_checkpoint(init_params(tiny_config()));
  std::string flipped = bytes;
  flipped[40] ^= 1;
  EXPECT_THROW(decode_checkpoint(flipped), std::runtime_error);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), std::runtime_error);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), std::runtime_error);
}
