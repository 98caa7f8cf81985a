#pragma once

// Paired benign/adversarial datasets: only correctly classified inputs are
// attacked and only successful attacks are kept, together with their
// originals.
//
// SDPR container (little-endian):
//   "SDPR"  u16 version  u64 key hash
//   u32 pairs  u32 attempts  u32 aborted  u32 C  u32 H  u32 W
//   per pair: u32 label, u32 source index, C*H*W real64 benign, C*H*W real64 adversarial
//   u64 FNV-1a-64 checksum

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/attacks.hpp"
#include "sdefense/binary_io.hpp"
#include "sdefense/model.hpp"

namespace sdefense {

struct PairedDataset {
  std::string attack;  // method name
  std::vector<Tensor> benign;
  std::vector<Tensor> adversarial;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> source_index;  // position in the attacked image list
  std::size_t attempts = 0;
  std::size_t aborted = 0;  // attempts the attack gave up on

  std::size_t size() const { return benign.size(); }
  std::optional<double> success_rate() const {
    if (attempts == 0) return std::nullopt;
    return static_cast<double>(size()) / static_cast<double>(attempts);
  }
  friend bool operator==(const PairedDataset&, const PairedDataset&) = default;
};

// Canonical text form of an attack configuration, used in keys and provenance.
inline std::string attack_key(const AttackConfig& c) {
  std::string s = to_string(c.method);
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.17g", v);
    return std::string(b);
  };
  if (c.epsilon) s += ",eps=" + num(*c.epsilon) + ",alpha=" + num(c.alpha);
  s += ",iter=" + std::to_string(c.iterations);
  if (c.method == AttackMethod::DeepFool) s += ",overshoot=" + num(c.overshoot);
  if (c.method == AttackMethod::CW) {
    s += ",c0=" + num(c.cw_c_init) + ",bs=" + std::to_string(c.cw_binary_steps) +
         ",steps=" + std::to_string(c.cw_inner_steps) + ",lr=" + num(c.cw_lr);
  }
  s += ",seed=" + std::to_string(c.seed);
  return s;
}

// Keeps the correctly classified images of `set` (at most `limit`, 0 = all).
inline LabeledImageSet correctly_classified(const ModelParams& params, const LabeledImageSet& set,
                                            std::size_t limit = 0) {
  LabeledImageSet out;
  for (std::size_t i = 0; i < set.size() && (limit == 0 || out.size() < limit); ++i) {
    if (predict(params, set.images[i]).label == set.labels[i]) {
      out.images.push_back(set.images[i]);
      out.labels.push_back(set.labels[i]);
    }
  }
  return out;
}

inline PairedDataset build_attack_dataset(const ModelParams& params, const LabeledImageSet& test_set,
                                          const AttackConfig& config, std::size_t limit = 0) {
  const LabeledImageSet correct = correctly_classified(params, test_set, limit);
  if (correct.size() == 0) {
    throw std::runtime_error("build_attack_dataset: none of the " + std::to_string(test_set.size()) +
                             " test images is classified correctly; nothing to attack");
  }
  const Network net(params);
  const BatchOutcome out = attack_batch(net, correct.images, correct.labels, config);
  PairedDataset p;
  p.attack = to_string(config.method);
  p.attempts = out.attempts;
  p.aborted = out.aborted;
  for (std::size_t i = 0; i < out.successes.size(); ++i) {
    p.benign.push_back(out.successes[i].original);
    p.adversarial.push_back(out.successes[i].adversarial);
    p.labels.push_back(out.successes[i].true_label);
    p.source_index.push_back(out.indices[i]);
  }
  return p;
}

// Re-checks both pair invariants against the model; returns the first
// violation, if any.
inline std::optional<std::string> check_pairs(const ModelParams& params, const PairedDataset& p) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (predict(params, p.benign[i]).label != p.labels[i])
      return "pair " + std::to_string(i) + ": benign image is misclassified";
    if (predict(params, p.adversarial[i]).label == p.labels[i])
      return "pair " + std::to_string(i) + ": adversarial image is classified correctly";
  }
  return std::nullopt;
}

inline constexpr std::uint16_t kPairsVersion = 1;

inline std::string encode_pairs(const PairedDataset& p, std::uint64_t key_hash) {
  ByteWriter w;
  w.raw("SDPR");
  w.u16(kPairsVersion);
  w.u64(key_hash);
  w.u32(static_cast<std::uint32_t>(p.size()));
  w.u32(static_cast<std::uint32_t>(p.attempts));
  w.u32(static_cast<std::uint32_t>(p.aborted));
  const Shape s = p.size() ? p.benign[0].shape() : Shape{0, 0, 0};
  if (s.size() != 3) throw std::invalid_argument("encode_pairs: images must be [C,H,W]");
  for (std::size_t d : s) w.u32(static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.benign[i].shape() != s || p.adversarial[i].shape() != s)
      throw std::invalid_argument("encode_pairs: inconsistent image shapes");
    w.u32(static_cast<std::uint32_t>(p.labels[i]));
    w.u32(static_cast<std::uint32_t>(p.source_index[i]));
    for (double v : p.benign[i].values()) w.f64(v);
    for (double v : p.adversarial[i].values()) w.f64(v);
  }
  return w.finish();
}

struct DecodedPairs {
  PairedDataset pairs;
  std::uint64_t key_hash = 0;
};

inline DecodedPairs decode_pairs(std::string bytes, const std::string& attack, const std::string& what = "SDPR") {
  ByteReader r(std::move(bytes), what);
  r.expect_magic("SDPR");
  const std::uint16_t version = r.u16();
  if (version != kPairsVersion) r.fail("unsupported version " + std::to_string(version));
  DecodedPairs d;
  d.key_hash = r.u64();
  const std::uint32_t n = r.u32();
  d.pairs.attack = attack;
  d.pairs.attempts = r.u32();
  d.pairs.aborted = r.u32();
  Shape s(3);
  for (auto& v : s) v = r.u32();
  const std::size_t numel = s[0] * s[1] * s[2];
  if (n > 0 && r.remaining() != static_cast<std::size_t>(n) * (8 + 16 * numel))
    r.fail("payload size does not match " + std::to_string(n) + " pairs");
  for (std::uint32_t i = 0; i < n; ++i) {
    d.pairs.labels.push_back(r.u32());
    d.pairs.source_index.push_back(r.u32());
    Tensor b(s), a(s);
    for (std::size_t k = 0; k < numel; ++k) b[k] = r.f64();
    for (std::size_t k = 0; k < numel; ++k) a[k] = r.f64();
    d.pairs.benign.push_back(std::move(b));
    d.pairs.adversarial.push_back(std::move(a));
  }
  r.expect_end();
  return d;
}

// Pair-atomic split: a seeded shuffle of pair indices, the first
// round(fraction * n) go to training.
struct PairSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline PairSplit split_pairs(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split_pairs: fraction outside (0,1)");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train < 2 || n - n_train < 2) {
    throw std::runtime_error("split_pairs: " + std::to_string(n) +
                             " pairs are too few for a split with >= 2 pairs on each side");
  }
  PairSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

}  // namespace sdefense
