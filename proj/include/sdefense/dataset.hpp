#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdefense/model.hpp"
#include "sdefense/rng.hpp"

namespace sdefense {

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

// CIFAR binary batch: per record one label byte followed by 3072 pixel bytes
// (R, G, B planes, each 32x32 row-major). Pixels are scaled by 1/255.
inline LabeledImageSet parse_cifar(const std::vector<unsigned char>& bytes) {
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t complete = bytes.size() / kCifarRecord;
    throw std::runtime_error("CIFAR data: size " + std::to_string(bytes.size()) + " is not a multiple of " +
                             std::to_string(kCifarRecord) + "; truncated record at byte offset " +
                             std::to_string(complete * kCifarRecord));
  }
  LabeledImageSet set;
  const std::size_t n = bytes.size() / kCifarRecord;
  set.images.reserve(n);
  set.labels.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord;
    set.labels.push_back(rec[0]);
    Tensor img({3, kCifarSide, kCifarSide});
    for (std::size_t i = 0; i < kCifarPixels; ++i) img[i] = static_cast<double>(rec[1 + i]) / 255.0;
    set.images.push_back(std::move(img));
  }
  return set;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline LabeledImageSet ingest_cifar(const std::filesystem::path& path) { return parse_cifar(read_file_bytes(path)); }

// Quantizes to bytes (round to nearest) in the CIFAR record layout.
inline void write_cifar(const LabeledImageSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t r = 0; r < set.size(); ++r) {
    if (set.images[r].shape() != Shape{3, kCifarSide, kCifarSide})
      throw std::invalid_argument("write_cifar: image is not 3x32x32");
    if (set.labels[r] > 255) throw std::invalid_argument("write_cifar: label does not fit a byte");
    out.put(static_cast<char>(set.labels[r]));
    for (double v : set.images[r].values())
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
}

struct SynthOptions {
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 100;
  std::size_t image_side = 32;
  std::uint64_t seed = 0;
  double noise_sigma = 0.04;
  // Upper bound on the amplitude of the other classes' gratings mixed into
  // every image.
  double distractor_amplitude = 0.0;
  // Per-image pixel noise is drawn from [noise_sigma, noise_sigma_max] when
  // the upper bound is larger.
  double noise_sigma_max = 0.0;
  // Random gratings anywhere in the spectrum, amplitude ~ clutter_amplitude / radius.
  std::size_t clutter_waves = 0;
  double clutter_amplitude = 0.0;
};

// Class-conditional textures. Each class owns a dominant grating (spatial
// frequency and orientation); every image adds a random smooth background,
// a random color mix, grating phase/amplitude jitter and white pixel noise.
inline Tensor synth_image(std::size_t cls, const SynthOptions& opt, Rng& rng) {
  const std::size_t side = opt.image_side;
  const double n = static_cast<double>(side);
  const double two_pi = 2.0 * std::numbers::pi;
  struct Grating {
    double kx, ky, ph, a;
  };
  // Dominant frequencies sit in the middle of the spectrum: between N/8 and N/4 cycles.
  auto grating = [&](std::size_t k, double amp) {
    const double freq = n / 8.0 + (n / 8.0) * static_cast<double>(k % 2) + rng.uniform(-0.4, 0.4);
    const double theta = std::numbers::pi * static_cast<double>(k) / static_cast<double>(opt.num_classes) +
                         rng.uniform(-0.12, 0.12);
    return Grating{freq * std::cos(theta) / n, freq * std::sin(theta) / n, rng.uniform(0.0, two_pi), amp};
  };
  std::vector<Grating> gratings{grating(cls, rng.uniform(0.06, 0.16))};
  if (opt.distractor_amplitude > 0.0)
    for (std::size_t k = 0; k < opt.num_classes; ++k)
      if (k != cls) gratings.push_back(grating(k, rng.uniform(0.0, opt.distractor_amplitude)));

  // Smooth background: a few random low-frequency waves.
  struct Wave {
    double fx, fy, ph, a;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i)
    waves.push_back({rng.uniform(-1.5, 1.5) / n, rng.uniform(-1.5, 1.5) / n, rng.uniform(0.0, two_pi),
                     rng.uniform(0.02, 0.1)});
  for (std::size_t i = 0; i < opt.clutter_waves; ++i) {
    const double r = rng.uniform(1.0, n / 2.0), t = rng.uniform(0.0, two_pi);
    waves.push_back({r * std::cos(t) / n, r * std::sin(t) / n, rng.uniform(0.0, two_pi),
                     rng.uniform(0.0, opt.clutter_amplitude / r)});
  }
  const double sigma =
      opt.noise_sigma_max > opt.noise_sigma ? rng.uniform(opt.noise_sigma, opt.noise_sigma_max) : opt.noise_sigma;
  double base[3], mix[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.3, 0.7);
    mix[c] = rng.uniform(0.6, 1.0);
  }

  Tensor img({3, side, side});
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double xf = static_cast<double>(x), yf = static_cast<double>(y);
      double bg = 0.0;
      for (const auto& w : waves) bg += w.a * std::cos(two_pi * (w.fx * xf + w.fy * yf) + w.ph);
      double g = 0.0;
      for (const auto& gr : gratings) g += gr.a * std::cos(two_pi * (gr.kx * xf + gr.ky * yf) + gr.ph);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = base[c] + bg + mix[c] * g + sigma * rng.normal();
        img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

inline LabeledImageSet synth_dataset(const SynthOptions& opt) {
  if (opt.image_side < 8 || (opt.image_side & (opt.image_side - 1)) != 0)
    throw std::invalid_argument("synth_dataset: image_side must be a power of two >= 8");
  if (opt.num_classes < 2) throw std::invalid_argument("synth_dataset: need at least two classes");
  Rng rng(derive_seed(opt.seed, "synth"));
  LabeledImageSet set;
  // Interleave classes so any prefix is balanced.
  for (std::size_t i = 0; i < opt.samples_per_class; ++i) {
    for (std::size_t c = 0; c < opt.num_classes; ++c) {
      set.images.push_back(synth_image(c, opt, rng));
      set.labels.push_back(c);
    }
  }
  return set;
}

inline LabeledImageSet synth_dataset(std::size_t num_classes, std::size_t samples_per_class, std::size_t image_side,
                                     std::uint64_t seed) {
  SynthOptions o;
  o.num_classes = num_classes;
  o.samples_per_class = samples_per_class;
  o.image_side = image_side;
  o.seed = seed;
  return synth_dataset(o);
}

}  // namespace sdefense
