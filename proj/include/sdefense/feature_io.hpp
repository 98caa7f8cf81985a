#pragma once

// SDF1 feature-matrix container (little-endian):
//   "SDF1"  u32 rows  u32 cols  u8 mode tag
//   rows*cols real64, row-major
//   u64 FNV-1a-64 checksum of everything above

#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>

#include "sdefense/binary_io.hpp"
#include "sdefense/features.hpp"

namespace sdefense {

enum class FeatureModeTag : std::uint8_t {
  InputMFS = 0,
  InputPFS = 1,
  LayerMFS = 2,
  LayerPFS = 3,
  LID = 4,
  Mahalanobis = 5,
};

inline FeatureModeTag mode_tag(const FeatureSetDescriptor& d) {
  switch (d.kind) {
    case FeatureKind::LID: return FeatureModeTag::LID;
    case FeatureKind::Mahalanobis: return FeatureModeTag::Mahalanobis;
    case FeatureKind::Spectral: break;
  }
  const bool input = d.spectral.source == FeatureSource::Input;
  if (d.spectral.mode == SpectrumMode::MFS) return input ? FeatureModeTag::InputMFS : FeatureModeTag::LayerMFS;
  return input ? FeatureModeTag::InputPFS : FeatureModeTag::LayerPFS;
}

inline const char* to_string(FeatureModeTag t) {
  switch (t) {
    case FeatureModeTag::InputMFS: return "InputMFS";
    case FeatureModeTag::InputPFS: return "InputPFS";
    case FeatureModeTag::LayerMFS: return "LayerMFS";
    case FeatureModeTag::LayerPFS: return "LayerPFS";
    case FeatureModeTag::LID: return "LID";
    case FeatureModeTag::Mahalanobis: return "M-D";
  }
  return "?";
}

struct TaggedMatrix {
  FeatureMatrix matrix;
  FeatureModeTag tag = FeatureModeTag::InputMFS;
  friend bool operator==(const TaggedMatrix&, const TaggedMatrix&) = default;
};

inline std::string encode_features(const FeatureMatrix& m, FeatureModeTag tag) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (m.rows() > kMax || m.cols() > kMax) throw std::invalid_argument("SDF1: matrix too large for u32 dimensions");
  ByteWriter w;
  w.raw("SDF1");
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  w.u8(static_cast<std::uint8_t>(tag));
  for (double v : m.data()) w.f64(v);
  return w.finish();
}

inline TaggedMatrix decode_features(std::string bytes, const std::string& what = "SDF1") {
  ByteReader r(std::move(bytes), what);
  r.expect_magic("SDF1");
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  const std::uint8_t tag = r.u8();
  if (tag > static_cast<std::uint8_t>(FeatureModeTag::Mahalanobis)) r.fail("unknown mode tag " + std::to_string(tag));
  const std::uint64_t expected = static_cast<std::uint64_t>(rows) * cols * 8;
  if (r.remaining() != expected) {
    r.fail("payload of " + std::to_string(r.remaining()) + " bytes, expected " + std::to_string(expected));
  }
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (double& v : data) v = r.f64();
  return {FeatureMatrix(rows, cols, std::move(data)), static_cast<FeatureModeTag>(tag)};
}

inline void write_features(const FeatureMatrix& m, FeatureModeTag tag, const std::filesystem::path& path) {
  write_file(path, encode_features(m, tag));
}

inline TaggedMatrix read_features(const std::filesystem::path& path) {
  return decode_features(read_file(path), "SDF1 " + path.string());
}

}  // namespace sdefense
