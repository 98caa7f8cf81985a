#pragma once

// SDCK checkpoint layout (all integers little-endian):
//   "SDCK"  u16 version
//   u32 channels, u32 height, u32 width
//   u32 block count, then per block u32 out_channels, u32 layers
//   u32 hidden_units, u32 num_classes, u64 seed
//   u64 parameter count, real64 parameters
//   u64 FNV-1a-64 checksum of everything above

#include <cstdint>
#include <filesystem>
#include <string>

#include "sdefense/binary_io.hpp"
#include "sdefense/model.hpp"

namespace sdefense {

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ModelParams& p) {
  ByteWriter w;
  w.raw("SDCK");
  w.u16(kCheckpointVersion);
  const ModelConfig& c = p.config;
  w.u32(static_cast<std::uint32_t>(c.channels));
  w.u32(static_cast<std::uint32_t>(c.height));
  w.u32(static_cast<std::uint32_t>(c.width));
  w.u32(static_cast<std::uint32_t>(c.conv_blocks.size()));
  for (const auto& b : c.conv_blocks) {
    w.u32(static_cast<std::uint32_t>(b.out_channels));
    w.u32(static_cast<std::uint32_t>(b.layers));
  }
  w.u32(static_cast<std::uint32_t>(c.hidden_units));
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u64(c.seed);
  w.u64(p.values.size());
  for (double v : p.values) w.f64(v);
  return w.finish();
}

inline ModelParams decode_checkpoint(std::string bytes, const std::string& what = "checkpoint") {
  ByteReader r(std::move(bytes), what);
  r.expect_magic("SDCK");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig c;
  c.channels = r.u32();
  c.height = r.u32();
  c.width = r.u32();
  const std::uint32_t blocks = r.u32();
  if (blocks > 64) r.fail("implausible block count " + std::to_string(blocks));
  c.conv_blocks.clear();
  for (std::uint32_t i = 0; i < blocks; ++i) {
    ConvBlock b;
    b.out_channels = r.u32();
    b.layers = r.u32();
    c.conv_blocks.push_back(b);
  }
  c.hidden_units = r.u32();
  c.num_classes = r.u32();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const std::exception& e) {
    r.fail(std::string("invalid config block: ") + e.what());
  }
  ModelParams p = build_layout(c);
  const std::uint64_t count = r.u64();
  if (count != p.values.size()) {
    r.fail("parameter count " + std::to_string(count) + " does not match config (" + std::to_string(p.values.size()) + ")");
  }
  for (double& v : p.values) v = r.f64();
  r.expect_end();
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(p));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), "checkpoint " + path.string());
}

}  // namespace sdefense
