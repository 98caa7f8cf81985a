#pragma once

// Little-endian byte encoding shared by the checkpoint and feature formats.
// Every container ends with an FNV-1a-64 checksum of all preceding bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sdefense/rng.hpp"

namespace sdefense {

class ByteWriter {
 public:
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  // Appends the checksum and returns the finished buffer.
  std::string finish() {
    u64(fnv1a64(bytes_));
    return std::move(bytes_);
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string bytes_;
};

class ByteReader {
 public:
  // Verifies the trailing checksum up front; `what` prefixes diagnostics.
  ByteReader(std::string bytes, std::string what) : bytes_(std::move(bytes)), what_(std::move(what)) {
    if (bytes_.size() < 8) fail("file too short (" + std::to_string(bytes_.size()) + " bytes)");
    end_ = bytes_.size() - 8;
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[end_ + i])) << (8 * i);
    if (stored != fnv1a64(std::string_view(bytes_).substr(0, end_))) fail("checksum mismatch (corrupted or truncated)");
  }

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::string_view(bytes_).substr(pos_, magic.size()) != magic) fail("bad magic, expected '" + std::string(magic) + "'");
    pos_ += magic.size();
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }

  std::size_t remaining() const { return end_ - pos_; }
  void expect_end() const {
    if (pos_ != end_) fail(std::to_string(end_ - pos_) + " unexpected trailing bytes");
  }
  [[noreturn]] void fail(const std::string& msg) const { throw std::runtime_error(what_ + ": " + msg); }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) fail("truncated at byte offset " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string bytes_;
  std::string what_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace sdefense
