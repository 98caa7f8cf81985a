#pragma once

// Line-delimited key=value report files.
//
//   sdefense-report 1
//   generated=<UTC timestamp>        (optional; ignored by comparisons)
//   record
//   auc=<%.17g | undefined>
//   accuracy=... precision=... recall=...
//   precision_undefined=0|1  recall_undefined=0|1
//   tp=.. fp=.. tn=.. fn=..
//   prov.<key>=<value>
//   end
//
// Doubles are printed with 17 significant digits, so a read returns the exact
// values written.

#include <openssl/evp.h>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sdefense/binary_io.hpp"
#include "sdefense/metrics.hpp"

namespace sdefense {

// Provenance every record must carry to be re-runnable in isolation.
inline const std::vector<std::string>& required_provenance() {
  static const std::vector<std::string> keys{"experiment", "master_seed", "cell_seed", "config_hash", "input_hash"};
  return keys;
}

// Hash git assigns to a blob with this content: SHA-1 over "blob <size>\0" + content.
inline std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("git_blob_hash: EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("git_blob_hash: SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string encode_report(const std::vector<EvalReport>& reports, const std::optional<std::string>& timestamp) {
  std::ostringstream os;
  os << "sdefense-report 1\n";
  if (timestamp) os << "generated=" << *timestamp << "\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    for (const auto& key : required_provenance()) {
      if (!r.provenance.contains(key))
        throw std::invalid_argument("write_report: record " + std::to_string(i) + " lacks provenance '" + key + "'");
    }
    for (const auto& [k, v] : r.provenance) {
      if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
        throw std::invalid_argument("write_report: provenance entry '" + k + "' has a reserved character");
    }
    os << "record\n";
    os << "auc=" << (r.auc ? format_double(*r.auc) : std::string("undefined")) << "\n";
    os << "accuracy=" << format_double(r.accuracy) << "\n";
    os << "precision=" << format_double(r.precision) << "\n";
    os << "recall=" << format_double(r.recall) << "\n";
    os << "precision_undefined=" << r.precision_undefined << "\n";
    os << "recall_undefined=" << r.recall_undefined << "\n";
    os << "tp=" << r.counts.tp << "\nfp=" << r.counts.fp << "\ntn=" << r.counts.tn << "\nfn=" << r.counts.fn << "\n";
    for (const auto& [k, v] : r.provenance) os << "prov." << k << "=" << v << "\n";
    os << "end\n";
  }
  return os.str();
}

inline std::vector<EvalReport> decode_report(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error("report line " + std::to_string(lineno) + ": " + msg);
  };
  auto parse_double = [&](const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) fail("bad number '" + s + "'");
    return v;
  };
  auto parse_size = [&](const std::string& s) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) fail("bad count '" + s + "'");
    return v;
  };
  ++lineno;
  if (!std::getline(is, line) || line != "sdefense-report 1") fail("missing 'sdefense-report 1' header");
  std::vector<EvalReport> out;
  std::optional<EvalReport> cur;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == "record") {
      if (cur) fail("nested record");
      cur.emplace();
      continue;
    }
    if (line == "end") {
      if (!cur) fail("'end' outside a record");
      out.push_back(std::move(*cur));
      cur.reset();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key=value");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (!cur) {
      if (key == "generated") continue;
      fail("field '" + key + "' outside a record");
    }
    EvalReport& r = *cur;
    if (key == "auc") r.auc = val == "undefined" ? std::nullopt : std::optional<double>(parse_double(val));
    else if (key == "accuracy") r.accuracy = parse_double(val);
    else if (key == "precision") r.precision = parse_double(val);
    else if (key == "recall") r.recall = parse_double(val);
    else if (key == "precision_undefined") r.precision_undefined = parse_size(val) != 0;
    else if (key == "recall_undefined") r.recall_undefined = parse_size(val) != 0;
    else if (key == "tp") r.counts.tp = parse_size(val);
    else if (key == "fp") r.counts.fp = parse_size(val);
    else if (key == "tn") r.counts.tn = parse_size(val);
    else if (key == "fn") r.counts.fn = parse_size(val);
    else if (key.starts_with("prov.")) r.provenance[key.substr(5)] = val;
    else fail("unknown key '" + key + "'");
  }
  if (cur) fail("unterminated record");
  return out;
}

inline void write_report(const std::vector<EvalReport>& reports, const std::filesystem::path& path,
                         const std::optional<std::string>& timestamp = utc_timestamp()) {
  write_file(path, encode_report(reports, timestamp));
}

inline std::vector<EvalReport> read_report(const std::filesystem::path& path) { return decode_report(read_file(path)); }

// Report text with the timestamp line removed, for determinism comparisons.
inline std::string strip_timestamp(const std::string& text) {
  std::istringstream is(text);
  std::string line, out;
  while (std::getline(is, line))
    if (!line.starts_with("generated=")) out += line + "\n";
  return out;
}

}  // namespace sdefense
