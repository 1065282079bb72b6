#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dplan {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr uint32_t kCheckpointFormatVersion = 1;
inline constexpr uint32_t kDatasetFormatVersion = 1;

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// FNV-1a, used for dataset splits and config hashes.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Fixed two-decimal rendering used by the text grammar. Values that round to
// zero print as "0.00", never "-0.00".
inline std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  if (std::string_view(buf) == "-0.00") return "0.00";
  return buf;
}

// Quantize to the grammar's two-decimal grid.
inline double quantize2(double v) {
  double q = std::round(v * 100.0) / 100.0;
  return q == 0.0 ? 0.0 : q;  // normalize -0.0
}

}  // namespace dplan
