#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <system_error>

#include "vortexlab/error.hpp"

namespace vortexlab::experiments {

inline constexpr std::string_view kVersion = "0.1.0";

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// Strict parse of a complete string as a double (no trailing characters).
inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto r = std::from_chars(first, s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

template <class Int>
bool parse_integer(std::string_view s, Int& out) {
  if (s.empty()) return false;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

/// Identifies the library build: version and compiler.
inline std::string code_hash() {
  return hex64(fnv1a(std::string("vortexlab ") + std::string(kVersion) + " " + __VERSION__));
}

}  // namespace vortexlab::experiments
