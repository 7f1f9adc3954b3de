#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lossmap {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using Rng = std::mt19937_64;

// FNV-1a over raw bytes; used for dataset/architecture fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s,
                           std::uint64_t h = 14695981039346656037ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// All randomness flows from one root seed; components draw from streams
// derived by hashing their name into the seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view component) {
  return splitmix64(root ^ fnv1a(component));
}

// Hex-float encoding gives bit-exact round trips through text files.
inline std::string double_to_hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return std::string(buf);
}

inline double hex_to_double(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw std::runtime_error("bad hex-float literal: " + s);
  return v;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace lossmap
