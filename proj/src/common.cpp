#include "graphtune/common.hpp"

#include <array>

namespace graphtune {

Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.rows != b.rows)
    throw ShapeError("hcat: row mismatch " + std::to_string(a.rows) + " vs " +
                     std::to_string(b.rows));
  Matrix out(a.rows, a.cols + b.cols);
  for (Index i = 0; i < a.rows; ++i) {
    for (Index j = 0; j < a.cols; ++j) out(i, j) = a(i, j);
    for (Index j = 0; j < b.cols; ++j) out(i, a.cols + j) = b(i, j);
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream,
             std::uint64_t substream) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ (0xA0761D6478BD642FULL + stream));
  s = splitmix64(s ^ (0xE7037ED1A0B428DBULL + substream));
  return Rng(s);
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s, std::uint64_t h) {
  return fnv1a64(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace graphtune
