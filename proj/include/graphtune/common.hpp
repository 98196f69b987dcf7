#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace graphtune {

using Index = std::int64_t;

// Error taxonomy. DataError maps to CLI exit code 2, everything else to 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_ = 0.0;
};

// Dense row-major matrix of doubles. The workhorse container for node
// features, probabilities and meta-features; autodiff tensors live in nn.
struct Matrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(Index r, Index c)
      : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0) {}

  double& operator()(Index i, Index j) {
    return data[static_cast<std::size_t>(i * cols + j)];
  }
  double operator()(Index i, Index j) const {
    return data[static_cast<std::size_t>(i * cols + j)];
  }
  bool empty() const { return rows == 0 || cols == 0; }
};

// Column-wise concatenation; an empty operand (cols==0) acts as identity.
Matrix hcat(const Matrix& a, const Matrix& b);

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Deterministic rng substreams: same (seed, stream, substream) -> same engine.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0,
             std::uint64_t substream = 0);

std::uint64_t fnv1a64(const void* data, std::size_t n,
                      std::uint64_t h = 1469598103934665603ULL);
std::uint64_t fnv1a64(const std::string& s, std::uint64_t h);
std::string hex64(std::uint64_t v);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace graphtune
