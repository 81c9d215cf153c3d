#pragma once

#include <cstdint>
#include <functional>

#include "twinkit/common.hpp"

namespace twinkit {

// Dense row-major matrix of 64-bit reals. Plain value type; shape checks
// happen in the operations that consume it.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;  // rows * cols entries, row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return rows * cols; }

  static Matrix identity(std::size_t n);
};

// y = A x
Vec matvec(const Matrix& a, const Vec& x);
// y = A^T x
Vec matvec_transpose(const Matrix& a, const Vec& x);

// Deterministic PRNG stream with an explicit draw counter. Core generator is
// splitmix64; identical (seed, position) always produces the identical next
// draw, on every platform. Substreams come from fork(), which derives the
// child seed as mix(mix(parent_seed) ^ mix(stream_id + 1)) so that siblings
// never overlap and forking is order-independent.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();  // [0, 1), 53-bit resolution
  double uniform(double lo, double hi);
  // Box-Muller; consumes exactly two uniform draws per call.
  double normal(double mean = 0.0, double stddev = 1.0);

  RngStream fork(std::uint64_t stream_id) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return position_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  std::uint64_t position_ = 0;
};

// Elementwise logistic function, numerically stable on both tails.
// Throws NumericError on non-finite input.
Vec sigmoid(const Vec& v);

// Max-subtracted softmax; output is non-negative and sums to 1.
// Throws NumericError on empty or non-finite input.
Vec softmax(const Vec& v);

// Mean squared difference. Throws ShapeError on length mismatch.
double mse(const Vec& pred, const Vec& truth);

// Central-difference gradient oracle: (f(x + h e_j) - f(x - h e_j)) / (2h).
// Independent of every analytic backward pass in this codebase; used to
// validate all of them. Throws NumericError if f evaluates non-finite.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, Vec x,
                     double h = 1e-5);

double dot(const Vec& a, const Vec& b);
double squared_norm(const Vec& v);
bool all_finite(const Vec& v);

}  // namespace twinkit
