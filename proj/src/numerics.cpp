#include "twinkit/numerics.hpp"

#include <cmath>

namespace twinkit {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Vec matvec(const Matrix& a, const Vec& x) {
  if (a.cols != x.size())
    throw ShapeError("matvec: matrix cols " + std::to_string(a.cols) +
                     " vs vector length " + std::to_string(x.size()));
  Vec y(a.rows, 0.0);
  for (std::size_t r = 0; r < a.rows; ++r) {
    double acc = 0.0;
    const double* row = a.data.data() + r * a.cols;
    for (std::size_t c = 0; c < a.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

Vec matvec_transpose(const Matrix& a, const Vec& x) {
  if (a.rows != x.size())
    throw ShapeError("matvec_transpose: matrix rows " +
                     std::to_string(a.rows) + " vs vector length " +
                     std::to_string(x.size()));
  Vec y(a.cols, 0.0);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* row = a.data.data() + r * a.cols;
    const double xr = x[r];
    for (std::size_t c = 0; c < a.cols; ++c) y[c] += row[c] * xr;
  }
  return y;
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), state_(seed) {}

std::uint64_t RngStream::next_u64() {
  state_ += kGolden;
  ++position_;
  return mix64(state_);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal(double mean, double stddev) {
  // 1 - u1 keeps the log argument in (0, 1].
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return mean + stddev * r * std::cos(2.0 * M_PI * u2);
}

RngStream RngStream::fork(std::uint64_t stream_id) const {
  return RngStream(mix64(mix64(seed_) ^ mix64(stream_id + 1)));
}

Vec sigmoid(const Vec& v) {
  if (!all_finite(v)) throw NumericError("sigmoid: non-finite input");
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i];
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

Vec softmax(const Vec& v) {
  if (v.empty()) throw NumericError("softmax: empty input");
  if (!all_finite(v)) throw NumericError("softmax: non-finite input");
  double mx = v[0];
  for (double x : v) mx = x > mx ? x : mx;
  Vec out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

double mse(const Vec& pred, const Vec& truth) {
  if (pred.size() != truth.size())
    throw ShapeError("mse: length mismatch " + std::to_string(pred.size()) +
                     " vs " + std::to_string(truth.size()));
  if (pred.empty()) throw ShapeError("mse: empty vectors");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, Vec x,
                     double h) {
  if (h <= 0.0) throw NumericError("finite_diff_grad: h must be positive");
  Vec g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + h;
    const double fp = f(x);
    x[j] = orig - h;
    const double fm = f(x);
    x[j] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite objective at coordinate " +
                         std::to_string(j));
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_norm(const Vec& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace twinkit
