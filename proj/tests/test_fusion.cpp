#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "twinkit/fusion.hpp"

using namespace twinkit;

namespace {

std::vector<Vec> random_features(RngStream& rng, std::size_t m, std::size_t d,
                                 double scale = 2.0) {
  std::vector<Vec> f(m, Vec(d));
  for (auto& v : f)
    for (double& x : v) x = rng.uniform(-scale, scale);
  return f;
}

double scalar_probe(const Vec& out, const Vec& probe) {
  double acc = 0.0;
  for (std::size_t j = 0; j < out.size(); ++j) acc += probe[j] * out[j];
  return acc;
}

}  // namespace

TEST_CASE("fuse hand examples") {
  CHECK(fuse(FusorKind::kAddition, {{1.0, 2.0}, {3.0, 4.0}}) == Vec{4.0, 6.0});

  const Vec v = {0.5, -1.0, 2.0};
  CHECK(fuse(FusorKind::kAverage, {v, v, v}) == v);

  CHECK(fuse(FusorKind::kMultiplication, {{1.0, 2.0}, {0.0, 0.0}}) ==
        Vec{0.0, 0.0});

  CHECK(fuse(FusorKind::kMaximum, {{1.0, 5.0}, {3.0, 2.0}}) == Vec{3.0, 5.0});
  CHECK(fuse(FusorKind::kMinimum, {{1.0, 5.0}, {3.0, 2.0}}) == Vec{1.0, 2.0});

  CHECK(fuse(FusorKind::kConcatenation, {{1.0}, {2.0}, {3.0}}) ==
        Vec{1.0, 2.0, 3.0});
}

TEST_CASE("gating with zero weights yields 0.5 everywhere") {
  FusorParams p;
  p.gate_weights = {Matrix(3, 3), Matrix(3, 3)};
  const Vec out =
      fuse(FusorKind::kGating, {{1.0, -2.0, 3.0}, {0.5, 0.5, 0.5}}, &p);
  CHECK(out == Vec{0.5, 0.5, 0.5});
}

TEST_CASE("attention with equal scores averages the features") {
  FusorParams p;
  p.attn_scorers = {Vec(2, 0.0), Vec(2, 0.0), Vec(2, 0.0)};
  const Vec out = fuse(FusorKind::kAttention,
                       {{3.0, 0.0}, {0.0, 3.0}, {0.0, 0.0}}, &p);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fused_dim") {
  CHECK(fused_dim(FusorKind::kConcatenation, 3, 16) == 48);
  CHECK(fused_dim(FusorKind::kGating, 3, 16) == 16);
  CHECK(fused_dim(FusorKind::kAverage, 1, 7) == 7);
  CHECK_THROWS_AS(fused_dim(FusorKind::kAddition, 0, 4), ShapeError);
}

TEST_CASE("shape and config errors") {
  CHECK_THROWS_AS(fuse(FusorKind::kAddition, {{1.0, 2.0}, {3.0}}), ShapeError);
  CHECK_THROWS_AS(fuse(FusorKind::kGating, {{1.0, 2.0}}), ConfigError);
  CHECK_THROWS_AS(fuse(FusorKind::kAddition, {}), ShapeError);
}

TEST_CASE("fusor names round-trip") {
  for (FusorKind k : kAllFusorKinds) CHECK(fusor_from_name(fusor_name(k)) == k);
  CHECK_THROWS_AS(fusor_from_name("blend"), ConfigError);
}

TEST_CASE("addition equals m times average") {
  RngStream rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.next_u64() % 4;
    const auto f = random_features(rng, m, 6);
    const Vec add = fuse(FusorKind::kAddition, f);
    const Vec avg = fuse(FusorKind::kAverage, f);
    for (std::size_t j = 0; j < add.size(); ++j)
      CHECK(add[j] == doctest::Approx(m * avg[j]).epsilon(1e-12));
  }
}

TEST_CASE("maximum dominates minimum; attention stays in their envelope") {
  RngStream rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng.next_u64() % 3;
    const std::size_t d = 5;
    const auto f = random_features(rng, m, d);
    const Vec hi = fuse(FusorKind::kMaximum, f);
    const Vec lo = fuse(FusorKind::kMinimum, f);
    FusorParams p = init_fusor_params(FusorKind::kAttention, m, d, rng);
    const Vec at = fuse(FusorKind::kAttention, f, &p);
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(hi[j] >= lo[j]);
      CHECK(at[j] >= lo[j] - 1e-12);
      CHECK(at[j] <= hi[j] + 1e-12);
    }
  }
}

TEST_CASE("gating output is strictly inside (0,1)") {
  RngStream rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.next_u64() % 3;
    const std::size_t d = 4;
    const auto f = random_features(rng, m, d);
    FusorParams p = init_fusor_params(FusorKind::kGating, m, d, rng);
    for (double x : fuse(FusorKind::kGating, f, &p)) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
    }
  }
}

TEST_CASE("concatenation preserves every coordinate at slot*d + j") {
  RngStream rng(29);
  const auto f = random_features(rng, 3, 4);
  const Vec out = fuse(FusorKind::kConcatenation, f);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(out[i * 4 + j] == f[i][j]);
}

TEST_CASE("symmetric fusors are permutation invariant") {
  RngStream rng(37);
  const FusorKind sym[] = {FusorKind::kAddition, FusorKind::kAverage,
                           FusorKind::kMultiplication, FusorKind::kMaximum,
                           FusorKind::kMinimum};
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_features(rng, 3, 5);
    auto g = f;
    std::rotate(g.begin(), g.begin() + 1, g.end());
    for (FusorKind k : sym) {
      const Vec a = fuse(k, f);
      const Vec b = fuse(k, g);
      for (std::size_t j = 0; j < a.size(); ++j)
        CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("order-dependent fusors follow slot order") {
  RngStream rng(43);
  auto f = random_features(rng, 2, 3);
  const Vec cat = fuse(FusorKind::kConcatenation, f);
  std::swap(f[0], f[1]);
  const Vec swapped = fuse(FusorKind::kConcatenation, f);
  CHECK(cat != swapped);
}

TEST_CASE("linear fusors have constant backward maps") {
  const std::vector<Vec> f = {{1.0, 2.0}, {-3.0, 4.0}, {0.5, 0.5}};
  const Vec d_out = {2.0, -1.0};
  const auto add = fuse_backward(FusorKind::kAddition, f, nullptr, d_out);
  for (const Vec& g : add.d_features) CHECK(g == d_out);
  const auto avg = fuse_backward(FusorKind::kAverage, f, nullptr, d_out);
  for (const Vec& g : avg.d_features) {
    CHECK(g[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(g[1] == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));
  }
}

TEST_CASE("max/min ties route gradient to the lowest slot") {
  const std::vector<Vec> f = {{1.0}, {1.0}, {0.0}};
  const auto res = fuse_backward(FusorKind::kMaximum, f, nullptr, {5.0});
  CHECK(res.d_features[0] == Vec{5.0});
  CHECK(res.d_features[1] == Vec{0.0});
  CHECK(res.d_features[2] == Vec{0.0});
}

TEST_CASE("fuse_backward matches finite differences for every kind") {
  RngStream rng(47);
  for (FusorKind k : kAllFusorKinds) {
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t m = 2 + rng.next_u64() % 2;
      const std::size_t d = 3;
      const auto f = random_features(rng, m, d);
      FusorParams params = init_fusor_params(k, m, d, rng);
      const FusorParams* pp = fusor_needs_params(k) ? &params : nullptr;
      Vec probe(fused_dim(k, m, d));
      for (double& x : probe) x = rng.uniform(-1.0, 1.0);

      const auto bw = fuse_backward(k, f, pp, probe);

      // feature gradients
      for (std::size_t i = 0; i < m; ++i) {
        auto fi = [&](const Vec& xi) {
          auto fc = f;
          fc[i] = xi;
          return scalar_probe(fuse(k, fc, pp), probe);
        };
        const Vec fd = finite_diff_grad(fi, f[i]);
        for (std::size_t j = 0; j < d; ++j) {
          const double denom = std::max(1.0, std::abs(fd[j]));
          CHECK(std::abs(bw.d_features[i][j] - fd[j]) / denom <= 1e-5);
        }
      }

      // parameter gradients
      if (k == FusorKind::kGating) {
        for (std::size_t i = 0; i < m; ++i) {
          auto fw = [&](const Vec& wflat) {
            FusorParams pc = params;
            pc.gate_weights[i].data = wflat;
            return scalar_probe(fuse(k, f, &pc), probe);
          };
          const Vec fd = finite_diff_grad(fw, params.gate_weights[i].data);
          for (std::size_t j = 0; j < fd.size(); ++j) {
            const double denom = std::max(1.0, std::abs(fd[j]));
            CHECK(std::abs(bw.d_params.gate_weights[i].data[j] - fd[j]) /
                      denom <=
                  1e-5);
          }
        }
      } else if (k == FusorKind::kAttention) {
        for (std::size_t i = 0; i < m; ++i) {
          auto fs = [&](const Vec& s) {
            FusorParams pc = params;
            pc.attn_scorers[i] = s;
            return scalar_probe(fuse(k, f, &pc), probe);
          };
          const Vec fd = finite_diff_grad(fs, params.attn_scorers[i]);
          for (std::size_t j = 0; j < fd.size(); ++j) {
            const double denom = std::max(1.0, std::abs(fd[j]));
            CHECK(std::abs(bw.d_params.attn_scorers[i][j] - fd[j]) / denom <=
                  1e-5);
          }
        }
      }
    }
  }
}

TEST_CASE("single-modality fuse works for every kind") {
  RngStream rng(53);
  const auto f = random_features(rng, 1, 4);
  for (FusorKind k : kAllFusorKinds) {
    FusorParams params = init_fusor_params(k, 1, 4, rng);
    const FusorParams* pp = fusor_needs_params(k) ? &params : nullptr;
    const Vec out = fuse(k, f, pp);
    CHECK(out.size() == fused_dim(k, 1, 4));
    if (k == FusorKind::kAddition || k == FusorKind::kAverage ||
        k == FusorKind::kConcatenation || k == FusorKind::kMultiplication ||
        k == FusorKind::kMaximum || k == FusorKind::kMinimum ||
        k == FusorKind::kAttention) {
      // all parameter-free kinds (and attention) reduce to identity at m=1
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(out[j] == doctest::Approx(f[0][j]).epsilon(1e-12));
    }
  }
}
