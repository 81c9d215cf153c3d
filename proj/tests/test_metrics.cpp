#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "twinkit/metrics.hpp"

using namespace twinkit;

TEST_CASE("nmse anchor values") {
  const std::vector<Vec> truth = {{0.0}, {2.0}};
  CHECK(nmse(truth, truth).value == 0.0);

  // constant mean predictor scores exactly 100
  const std::vector<Vec> mean_pred = {{1.0}, {1.0}};
  CHECK(nmse(mean_pred, truth).value == doctest::Approx(100.0).epsilon(1e-15));

  CHECK_THROWS_AS(nmse({{1.0}}, {{1.0}}), ShapeError);
  CHECK_THROWS_AS(nmse({{1.0}, {2.0}}, {{3.0}, {3.0}}), NumericError);
  CHECK_THROWS_AS(nmse({{1.0}, {2.0}}, {{3.0, 4.0}, {3.0, 4.0}}), ShapeError);
}

TEST_CASE("nmse is invariant to joint affine rescaling") {
  RngStream rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Vec> pred(6, Vec(3)), truth(6, Vec(3));
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        pred[i][j] = rng.uniform(-5.0, 5.0);
        truth[i][j] = rng.uniform(-5.0, 5.0);
      }
    double a = rng.uniform(0.1, 4.0);
    if (trial % 2) a = -a;
    const double b = rng.uniform(-10.0, 10.0);
    std::vector<Vec> pred2 = pred, truth2 = truth;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        pred2[i][j] = a * pred[i][j] + b;
        truth2[i][j] = a * truth[i][j] + b;
      }
    const double v1 = nmse(pred, truth).value;
    const double v2 = nmse(pred2, truth2).value;
    CHECK(v2 == doctest::Approx(v1).epsilon(1e-9));
  }
}

TEST_CASE("nmse distinguishes better-than-mean from worse-than-mean") {
  const std::vector<Vec> truth = {{0.0}, {1.0}, {2.0}, {3.0}};
  const std::vector<Vec> close = {{0.1}, {1.1}, {1.9}, {2.9}};
  CHECK(nmse(close, truth).value < 100.0);
  const std::vector<Vec> inverted = {{3.0}, {2.0}, {1.0}, {0.0}};
  CHECK(nmse(inverted, truth).value > 100.0);
}

TEST_CASE("seed summaries append mean and std rows") {
  std::vector<NmseTableRow> rows = {
      {"gating", "V->W", "all", "1", 4.0},
      {"gating", "V->W", "all", "2", 6.0},
      {"gating", "V->W", "all", "3", 5.0},
      {"maximum", "V->W", "all", "1", 9.0},
  };
  const auto out = with_seed_summaries(rows);
  bool found_mean = false, found_std = false;
  for (const auto& r : out) {
    if (r.fusor == "gating" && r.seed == "mean") {
      found_mean = true;
      CHECK(r.value == doctest::Approx(5.0));
    }
    if (r.fusor == "gating" && r.seed == "std") {
      found_std = true;
      CHECK(r.value == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
    }
    // singleton groups get no summary
    CHECK_FALSE((r.fusor == "maximum" && r.seed == "mean"));
  }
  CHECK(found_mean);
  CHECK(found_std);
}

TEST_CASE("emit_report writes the four files and they round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "twinkit_report";
  std::filesystem::remove_all(dir);

  std::vector<NmseTableRow> rows = {
      {"gating", "V->W", "all", "1", 4.5},
      {"gating", "V+W->S", "all", "1", 7.25},
      {"multiplication", "V->W", "all", "1", 9.0},
      {"multiplication", "V+W->S", "all", "1", 11.5},
      {"maximum", "V->W", "all", "1", 8.0},
      {"maximum", "V+W->S", "all", "1", 10.0},
  };
  RoundRecord rec;
  rec.round = 0;
  rec.area_losses = {1.0};
  rec.global_loss = 1.0;
  const auto hist = flatten_history("gating", "V->W", "donor", "1", {rec});
  CostLedger fed;
  fed.mode = "federated";
  fed.upload_bytes = 100;
  fed.download_bytes = 100;
  emit_report(hist, rows, {fed}, dir.string());

  for (const char* name :
       {"results.csv", "history.csv", "costs.csv", "charts.svg"})
    CHECK(std::filesystem::exists(dir / name));

  // results round-trip: reparse values
  std::ifstream in(dir / "results.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "fusor,op,target,seed,nmse");
  std::string line;
  std::getline(in, line);
  CHECK(line == "gating,V->W,all,1,4.5");

  // 3 fusors x 2 ops -> 6 bars
  std::ifstream svg_in(dir / "charts.svg");
  std::string svg((std::istreambuf_iterator<char>(svg_in)), {});
  std::size_t bars = 0, pos = 0;
  while ((pos = svg.find("class=\"bar\"", pos)) != std::string::npos) {
    ++bars;
    pos += 10;
  }
  CHECK(bars == 6);
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty nmse table produces a header-only results file") {
  const auto dir = std::filesystem::temp_directory_path() / "twinkit_report2";
  std::filesystem::remove_all(dir);
  emit_report({}, {}, {}, dir.string());
  std::ifstream in(dir / "results.csv");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  CHECK(text == "fusor,op,target,seed,nmse\n");
  std::filesystem::remove_all(dir);
}
