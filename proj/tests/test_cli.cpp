#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "twinkit/cli.hpp"

using namespace twinkit;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::string small_config(const std::string& out_dir,
                         const std::string& extra = "") {
  return std::string(R"({
  "seeds": [1],
  "output_dir": ")") +
         out_dir + R"(",
  "world": {"areas": 2, "steps_per_area": 50, "window": 4},
  "twin": {"latent_dim": 4, "fusors": ["average"], "conv": [], "hidden": []},
  "fed": {"rounds": 2, "local_steps": 2, "local_lr": 0.0002},
  "ops": ["V->W"])" +
         extra + "\n}\n";
}

}  // namespace

TEST_CASE("config defaults and strict schema") {
  const ExperimentConfig cfg = config_from_json_text("{}");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1});
  CHECK(cfg.fusors.size() == 1);
  CHECK(cfg.ops.size() == 3);
  CHECK(cfg.transform_mode == TrainMode::kSpecific);

  CHECK_THROWS_AS(config_from_json_text("{\"nope\": 1}"), ConfigError);
  CHECK_THROWS_AS(config_from_json_text("not json"), ParseError);
  CHECK_THROWS_AS(config_from_json_text("{\"mode\": \"mapping\"}"),
                  ConfigError);
  CHECK_THROWS_AS(config_from_json_text("{\"seeds\": []}"), ConfigError);
  CHECK_THROWS_AS(
      config_from_json_text("{\"world\": {\"areas\": 0}}"), ConfigError);

  // violations are listed exhaustively
  try {
    config_from_json_text(
        "{\"bogus\": 1, \"world\": {\"wat\": 2}, \"twin\": {\"who\": 3}}");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bogus") != std::string::npos);
    CHECK(msg.find("world.wat") != std::string::npos);
    CHECK(msg.find("twin.who") != std::string::npos);
  }
}

TEST_CASE("config echo round-trips to the same effective config") {
  const ExperimentConfig cfg = config_from_json_text(small_config("/tmp/x"));
  const std::string echoed = config_to_json_text(cfg);
  const ExperimentConfig back = config_from_json_text(echoed);
  CHECK(config_to_json_text(back) == echoed);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.fed.rounds == cfg.fed.rounds);
  CHECK(back.transform_fed.rounds == cfg.transform_fed.rounds);
  CHECK(op_name(back.ops[0]) == op_name(cfg.ops[0]));
}

TEST_CASE("transform stage inherits fed settings unless overridden") {
  const ExperimentConfig cfg = config_from_json_text(
      R"({"fed": {"rounds": 9, "local_lr": 0.5},
          "transform": {"rounds": 3}})");
  CHECK(cfg.fed.rounds == 9);
  CHECK(cfg.transform_fed.rounds == 3);
  CHECK(cfg.transform_fed.local_lr == 0.5);
}

TEST_CASE("cmd_generate writes per-area csvs and a manifest with the seed") {
  TempDir dir("twinkit_cli_gen");
  const std::string cfg_path = (dir.path / "cfg.json").string();
  write_file(cfg_path, R"({
    "output_dir": ")" + dir.str() + R"(/out",
    "world": {"areas": 3, "steps_per_area": 20, "window": 4, "seed": 123}
  })");
  CHECK(cmd_generate(cfg_path, {}) == kExitOk);
  CHECK(fs::exists(dir.path / "out/dataset.csv"));
  for (int a = 0; a < 3; ++a)
    CHECK(fs::exists(dir.path / ("out/areas/area_" + std::to_string(a) +
                                 ".csv")));
  const std::string manifest = read_file(dir.path / "out/manifest.json");
  CHECK(manifest.find("\"seed\": 123") != std::string::npos);

  // regeneration is byte-identical
  const std::string first = read_file(dir.path / "out/dataset.csv");
  CHECK(cmd_generate(cfg_path, {}) == kExitOk);
  CHECK(read_file(dir.path / "out/dataset.csv") == first);
}

TEST_CASE("cmd_run produces results, reruns identically, honors threads") {
  TempDir dir("twinkit_cli_run");
  const std::string cfg_path = (dir.path / "cfg.json").string();
  write_file(cfg_path, small_config(dir.str() + "/out"));
  CHECK(cmd_run(cfg_path, {}) == kExitOk);
  for (const char* f : {"manifest.json", "results.csv", "history.csv",
                        "costs.csv", "charts.svg"})
    CHECK(fs::exists(dir.path / "out" / f));

  // 1 fusor x 1 op x 1 seed -> one per-target row + one pooled row
  std::ifstream in(dir.path / "out/results.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);  // header
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);

  // rerun from the manifest into another directory with more threads
  CliOverrides ov;
  ov.out = dir.str() + "/out2";
  ov.threads = 8;
  CHECK(cmd_run((dir.path / "out/manifest.json").string(), ov) == kExitOk);
  CHECK(read_file(dir.path / "out/results.csv") ==
        read_file(dir.path / "out2/results.csv"));
  CHECK(read_file(dir.path / "out/checkpoints/average_VW_1.json") ==
        read_file(dir.path / "out2/checkpoints/average_VW_1.json"));
}

TEST_CASE("cmd_run exits 2 and writes a report on divergence") {
  TempDir dir("twinkit_cli_div");
  const std::string cfg_path = (dir.path / "cfg.json").string();
  // enormous local lr on a linear twin: guaranteed blow-up
  write_file(cfg_path, R"({
    "seeds": [1],
    "output_dir": ")" + dir.str() + R"(/out",
    "world": {"areas": 2, "steps_per_area": 50, "window": 4},
    "twin": {"latent_dim": 4, "fusors": ["average"], "conv": [], "hidden": []},
    "fed": {"rounds": 50, "local_steps": 10, "local_lr": 1000.0},
    "ops": ["V->W"]
  })");
  CHECK(cmd_run(cfg_path, {}) == kExitDivergence);
  CHECK(fs::exists(dir.path / "out/divergence.json"));
  const std::string report = read_file(dir.path / "out/divergence.json");
  CHECK(report.find("\"round\"") != std::string::npos);
  CHECK(report.find("\"area\"") != std::string::npos);
}

TEST_CASE("cmd_costs writes the ledger pair") {
  TempDir dir("twinkit_cli_costs");
  const std::string cfg_path = (dir.path / "cfg.json").string();
  write_file(cfg_path, small_config(dir.str() + "/out"));
  CHECK(cmd_costs(cfg_path, {}) == kExitOk);
  const std::string costs = read_file(dir.path / "out/costs.csv");
  CHECK(costs.find("federated") != std::string::npos);
  CHECK(costs.find("centralized") != std::string::npos);
}

TEST_CASE("seed override applies to world and seeds") {
  ExperimentConfig cfg = config_from_json_text(small_config("/tmp/x"));
  CliOverrides ov;
  ov.seed = 42;
  apply_overrides(cfg, ov);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{42});
  CHECK(cfg.world.seed == 42);

  ov = {};
  ov.mode = "unified";
  apply_overrides(cfg, ov);
  CHECK(cfg.transform_mode == TrainMode::kUnified);
  ov.mode = "mapping";
  CHECK_THROWS_AS(apply_overrides(cfg, ov), ConfigError);
}

TEST_CASE("missing config file maps to the io exit code") {
  CHECK(cmd_run("/nonexistent/config.json", {}) == kExitIo);
}

TEST_CASE("argv front end dispatches and validates op kinds") {
  TempDir dir("twinkit_cli_argv");
  const std::string cfg_path = (dir.path / "cfg.json").string();
  write_file(cfg_path, small_config(dir.str() + "/out"));

  const char* ok[] = {"twinkit", "transfer", "--config", cfg_path.c_str(),
                      "--op", "W->V"};
  CHECK(run_cli(6, ok) == kExitOk);
  CHECK(fs::exists(dir.path / "out/results.csv"));

  const char* wrong_kind[] = {"twinkit", "transfer", "--config",
                              cfg_path.c_str(), "--op", "V+W->S"};
  CHECK(run_cli(6, wrong_kind) == kExitConfig);

  const char* bound_args[] = {"twinkit",  "check-bound", "--G",   "1",
                              "--L",      "1",           "--mu",  "0.1",
                              "--beta",   "5",           "--eta", "0.5",
                              "--eta-l",  "0.00025"};
  CHECK(run_cli(14, bound_args) == kExitOk);
}
