#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twinkit/transform.hpp"

namespace twinkit {

// Exit codes: 0 success, 1 config error, 2 divergence, 3 I/O.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitDivergence = 2;
inline constexpr int kExitIo = 3;

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds = {1};
  TrainMode transform_mode = TrainMode::kSpecific;  // "mode": unified|specific
  std::string output_dir = "out";
  std::size_t threads = 1;
  std::string dataset_path;  // optional CSV; empty generates synthetically

  WorldConfig world;

  std::size_t latent_dim = 8;
  std::vector<FusorKind> fusors = {FusorKind::kGating};
  LayerConfig layers;
  LossSpace loss_space = LossSpace::kRaw;
  double eval_fraction = 0.25;

  FedConfig fed;                 // donor mapping stage
  TrainMode donor_objective = TrainMode::kMapping;
  FedConfig transform_fed;       // transform training stage
  bool fine_tune_encoders = true;
  double encoder_lr_scale = 0.1;

  std::vector<TwinOp> ops;
};

// Strict schema: unknown keys and type violations are all collected and
// reported in one ConfigError.
ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
// Effective config with every default materialized; valid config document.
std::string config_to_json_text(const ExperimentConfig& cfg);

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::optional<std::string> mode;
};

void apply_overrides(ExperimentConfig& cfg, const CliOverrides& ov);

int cmd_generate(const std::string& config_path, const CliOverrides& ov);
int cmd_run(const std::string& config_path, const CliOverrides& ov,
            const std::vector<std::string>& ops_override = {});
int cmd_costs(const std::string& config_path, const CliOverrides& ov);
int cmd_check_bound(double g_bound, double lipschitz, double mu,
                    std::size_t beta, double eta,
                    std::optional<double> eta_l);

// argv-level entry point used by the binary; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace twinkit
