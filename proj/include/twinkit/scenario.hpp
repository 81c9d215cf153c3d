#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "twinkit/numerics.hpp"

namespace twinkit {

// The three sensing modalities and their raw per-step sample dimensions:
//   V (visual)  - image-plane coordinates          (2)
//   W (wireless) - range to the area AP, RSSI       (2)
//   S (sensory) - planar acceleration, heading rate (3)
enum class Modality { kVisual = 0, kWireless = 1, kSensory = 2 };

inline constexpr Modality kAllModalities[] = {
    Modality::kVisual, Modality::kWireless, Modality::kSensory};
inline constexpr std::size_t kModalityCount = 3;

std::size_t modality_dim(Modality m);
std::string modality_name(Modality m);   // "V" / "W" / "S"
Modality modality_from_name(const std::string& name);

struct WorldConfig {
  std::uint64_t seed = 1;
  std::size_t area_count = 4;
  std::size_t steps_per_area = 240;
  std::size_t window = 4;  // samples per training example
  double walk_step_std = 0.5;
  // Pull of each step back toward the area origin; 0 gives a pure random
  // walk, small positive values keep trajectories inside the coverage area
  // so that motion signals carry position information.
  double walk_revert = 0.15;
  std::array<double, kModalityCount> noise_std = {0.0, 0.0, 0.0};
  // One AP position per area; empty selects a deterministic default ring.
  std::vector<std::array<double, 2>> ap_positions;
  // Optional per-area seed overrides; empty derives seeds from `seed`.
  std::vector<std::uint64_t> area_seeds;
};

void validate(const WorldConfig& cfg);

struct AreaData {
  std::vector<std::array<double, 2>> latent;  // ground truth, never trained on
  // samples[m][t] is the raw modality-m sample at step t
  std::array<std::vector<Vec>, kModalityCount> samples;
};

struct MultiModalDataset {
  std::vector<AreaData> areas;
  std::vector<std::array<double, 2>> ap_positions;  // per area
  bool has_latent = true;
  std::size_t steps() const {
    return areas.empty() ? 0 : areas[0].samples[0].size();
  }
};

// RSSI model applied to the true range before noise.
double rssi_from_range(double range);

// Deterministic synthetic world: a seeded latent walk per area drives all
// three modalities. At zero noise every modality is an exact function of the
// latent trajectory.
MultiModalDataset generate_world(const WorldConfig& cfg);

// One training example: per-modality flattened window of w consecutive
// samples (time-major: sample t, then t+1, ...).
struct Example {
  std::array<Vec, kModalityCount> window;
};

// All windows of length w per area; count per area = steps - w + 1.
std::vector<std::vector<Example>> window(const MultiModalDataset& ds,
                                         std::size_t w);

// Per-channel affine normalization, fitted on training data and applied
// before encoding; fused features are scale-sensitive.
struct Standardizer {
  std::array<Vec, kModalityCount> mean;
  std::array<Vec, kModalityCount> stddev;

  Vec apply(Modality m, const Vec& window_values) const;
  Vec invert(Modality m, const Vec& window_values) const;
};

Standardizer fit_standardizer(const MultiModalDataset& ds,
                              std::size_t train_steps);

// CSV schema (one file = one or more areas):
//   area,step,latent_x,latent_y,v_0,v_1,w_0,w_1,s_0,s_1,s_2
// The two latent columns are optional but must appear together. Steps must
// run 0..T-1 per area and every area must have the same step count.
void save_csv(const MultiModalDataset& ds, const std::string& path);
MultiModalDataset load_csv(const std::string& path);

// Single-area slice view used by the per-area exporters.
MultiModalDataset slice_area(const MultiModalDataset& ds, std::size_t area);

}  // namespace twinkit
