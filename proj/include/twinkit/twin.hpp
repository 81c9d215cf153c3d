#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "twinkit/fusion.hpp"
#include "twinkit/nn.hpp"
#include "twinkit/scenario.hpp"

namespace twinkit {

enum class TwinOpKind { kTransfer, kMerge, kSplit };

std::string op_kind_name(TwinOpKind k);

// A twin-to-twin transformation: transfer is single source to single new
// target; merge fuses several sources into one new target; split decodes
// several targets from one source.
struct TwinOp {
  TwinOpKind kind = TwinOpKind::kTransfer;
  std::vector<Modality> sources;
  std::vector<Modality> targets;
};

TwinOp make_transfer(Modality source, Modality target);
TwinOp make_merge(std::vector<Modality> sources, Modality target);
TwinOp make_split(Modality source, std::vector<Modality> targets);
void validate(const TwinOp& op);

// Compact notation: "V->W" (transfer), "V+W->S" (merge), "S->V,W,S" (split).
// A single-source single-target op with source == target is the degenerate
// autoencoding split.
std::string op_name(const TwinOp& op);
TwinOp op_from_name(const std::string& text);

// Network shape shared by all encoders/decoders. The conv stack runs over
// the windowed time axis (in_channels = modality dim); decoders are dense
// up-projections.
struct LayerConfig {
  struct ConvSpec {
    std::size_t channels = 8;
    std::size_t kernel = 3;
    std::size_t stride = 1;
  };
  std::vector<ConvSpec> conv;
  std::vector<std::size_t> hidden = {32};
  Activation hidden_activation = Activation::kRelu;
};

LayerConfig default_layer_config();

// Reconstruction target space: raw compares decoded output against the
// (standardized) raw modality window; feature compares against the target
// modality's encoder output, treated as a constant.
enum class LossSpace { kRaw, kFeature };

struct TwinModel {
  std::size_t latent_dim = 0;
  std::size_t window = 0;  // samples per training example
  FusorKind fusor = FusorKind::kGating;
  LossSpace loss_space = LossSpace::kRaw;
  LayerConfig layers;
  std::array<std::optional<Network>, kModalityCount> encoders;
  std::array<std::optional<Network>, kModalityCount> decoders;
  // One parameter slot per encoder modality, in modality order.
  FusorParams fusor_params;
  // Present only for concatenation: maps the slotted |encoders|*d vector to
  // d. Sources absent from a fuse call contribute zero slots.
  std::optional<Network> projection;
  std::vector<std::string> provenance;

  std::vector<Modality> encoder_modalities() const;
  std::vector<Modality> decoder_modalities() const;
  bool has_encoder(Modality m) const;
  bool has_decoder(Modality m) const;
  // Slot of modality m among this twin's encoders (for fusor params).
  std::size_t encoder_slot(Modality m) const;
};

// Structural invariants: encoder outputs have length d, decoder inputs have
// length d, fusor params sized to the encoder set, projection present iff
// concatenation. Throws ConfigError/ShapeError with the first violation.
void validate_twin(const TwinModel& twin);

TwinModel build_twin(const std::vector<Modality>& encoder_mods,
                     const std::vector<Modality>& decoder_mods,
                     std::size_t window, std::size_t latent_dim,
                     FusorKind fusor, const LayerConfig& layers,
                     LossSpace loss_space, RngStream& rng);

// Convenience: same modality set on both sides.
TwinModel build_twin(const std::vector<Modality>& modalities,
                     std::size_t window, std::size_t latent_dim,
                     FusorKind fusor, const LayerConfig& layers,
                     LossSpace loss_space, RngStream& rng);

// Whole-twin parameter vector; the unit of federated exchange. Layout:
// encoders in modality order, fusor params in encoder-slot order, projection,
// decoders in modality order.
std::size_t twin_param_count(const TwinModel& twin);
Vec flatten_twin(const TwinModel& twin);
TwinModel unflatten_twin(const TwinModel& twin_template, const Vec& params);

// Positions of encoder parameters inside flatten_twin() order; used to
// scale or freeze donor weights during transforms.
std::vector<std::pair<std::size_t, std::size_t>> encoder_param_ranges(
    const TwinModel& twin);

struct ReconResult {
  // outputs[m] is the standardized-space reconstruction for target m
  std::array<std::optional<Vec>, kModalityCount> outputs;
  std::size_t encoder_passes = 0;
  std::size_t decoder_passes = 0;
};

// Encodes the op's sources, fuses the present features, decodes every
// target. Missing model parts raise ConfigError; missing data DataError.
ReconResult reconstruct(const TwinModel& twin, const Example& example,
                        const TwinOp& op, const Standardizer& st);

struct LossReport {
  std::array<double, kModalityCount> per_modality = {0.0, 0.0, 0.0};
  double transfer_loss = 0.0;
  double merge_loss = 0.0;
  double split_loss = 0.0;
  double mapping_loss = 0.0;  // all-sources-to-all-targets objective
  double total = 0.0;
};

enum class TrainMode { kSpecific, kUnified, kMapping };

std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

// What a twin trains against. kSpecific uses `op`; kUnified samples one
// transfer, one merge and one split per batch over the twin's modalities;
// kMapping reconstructs every modality from the fusion of all of them.
struct TrainSpec {
  TrainMode mode = TrainMode::kMapping;
  std::optional<TwinOp> op;
};

// Sum over the batch and target modalities of the reconstruction mse.
// Gradient accumulation happens in twin objective helpers; this is the
// reporting entry point. rng is consumed only in unified mode.
LossReport op_loss(const TwinModel& twin, const std::vector<Example>& batch,
                   const Standardizer& st, const TrainSpec& spec,
                   RngStream* rng = nullptr);

// One loss term: reconstruct `targets` from `sources` for a single example.
// If grad_total / grad_per_target are non-null they must be sized to the
// twin's parameter count (per target: one vector per entry of `targets`)
// and are accumulated into. Returns the summed loss over targets and adds
// each target's contribution into per_modality_loss when non-null.
double twin_term(const TwinModel& twin, const Example& example,
                 const std::vector<Modality>& sources,
                 const std::vector<Modality>& targets, const Standardizer& st,
                 std::array<double, kModalityCount>* per_modality_loss,
                 Vec* grad_total, std::vector<Vec>* grad_per_target);

// Samples the unified-mode op triple over the twin's modality set.
std::array<TwinOp, 3> sample_unified_ops(const TwinModel& twin,
                                         RngStream& rng);

// Twin checkpoint: nn-format networks plus a manifest (modalities, d, fusor
// kind, provenance chain, standardizer stats). Bit-exact round-trip.
void save_twin(const TwinModel& twin, const Standardizer& st,
               const std::string& path);
std::pair<TwinModel, Standardizer> load_twin(const std::string& path);
std::string twin_to_json(const TwinModel& twin, const Standardizer& st);

}  // namespace twinkit
