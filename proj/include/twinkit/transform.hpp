#pragma once

#include "twinkit/federation.hpp"
#include "twinkit/metrics.hpp"
#include "twinkit/twin.hpp"

namespace twinkit {

// Windowed dataset split for federated twin training: per-area training
// windows, a pooled held-out probe set, and the standardizer fitted on the
// training steps.
struct TwinTrainData {
  std::vector<std::vector<Example>> train;
  std::vector<Example> probe;
  Standardizer st;
  std::uint64_t raw_bytes = 0;  // total raw sample payload of the dataset
};

TwinTrainData prepare_train_data(const MultiModalDataset& ds, std::size_t w,
                                 double eval_fraction);

// Adapts one area's windows to the federation engine. Gradient terms are
// partitioned by reconstruction-target modality.
class TwinObjective final : public LocalObjective {
 public:
  TwinObjective(const TwinModel& twin_template,
                const std::vector<Example>& examples, const Standardizer& st,
                const TrainSpec& spec);

  std::size_t dim() const override;
  std::size_t term_count() const override { return term_mods_.size(); }
  const std::vector<Modality>& term_modalities() const { return term_mods_; }
  double eval(const Vec& params, Vec* grad, std::vector<Vec>* term_grads,
              RngStream* rng) const override;
  std::vector<Vec> sample_grads(const Vec& params) const override;

 private:
  const TwinModel* template_;
  const std::vector<Example>* examples_;
  const Standardizer* st_;
  TrainSpec spec_;
  std::vector<Modality> term_mods_;
};

struct TwinMappingResult {
  TwinModel twin;
  std::vector<RoundRecord> history;
  CostLedger ledger;
};

// Algorithm-level entry point: T rounds of broadcast, local training on each
// area's shard, upload, aggregate. Returns the trained twin; rounds = 0
// returns the template unchanged.
TwinMappingResult run_mapping(const FedConfig& cfg, const TwinTrainData& data,
                              const TwinModel& twin_template,
                              const TrainSpec& spec, std::uint64_t master_seed,
                              std::size_t threads = 1,
                              const Vec* lr_scale = nullptr);

struct TransformConfig {
  FedConfig fed;
  TrainMode mode = TrainMode::kSpecific;
  bool fine_tune_encoders = true;
  double encoder_lr_scale = 0.1;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

struct TransformResult {
  TwinModel twin;
  LossReport final_loss;  // on the held-out probe set
  std::vector<RoundRecord> history;
  CostLedger ledger;
};

// Builds a new twin for `op` from existing twins: source encoders are copied
// from the first donor that has them, target decoders and fusor parameters
// start fresh, then the twin is trained federated against the op's loss
// (or the unified loss). Donor encoders fine-tune at a reduced rate, or stay
// frozen when fine_tune_encoders is off.
TransformResult transform(const std::vector<TwinModel>& donors,
                          const TwinOp& op, const TwinTrainData& data,
                          const TransformConfig& cfg);

struct OpEvaluation {
  std::array<std::optional<NmseResult>, kModalityCount> per_target;
  NmseResult pooled;  // all targets concatenated per sample
};

// Reconstructs every probe window, maps outputs back to raw units and scores
// them against the raw ground-truth windows.
OpEvaluation evaluate_op(const TwinModel& twin,
                         const std::vector<Example>& eval_windows,
                         const TwinOp& op, const Standardizer& st);

}  // namespace twinkit
