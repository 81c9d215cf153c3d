#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "twinkit/numerics.hpp"

namespace twinkit {

struct FedConfig {
  enum class Aggregation { kMean, kGated };

  std::size_t area_count = 4;   // n
  std::size_t rounds = 50;      // T
  std::size_t local_steps = 5;  // beta
  double local_lr = 0.02;       // eta_l
  double global_lr = 1.0;       // eta, gated mode only
  double epsilon = 0.9;         // accumulator decay
  double mu = 0.1;              // damping
  Vec alpha;                    // per-term mixture weights; empty = uniform
  Aggregation aggregation = Aggregation::kMean;
};

std::string aggregation_name(FedConfig::Aggregation a);
FedConfig::Aggregation aggregation_from_name(const std::string& name);

// Fills alpha with the uniform default and checks every field.
void validate(FedConfig& cfg, std::size_t term_count);

// One area's training objective. eval returns the full-batch loss at
// `params`; when grad / term_grads are non-null they are assigned (not
// accumulated). term_grads partitions the gradient by reconstruction-target
// modality and always sums to grad. rng is consumed only by objectives that
// sample (unified twin training).
class LocalObjective {
 public:
  virtual ~LocalObjective() = default;
  virtual std::size_t dim() const = 0;
  virtual std::size_t term_count() const = 0;
  virtual double eval(const Vec& params, Vec* grad,
                      std::vector<Vec>* term_grads, RngStream* rng) const = 0;
  // Per-sample gradients at `params`, scaled so their mean equals the
  // full-batch gradient; used only for variance estimation. Optional.
  virtual std::vector<Vec> sample_grads(const Vec& params) const {
    return {};
  }
};

struct LocalTrainResult {
  Vec delta;                    // params_after - params_before
  std::vector<Vec> term_deltas; // per term; sums to delta
  std::vector<double> losses;   // loss at the start of each step
};

// Runs `steps` full-batch gradient steps from `start`. lr_scale, when
// present, multiplies the learning rate per coordinate (0 freezes). Throws
// DivergenceError (with the offending step) on non-finite loss or params.
LocalTrainResult local_train(const LocalObjective& objective, const Vec& start,
                             std::size_t steps, double lr, RngStream rng,
                             const Vec* lr_scale = nullptr);

// Coordinate-wise arithmetic mean of local models, computed against the
// first model as a baseline so that identical inputs return bit-identical
// output and a single input is returned unchanged.
Vec aggregate_mean(const std::vector<Vec>& models);

// Second-moment accumulators of the gated adaptive rule, one per term.
struct AggregatorState {
  std::vector<Vec> omega;
  std::size_t round = 0;
};

AggregatorState make_aggregator_state(std::size_t term_count, std::size_t dim);

// omega <- eps*omega + (1-eps)*delta^2 ;
// returns eta * sum_m alpha_m * delta_m / (sqrt(omega_m) + mu).
Vec gated_adaptive_step(AggregatorState& state,
                        const std::vector<Vec>& term_deltas,
                        const FedConfig& cfg);

struct StepSizeCheck {
  double bound = 0.0;
  bool ok = false;
};

// bound = min{ (mu / (120 G L^2))^(1/3), mu / (4G + 2 eta L) } / (16 beta);
// ok tells whether eta_l satisfies it.
StepSizeCheck check_step_size(double g_bound, double lipschitz, double mu,
                              std::size_t beta, double eta, double eta_l);

struct ConstantEstimates {
  double g_max = 0.0;        // max observed coordinate gradient magnitude
  double l_max = 0.0;        // max observed gradient Lipschitz ratio
  double gamma_l_sq = 0.0;   // summed per-coordinate local variance
  double gamma_g_sq = 0.0;   // summed per-coordinate cross-area variance
};

// Empirical lower bounds for the smoothness/boundedness constants, probed at
// `samples` random points around `center` (radius = stddev of the
// perturbation). Requires samples >= 2; throws DataError when every probe
// pair is degenerate.
ConstantEstimates estimate_constants(
    const std::vector<const LocalObjective*>& areas, const Vec& center,
    double radius, std::size_t samples, RngStream rng);

struct RoundRecord {
  std::size_t round = 0;
  std::vector<double> area_losses;  // loss of the broadcast model per area
  double global_loss = 0.0;         // probe loss at the new model
  double grad_norm_sq = 0.0;        // probe gradient norm^2 at the new model
  std::uint64_t up_bytes = 0;
  std::uint64_t down_bytes = 0;
  double wall_ms = 0.0;
};

struct CostLedger {
  std::string mode;  // "federated" or "centralized"
  std::uint64_t upload_bytes = 0;
  std::uint64_t download_bytes = 0;
  std::uint64_t local_steps = 0;
  std::uint64_t server_steps = 0;
};

struct MappingResult {
  Vec params;
  std::vector<RoundRecord> history;
  CostLedger ledger;
};

// The round loop: broadcast, parallel local training, fixed-order
// aggregation, bookkeeping. `probe`, when given, supplies global_loss and
// grad_norm_sq per round. Divergence in any area aborts with the round and
// area recorded. Thread count never changes results.
MappingResult run_rounds(FedConfig cfg,
                         const std::vector<const LocalObjective*>& areas,
                         const Vec& initial, const LocalObjective* probe,
                         std::uint64_t master_seed, std::size_t threads = 1,
                         const Vec* lr_scale = nullptr);

// Message accounting: 8 bytes per parameter plus a 64-byte header per
// message; every round each area downloads and uploads one model.
std::uint64_t federated_transfer_bytes(std::size_t rounds, std::size_t areas,
                                       std::size_t param_count);

struct CostPair {
  CostLedger federated;
  CostLedger centralized;
};

CostPair cost_compare(std::size_t rounds, std::size_t areas,
                      std::size_t param_count, std::size_t local_steps,
                      std::uint64_t raw_dataset_bytes);

// CSV with columns round,area,loss,grad_norm_sq,up_bytes,down_bytes,wall_ms;
// one row per area plus one summary row (empty area) per round.
void export_history_csv(const std::vector<RoundRecord>& history,
                        const std::string& path);

// JSON with round, area, step and the offending loss value.
void write_divergence_report(const DivergenceError& err,
                             const std::string& path);

}  // namespace twinkit
