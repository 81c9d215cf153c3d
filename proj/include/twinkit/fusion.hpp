#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twinkit/numerics.hpp"

namespace twinkit {

// The modality-fusion operators. Every fusor maps m same-length feature
// vectors to one fused vector; concatenation is the only one that changes
// the dimension.
enum class FusorKind {
  kAddition,
  kAverage,
  kConcatenation,
  kMultiplication,
  kMaximum,
  kMinimum,
  kGating,
  kAttention,
};

inline constexpr FusorKind kAllFusorKinds[] = {
    FusorKind::kAddition,      FusorKind::kAverage,
    FusorKind::kConcatenation, FusorKind::kMultiplication,
    FusorKind::kMaximum,       FusorKind::kMinimum,
    FusorKind::kGating,        FusorKind::kAttention,
};

// Canonical lowercase names used in configs and reports.
std::string fusor_name(FusorKind k);
FusorKind fusor_from_name(const std::string& name);

bool fusor_needs_params(FusorKind k);

// Learnable fusion parameters, one slot per feature passed to fuse():
//   gating    - fused = sigmoid(sum_m W_m f_m), one d x d matrix per slot
//   attention - fused = sum_m softmax(e)_m f_m with e_m = scorer_m . f_m
// When a subset of modalities is fused (e.g. single-source transfer), the
// caller passes the matching subset of parameter slots.
struct FusorParams {
  std::vector<Matrix> gate_weights;
  std::vector<Vec> attn_scorers;
};

FusorParams init_fusor_params(FusorKind k, std::size_t modality_count,
                              std::size_t d, RngStream& rng);

std::size_t fusor_param_count(FusorKind k, std::size_t modality_count,
                              std::size_t d);

// Output length: m*d for concatenation, d otherwise.
std::size_t fused_dim(FusorKind k, std::size_t m, std::size_t d);

// Applies the fusor. features must be non-empty and share one length;
// params is required for gating/attention (slot count == features count).
Vec fuse(FusorKind k, const std::vector<Vec>& features,
         const FusorParams* params = nullptr);

struct FuseBackwardResult {
  std::vector<Vec> d_features;  // one per input feature
  FusorParams d_params;         // empty unless the kind has parameters
};

// Gradients of fuse() w.r.t. inputs and parameters. For maximum/minimum the
// subgradient flows to the attaining argument; ties go to the lowest slot
// index.
FuseBackwardResult fuse_backward(FusorKind k, const std::vector<Vec>& features,
                                 const FusorParams* params, const Vec& d_out);

}  // namespace twinkit
