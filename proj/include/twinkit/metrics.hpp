#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twinkit/federation.hpp"
#include "twinkit/numerics.hpp"

namespace twinkit {

// Normalized MSE: 100 * sum ||pred - truth||^2 / sum ||truth - mean||^2,
// pooled over samples and coordinates, with a per-coordinate mean. 0 is an
// exact reconstruction; 100 is the constant mean predictor.
struct NmseResult {
  double value = 0.0;
  std::string label;
  std::size_t samples = 0;
};

NmseResult nmse(const std::vector<Vec>& pred, const std::vector<Vec>& truth);

struct NmseTableRow {
  std::string fusor;
  std::string op;
  std::string target;  // modality name or "all"
  std::string seed;    // number, or "mean"/"std" for summary rows
  double value = 0.0;
};

struct HistoryRow {
  std::string fusor;
  std::string op;     // empty for donor training
  std::string phase;  // "donor" or "transform"
  std::string seed;
  std::size_t round = 0;
  std::optional<std::size_t> area;  // empty on round-summary rows
  double loss = 0.0;
  std::optional<double> grad_norm_sq;
  std::optional<std::uint64_t> up_bytes, down_bytes;
  std::optional<double> wall_ms;
};

std::vector<HistoryRow> flatten_history(const std::string& fusor,
                                        const std::string& op,
                                        const std::string& phase,
                                        const std::string& seed,
                                        const std::vector<RoundRecord>& recs);

// Appends mean/std summary rows per (fusor, op, target) group over the
// numeric seeds.
std::vector<NmseTableRow> with_seed_summaries(std::vector<NmseTableRow> rows);

// Writes results.csv, history.csv, costs.csv and charts.svg (grouped bars,
// one bar per fusor within each op group, mean pooled NMSE over seeds).
void emit_report(const std::vector<HistoryRow>& history,
                 const std::vector<NmseTableRow>& nmse_table,
                 const std::vector<CostLedger>& ledgers,
                 const std::string& out_dir);

std::string render_chart_svg(const std::vector<NmseTableRow>& nmse_table);

}  // namespace twinkit
