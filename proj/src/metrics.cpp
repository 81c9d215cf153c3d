#include "twinkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace twinkit {

NmseResult nmse(const std::vector<Vec>& pred, const std::vector<Vec>& truth) {
  if (pred.size() != truth.size())
    throw ShapeError("nmse: sample count mismatch");
  if (truth.size() < 2) throw ShapeError("nmse: needs at least 2 samples");
  const std::size_t dim = truth[0].size();
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (pred[i].size() != dim || truth[i].size() != dim)
      throw ShapeError("nmse: inconsistent vector lengths");

  Vec mean(dim, 0.0);
  for (const Vec& t : truth)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += t[j];
  for (double& x : mean) x /= static_cast<double>(truth.size());

  double err = 0.0, var = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      const double e = pred[i][j] - truth[i][j];
      const double d = truth[i][j] - mean[j];
      err += e * e;
      var += d * d;
    }
  if (var <= 0.0)
    throw NumericError("nmse: ground truth has zero variance");

  NmseResult out;
  out.value = 100.0 * err / var;
  out.samples = truth.size();
  return out;
}

std::vector<HistoryRow> flatten_history(const std::string& fusor,
                                        const std::string& op,
                                        const std::string& phase,
                                        const std::string& seed,
                                        const std::vector<RoundRecord>& recs) {
  std::vector<HistoryRow> rows;
  for (const RoundRecord& rec : recs) {
    for (std::size_t a = 0; a < rec.area_losses.size(); ++a) {
      HistoryRow r;
      r.fusor = fusor;
      r.op = op;
      r.phase = phase;
      r.seed = seed;
      r.round = rec.round;
      r.area = a;
      r.loss = rec.area_losses[a];
      rows.push_back(std::move(r));
    }
    HistoryRow sum;
    sum.fusor = fusor;
    sum.op = op;
    sum.phase = phase;
    sum.seed = seed;
    sum.round = rec.round;
    sum.loss = rec.global_loss;
    sum.grad_norm_sq = rec.grad_norm_sq;
    sum.up_bytes = rec.up_bytes;
    sum.down_bytes = rec.down_bytes;
    sum.wall_ms = rec.wall_ms;
    rows.push_back(std::move(sum));
  }
  return rows;
}

std::vector<NmseTableRow> with_seed_summaries(std::vector<NmseTableRow> rows) {
  std::map<std::tuple<std::string, std::string, std::string>, Vec> groups;
  for (const NmseTableRow& r : rows) {
    if (r.seed == "mean" || r.seed == "std") continue;
    groups[{r.fusor, r.op, r.target}].push_back(r.value);
  }
  for (const auto& [key, values] : groups) {
    if (values.size() < 2) continue;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    const auto& [fusor, op, target] = key;
    rows.push_back({fusor, op, target, "mean", mean});
    rows.push_back({fusor, op, target, "std", std::sqrt(var)});
  }
  return rows;
}

namespace {

std::string csv_cell_u64(const std::optional<std::uint64_t>& v) {
  return v ? std::to_string(*v) : std::string();
}

std::string csv_cell_double(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace

std::string render_chart_svg(const std::vector<NmseTableRow>& nmse_table) {
  // mean pooled NMSE per (op, fusor); insertion order defines the layout
  std::vector<std::string> ops, fusors;
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> cells;
  for (const NmseTableRow& r : nmse_table) {
    if (r.target != "all") continue;
    if (r.seed == "mean" || r.seed == "std") continue;
    if (std::find(ops.begin(), ops.end(), r.op) == ops.end())
      ops.push_back(r.op);
    if (std::find(fusors.begin(), fusors.end(), r.fusor) == fusors.end())
      fusors.push_back(r.fusor);
    auto& cell = cells[{r.op, r.fusor}];
    cell.first += r.value;
    cell.second += 1;
  }

  const double width = 640.0, height = 400.0;
  const double margin_left = 60.0, margin_bottom = 60.0, margin_top = 30.0;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" "
         "width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg << "<text x=\"320\" y=\"20\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">NMSE by fusor and "
         "operation</text>\n";

  if (!ops.empty() && !fusors.empty()) {
    double max_val = 0.0;
    for (const auto& [key, cell] : cells)
      max_val = std::max(max_val, cell.first / cell.second);
    if (max_val <= 0.0) max_val = 1.0;

    const char* palette[] = {"#4c78a8", "#f58518", "#54a24b", "#e45756",
                             "#72b7b2", "#eeca3b", "#b279a2", "#9d755d"};
    const double plot_w = width - margin_left - 20.0;
    const double plot_h = height - margin_top - margin_bottom;
    const double group_w = plot_w / static_cast<double>(ops.size());
    const double bar_w = group_w / static_cast<double>(fusors.size() + 1);

    svg << "<line x1=\"" << format_double(margin_left) << "\" y1=\""
        << format_double(margin_top) << "\" x2=\""
        << format_double(margin_left) << "\" y2=\""
        << format_double(margin_top + plot_h)
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << format_double(margin_left) << "\" y1=\""
        << format_double(margin_top + plot_h) << "\" x2=\""
        << format_double(margin_left + plot_w) << "\" y2=\""
        << format_double(margin_top + plot_h)
        << "\" stroke=\"black\"/>\n";

    for (std::size_t oi = 0; oi < ops.size(); ++oi) {
      for (std::size_t fi = 0; fi < fusors.size(); ++fi) {
        const auto it = cells.find({ops[oi], fusors[fi]});
        if (it == cells.end()) continue;
        const double value = it->second.first / it->second.second;
        const double h = plot_h * value / max_val;
        const double x = margin_left + group_w * oi + bar_w * (fi + 0.5);
        const double y = margin_top + plot_h - h;
        svg << "<rect class=\"bar\" x=\"" << format_double(x) << "\" y=\""
            << format_double(y) << "\" width=\"" << format_double(bar_w * 0.9)
            << "\" height=\"" << format_double(h) << "\" fill=\""
            << palette[fi % 8] << "\"><title>" << fusors[fi] << " " << ops[oi]
            << " = " << format_double(value) << "</title></rect>\n";
      }
      svg << "<text x=\""
          << format_double(margin_left + group_w * (oi + 0.5)) << "\" y=\""
          << format_double(height - margin_bottom + 20.0)
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
             "font-size=\"12\">"
          << ops[oi] << "</text>\n";
    }
    for (std::size_t fi = 0; fi < fusors.size(); ++fi) {
      const double lx = margin_left + 10.0 + 130.0 * static_cast<double>(fi % 4);
      const double ly = height - 18.0 + 14.0 * static_cast<double>(fi / 4);
      svg << "<rect x=\"" << format_double(lx) << "\" y=\""
          << format_double(ly - 9.0)
          << "\" width=\"10\" height=\"10\" fill=\"" << palette[fi % 8]
          << "\"/>\n";
      svg << "<text x=\"" << format_double(lx + 14.0) << "\" y=\""
          << format_double(ly) << "\" font-family=\"sans-serif\" "
             "font-size=\"11\">"
          << fusors[fi] << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_report(const std::vector<HistoryRow>& history,
                 const std::vector<NmseTableRow>& nmse_table,
                 const std::vector<CostLedger>& ledgers,
                 const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output dir: " + out_dir);

  {
    const std::string path = out_dir + "/results.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "fusor,op,target,seed,nmse\n";
    for (const NmseTableRow& r : nmse_table)
      out << r.fusor << ',' << r.op << ',' << r.target << ',' << r.seed << ','
          << format_double(r.value) << '\n';
    if (!out) throw IoError("write failed: " + path);
  }
  {
    const std::string path = out_dir + "/history.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "fusor,op,phase,seed,round,area,loss,grad_norm_sq,up_bytes,"
           "down_bytes,wall_ms\n";
    for (const HistoryRow& r : history) {
      out << r.fusor << ',' << r.op << ',' << r.phase << ',' << r.seed << ','
          << r.round << ',' << (r.area ? std::to_string(*r.area) : "") << ','
          << format_double(r.loss) << ',' << csv_cell_double(r.grad_norm_sq)
          << ',' << csv_cell_u64(r.up_bytes) << ','
          << csv_cell_u64(r.down_bytes) << ',' << csv_cell_double(r.wall_ms)
          << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
  }
  {
    const std::string path = out_dir + "/costs.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "mode,upload_bytes,download_bytes,total_bytes,local_steps,"
           "server_steps\n";
    for (const CostLedger& l : ledgers)
      out << l.mode << ',' << l.upload_bytes << ',' << l.download_bytes << ','
          << (l.upload_bytes + l.download_bytes) << ',' << l.local_steps << ','
          << l.server_steps << '\n';
    if (!out) throw IoError("write failed: " + path);
  }
  {
    const std::string path = out_dir + "/charts.svg";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << render_chart_svg(nmse_table);
    if (!out) throw IoError("write failed: " + path);
  }
}

}  // namespace twinkit
