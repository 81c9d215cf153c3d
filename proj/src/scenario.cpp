#include "twinkit/scenario.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace twinkit {

std::size_t modality_dim(Modality m) {
  switch (m) {
    case Modality::kVisual: return 2;
    case Modality::kWireless: return 2;
    case Modality::kSensory: return 3;
  }
  return 0;
}

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::kVisual: return "V";
    case Modality::kWireless: return "W";
    case Modality::kSensory: return "S";
  }
  return "?";
}

Modality modality_from_name(const std::string& name) {
  if (name == "V") return Modality::kVisual;
  if (name == "W") return Modality::kWireless;
  if (name == "S") return Modality::kSensory;
  throw ConfigError("unknown modality: " + name);
}

void validate(const WorldConfig& cfg) {
  if (cfg.area_count < 1) throw ConfigError("world: area_count must be >= 1");
  if (cfg.window < 1) throw ConfigError("world: window must be >= 1");
  if (cfg.steps_per_area < cfg.window)
    throw ConfigError("world: steps_per_area must be >= window");
  for (double s : cfg.noise_std)
    if (s < 0.0 || !std::isfinite(s))
      throw ConfigError("world: noise_std must be non-negative");
  if (cfg.walk_step_std < 0.0)
    throw ConfigError("world: walk_step_std must be non-negative");
  if (cfg.walk_revert < 0.0 || cfg.walk_revert >= 1.0)
    throw ConfigError("world: walk_revert must lie in [0, 1)");
  if (!cfg.ap_positions.empty() && cfg.ap_positions.size() != cfg.area_count)
    throw ConfigError("world: ap_positions must have one entry per area");
  if (!cfg.area_seeds.empty() && cfg.area_seeds.size() != cfg.area_count)
    throw ConfigError("world: area_seeds must have one entry per area");
}

double rssi_from_range(double range) {
  return -40.0 - 20.0 * std::log10(std::max(range, 0.1));
}

namespace {

// Every area deploys its AP at the same offset from the area origin, so the
// position-to-wireless mapping is shared across areas and a global twin can
// represent it.
std::array<double, 2> default_ap(std::size_t, std::size_t) {
  return {4.0, 3.0};
}

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

}  // namespace

MultiModalDataset generate_world(const WorldConfig& cfg) {
  validate(cfg);
  const std::size_t n = cfg.area_count;
  const std::size_t T = cfg.steps_per_area;

  MultiModalDataset ds;
  ds.has_latent = true;
  ds.areas.resize(n);
  ds.ap_positions.resize(n);

  RngStream master(cfg.seed);
  for (std::size_t a = 0; a < n; ++a) {
    ds.ap_positions[a] =
        cfg.ap_positions.empty() ? default_ap(a, n) : cfg.ap_positions[a];
    RngStream rng = cfg.area_seeds.empty()
                        ? master.fork(a)
                        : RngStream(cfg.area_seeds[a]);

    AreaData& area = ds.areas[a];
    area.latent.resize(T);
    for (auto& mv : area.samples) mv.reserve(T);

    // Latent walk: Gaussian steps with a pull toward the origin.
    std::array<double, 2> pos = {rng.normal(0.0, cfg.walk_step_std),
                                 rng.normal(0.0, cfg.walk_step_std)};
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) {
        for (int c = 0; c < 2; ++c) {
          pos[c] += -cfg.walk_revert * pos[c] +
                    rng.normal(0.0, cfg.walk_step_std);
        }
      }
      area.latent[t] = pos;
    }

    // Derived per-step quantities before noise.
    std::vector<std::array<double, 2>> vel(T, {0.0, 0.0});
    std::vector<std::array<double, 2>> acc(T, {0.0, 0.0});
    std::vector<double> heading(T, 0.0);
    for (std::size_t t = 1; t < T; ++t) {
      for (int c = 0; c < 2; ++c)
        vel[t][c] = area.latent[t][c] - area.latent[t - 1][c];
      heading[t] = std::atan2(vel[t][1], vel[t][0]);
    }
    for (std::size_t t = 1; t < T; ++t)
      for (int c = 0; c < 2; ++c) acc[t][c] = vel[t][c] - vel[t - 1][c];

    const auto& ap = ds.ap_positions[a];
    for (std::size_t t = 0; t < T; ++t) {
      Vec v(2), w(2), s(3);
      v[0] = area.latent[t][0] +
             rng.normal(0.0, cfg.noise_std[0]);
      v[1] = area.latent[t][1] +
             rng.normal(0.0, cfg.noise_std[0]);

      const double range = std::hypot(area.latent[t][0] - ap[0],
                                      area.latent[t][1] - ap[1]);
      w[0] = range + rng.normal(0.0, cfg.noise_std[1]);
      w[1] = rssi_from_range(range) + rng.normal(0.0, cfg.noise_std[1]);

      const double heading_rate =
          t > 0 ? wrap_angle(heading[t] - heading[t - 1]) : 0.0;
      s[0] = acc[t][0] + rng.normal(0.0, cfg.noise_std[2]);
      s[1] = acc[t][1] + rng.normal(0.0, cfg.noise_std[2]);
      s[2] = heading_rate + rng.normal(0.0, cfg.noise_std[2]);

      area.samples[0].push_back(std::move(v));
      area.samples[1].push_back(std::move(w));
      area.samples[2].push_back(std::move(s));
    }
  }
  return ds;
}

std::vector<std::vector<Example>> window(const MultiModalDataset& ds,
                                         std::size_t w) {
  if (w < 1) throw ShapeError("window: w must be >= 1");
  const std::size_t T = ds.steps();
  if (w > T)
    throw ShapeError("window: w = " + std::to_string(w) +
                     " exceeds steps per area = " + std::to_string(T));
  std::vector<std::vector<Example>> out(ds.areas.size());
  for (std::size_t a = 0; a < ds.areas.size(); ++a) {
    const AreaData& area = ds.areas[a];
    out[a].reserve(T - w + 1);
    for (std::size_t start = 0; start + w <= T; ++start) {
      Example ex;
      for (std::size_t m = 0; m < kModalityCount; ++m) {
        Vec& flat = ex.window[m];
        flat.reserve(w * area.samples[m][0].size());
        for (std::size_t t = start; t < start + w; ++t)
          flat.insert(flat.end(), area.samples[m][t].begin(),
                      area.samples[m][t].end());
      }
      out[a].push_back(std::move(ex));
    }
  }
  return out;
}

Vec Standardizer::apply(Modality m, const Vec& window_values) const {
  const std::size_t mi = static_cast<std::size_t>(m);
  const std::size_t dim = mean[mi].size();
  Vec out(window_values.size());
  for (std::size_t i = 0; i < window_values.size(); ++i) {
    const std::size_t c = i % dim;
    out[i] = (window_values[i] - mean[mi][c]) / stddev[mi][c];
  }
  return out;
}

Vec Standardizer::invert(Modality m, const Vec& window_values) const {
  const std::size_t mi = static_cast<std::size_t>(m);
  const std::size_t dim = mean[mi].size();
  Vec out(window_values.size());
  for (std::size_t i = 0; i < window_values.size(); ++i) {
    const std::size_t c = i % dim;
    out[i] = window_values[i] * stddev[mi][c] + mean[mi][c];
  }
  return out;
}

Standardizer fit_standardizer(const MultiModalDataset& ds,
                              std::size_t train_steps) {
  if (ds.areas.empty()) throw DataError("fit_standardizer: empty dataset");
  const std::size_t T = std::min(train_steps, ds.steps());
  if (T == 0) throw DataError("fit_standardizer: no training steps");

  Standardizer st;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    const std::size_t dim = ds.areas[0].samples[m][0].size();
    Vec mean(dim, 0.0), var(dim, 0.0);
    std::size_t count = 0;
    for (const AreaData& area : ds.areas)
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t c = 0; c < dim; ++c) mean[c] += area.samples[m][t][c];
        ++count;
      }
    for (double& x : mean) x /= static_cast<double>(count);
    for (const AreaData& area : ds.areas)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < dim; ++c) {
          const double d = area.samples[m][t][c] - mean[c];
          var[c] += d * d;
        }
    Vec stddev(dim);
    for (std::size_t c = 0; c < dim; ++c) {
      stddev[c] = std::sqrt(var[c] / static_cast<double>(count));
      if (stddev[c] < 1e-12) stddev[c] = 1.0;  // constant channel
    }
    st.mean[m] = std::move(mean);
    st.stddev[m] = std::move(stddev);
  }
  return st;
}

namespace {

const char* kHeaderWithLatent =
    "area,step,latent_x,latent_y,v_0,v_1,w_0,w_1,s_0,s_1,s_2";
const char* kHeaderNoLatent = "area,step,v_0,v_1,w_0,w_1,s_0,s_1,s_2";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void save_csv(const MultiModalDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << (ds.has_latent ? kHeaderWithLatent : kHeaderNoLatent) << '\n';
  for (std::size_t a = 0; a < ds.areas.size(); ++a) {
    const AreaData& area = ds.areas[a];
    const std::size_t T = area.samples[0].size();
    for (std::size_t t = 0; t < T; ++t) {
      out << a << ',' << t;
      if (ds.has_latent)
        out << ',' << format_double(area.latent[t][0]) << ','
            << format_double(area.latent[t][1]);
      for (std::size_t m = 0; m < kModalityCount; ++m)
        for (double x : area.samples[m][t]) out << ',' << format_double(x);
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

MultiModalDataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path);
  // strip optional BOM / trailing CR
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n'))
    line.pop_back();

  bool has_latent;
  if (line == kHeaderWithLatent) {
    has_latent = true;
  } else if (line == kHeaderNoLatent) {
    has_latent = false;
  } else {
    throw ParseError(path + ":1: unrecognized header '" + line + "'");
  }
  const std::size_t expected_cols = has_latent ? 11 : 9;

  MultiModalDataset ds;
  ds.has_latent = has_latent;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != expected_cols)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(expected_cols) + " columns, got " +
                       std::to_string(cells.size()));
    std::size_t area_idx, step;
    Vec values;
    try {
      area_idx = static_cast<std::size_t>(std::stoull(cells[0]));
      step = static_cast<std::size_t>(std::stoull(cells[1]));
      for (std::size_t c = 2; c < cells.size(); ++c)
        values.push_back(parse_double(cells[c]));
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": malformed row");
    }

    if (area_idx >= ds.areas.size()) {
      if (area_idx != ds.areas.size())
        throw AlignmentError(path + ":" + std::to_string(lineno) +
                             ": area indices must be contiguous");
      ds.areas.emplace_back();
    }
    AreaData& area = ds.areas[area_idx];
    const std::size_t expected_step = area.samples[0].size();
    if (step != expected_step)
      throw AlignmentError(path + ":" + std::to_string(lineno) + ": step " +
                           std::to_string(step) + " out of order (expected " +
                           std::to_string(expected_step) + ")");

    std::size_t off = 0;
    if (has_latent) {
      area.latent.push_back({values[0], values[1]});
      off = 2;
    }
    area.samples[0].push_back(Vec(values.begin() + off, values.begin() + off + 2));
    area.samples[1].push_back(Vec(values.begin() + off + 2, values.begin() + off + 4));
    area.samples[2].push_back(Vec(values.begin() + off + 4, values.begin() + off + 7));
  }

  if (ds.areas.empty()) throw DataError("empty data section: " + path);
  const std::size_t T = ds.areas[0].samples[0].size();
  for (const AreaData& area : ds.areas)
    if (area.samples[0].size() != T)
      throw AlignmentError(path + ": areas have unequal step counts");
  ds.ap_positions.assign(ds.areas.size(), {0.0, 0.0});
  return ds;
}

MultiModalDataset slice_area(const MultiModalDataset& ds, std::size_t area) {
  if (area >= ds.areas.size()) throw ShapeError("slice_area: no such area");
  MultiModalDataset out;
  out.has_latent = ds.has_latent;
  out.areas.push_back(ds.areas[area]);
  out.ap_positions.push_back(ds.ap_positions[area]);
  return out;
}

}  // namespace twinkit
