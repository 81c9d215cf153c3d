#include "twinkit/federation.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace twinkit {

std::string aggregation_name(FedConfig::Aggregation a) {
  return a == FedConfig::Aggregation::kMean ? "mean" : "gated";
}

FedConfig::Aggregation aggregation_from_name(const std::string& name) {
  if (name == "mean") return FedConfig::Aggregation::kMean;
  if (name == "gated") return FedConfig::Aggregation::kGated;
  throw ConfigError("unknown aggregation: " + name);
}

void validate(FedConfig& cfg, std::size_t term_count) {
  if (cfg.area_count < 1) throw ConfigError("fed: area_count must be >= 1");
  if (cfg.local_lr <= 0.0) throw ConfigError("fed: local_lr must be > 0");
  if (cfg.global_lr <= 0.0) throw ConfigError("fed: global_lr must be > 0");
  if (cfg.epsilon < 0.0 || cfg.epsilon > 1.0)
    throw ConfigError("fed: epsilon must lie in [0, 1]");
  if (cfg.mu <= 0.0) throw ConfigError("fed: mu must be > 0");
  if (cfg.alpha.empty()) {
    cfg.alpha.assign(term_count, 1.0 / static_cast<double>(term_count));
  } else {
    if (cfg.alpha.size() != term_count)
      throw ConfigError("fed: alpha must have one weight per modality term (" +
                        std::to_string(term_count) + ")");
    double sum = 0.0;
    for (double a : cfg.alpha) {
      if (a < 0.0) throw ConfigError("fed: alpha weights must be >= 0");
      sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("fed: alpha weights must sum to 1");
  }
}

LocalTrainResult local_train(const LocalObjective& objective, const Vec& start,
                             std::size_t steps, double lr, RngStream rng,
                             const Vec* lr_scale) {
  if (lr <= 0.0) throw ConfigError("local_train: lr must be > 0");
  if (lr_scale && lr_scale->size() != start.size())
    throw ShapeError("local_train: lr_scale length mismatch");

  const std::size_t terms = objective.term_count();
  LocalTrainResult res;
  res.term_deltas.assign(terms, Vec(start.size(), 0.0));

  Vec params = start;
  Vec grad(start.size());
  std::vector<Vec> term_grads(terms, Vec(start.size(), 0.0));
  for (std::size_t step = 0; step < steps; ++step) {
    const double loss = objective.eval(params, &grad, &term_grads, &rng);
    res.losses.push_back(loss);
    if (!std::isfinite(loss))
      throw DivergenceError("local training diverged", -1, -1,
                            static_cast<int>(step), loss);
    for (std::size_t t = 0; t < terms; ++t) {
      Vec& acc = res.term_deltas[t];
      const Vec& g = term_grads[t];
      for (std::size_t j = 0; j < params.size(); ++j) {
        const double scale = lr_scale ? (*lr_scale)[j] : 1.0;
        acc[j] -= lr * scale * g[j];
      }
    }
    for (std::size_t j = 0; j < params.size(); ++j) {
      const double scale = lr_scale ? (*lr_scale)[j] : 1.0;
      params[j] -= lr * scale * grad[j];
    }
    if (!all_finite(params))
      throw DivergenceError("local parameters diverged", -1, -1,
                            static_cast<int>(step), loss);
  }

  res.delta.assign(start.size(), 0.0);
  for (std::size_t j = 0; j < start.size(); ++j)
    res.delta[j] = params[j] - start[j];
  return res;
}

Vec aggregate_mean(const std::vector<Vec>& models) {
  if (models.empty()) throw ShapeError("aggregate_mean: no models");
  const std::size_t dim = models[0].size();
  for (const Vec& m : models)
    if (m.size() != dim) throw ShapeError("aggregate_mean: length mismatch");
  if (models.size() == 1) return models[0];

  // Baseline-shifted mean: identical inputs give exactly the common value.
  Vec acc(dim, 0.0);
  for (std::size_t i = 1; i < models.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) acc[j] += models[i][j] - models[0][j];
  Vec out(dim);
  const double inv_n = 1.0 / static_cast<double>(models.size());
  for (std::size_t j = 0; j < dim; ++j)
    out[j] = models[0][j] + acc[j] * inv_n;
  return out;
}

AggregatorState make_aggregator_state(std::size_t term_count,
                                      std::size_t dim) {
  AggregatorState st;
  st.omega.assign(term_count, Vec(dim, 0.0));
  return st;
}

Vec gated_adaptive_step(AggregatorState& state,
                        const std::vector<Vec>& term_deltas,
                        const FedConfig& cfg) {
  if (cfg.mu <= 0.0) throw ConfigError("gated step: mu must be > 0");
  if (term_deltas.size() != state.omega.size())
    throw ShapeError("gated step: term count mismatch");
  if (cfg.alpha.size() != term_deltas.size())
    throw ShapeError("gated step: alpha count mismatch");
  const std::size_t dim = state.omega.empty() ? 0 : state.omega[0].size();

  Vec theta_delta(dim, 0.0);
  for (std::size_t m = 0; m < term_deltas.size(); ++m) {
    const Vec& delta = term_deltas[m];
    if (delta.size() != dim) throw ShapeError("gated step: delta length");
    Vec& omega = state.omega[m];
    for (std::size_t j = 0; j < dim; ++j) {
      omega[j] = cfg.epsilon * omega[j] +
                 (1.0 - cfg.epsilon) * delta[j] * delta[j];
      theta_delta[j] += cfg.global_lr * cfg.alpha[m] * delta[j] /
                        (std::sqrt(omega[j]) + cfg.mu);
    }
  }
  ++state.round;
  return theta_delta;
}

StepSizeCheck check_step_size(double g_bound, double lipschitz, double mu,
                              std::size_t beta, double eta, double eta_l) {
  if (g_bound <= 0.0 || lipschitz <= 0.0 || mu <= 0.0 || beta == 0 ||
      eta <= 0.0)
    throw ConfigError("check_step_size: all arguments must be positive");
  const double cube = std::cbrt(mu / (120.0 * g_bound * lipschitz * lipschitz));
  const double frac = mu / (4.0 * g_bound + 2.0 * eta * lipschitz);
  StepSizeCheck out;
  out.bound = std::min(cube, frac) / (16.0 * static_cast<double>(beta));
  out.ok = eta_l <= out.bound;
  return out;
}

ConstantEstimates estimate_constants(
    const std::vector<const LocalObjective*>& areas, const Vec& center,
    double radius, std::size_t samples, RngStream rng) {
  if (areas.empty()) throw DataError("estimate_constants: no areas");
  if (samples < 2) throw DataError("estimate_constants: needs >= 2 samples");
  const std::size_t dim = center.size();

  std::vector<Vec> points(samples, Vec(dim));
  for (Vec& p : points)
    for (std::size_t j = 0; j < dim; ++j)
      p[j] = center[j] + radius * rng.normal();

  ConstantEstimates est;
  Vec gamma_l(dim, 0.0), gamma_g(dim, 0.0);
  // grads[a] at the previous point, for Lipschitz ratios
  std::vector<Vec> prev_grads(areas.size());
  bool any_pair = false;

  for (std::size_t s = 0; s < samples; ++s) {
    std::vector<Vec> grads(areas.size(), Vec(dim));
    for (std::size_t a = 0; a < areas.size(); ++a) {
      areas[a]->eval(points[s], &grads[a], nullptr, nullptr);
      for (double g : grads[a])
        est.g_max = std::max(est.g_max, std::abs(g));

      const auto sample_grads = areas[a]->sample_grads(points[s]);
      if (!sample_grads.empty()) {
        Vec var(dim, 0.0);
        for (const Vec& sg : sample_grads)
          for (std::size_t j = 0; j < dim; ++j) {
            const double d = sg[j] - grads[a][j];
            var[j] += d * d;
          }
        for (std::size_t j = 0; j < dim; ++j) {
          var[j] /= static_cast<double>(sample_grads.size());
          gamma_l[j] = std::max(gamma_l[j], var[j]);
        }
      }
    }

    // cross-area variance at this point
    Vec mean_grad(dim, 0.0);
    for (const Vec& g : grads)
      for (std::size_t j = 0; j < dim; ++j) mean_grad[j] += g[j];
    for (double& x : mean_grad) x /= static_cast<double>(areas.size());
    Vec gvar(dim, 0.0);
    for (const Vec& g : grads)
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = g[j] - mean_grad[j];
        gvar[j] += d * d;
      }
    for (std::size_t j = 0; j < dim; ++j) {
      gvar[j] /= static_cast<double>(areas.size());
      gamma_g[j] = std::max(gamma_g[j], gvar[j]);
    }

    if (s > 0) {
      double dx = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = points[s][j] - points[s - 1][j];
        dx += d * d;
      }
      dx = std::sqrt(dx);
      if (dx > 1e-12) {
        any_pair = true;
        for (std::size_t a = 0; a < areas.size(); ++a) {
          double dg = 0.0;
          for (std::size_t j = 0; j < dim; ++j) {
            const double d = grads[a][j] - prev_grads[a][j];
            dg += d * d;
          }
          est.l_max = std::max(est.l_max, std::sqrt(dg) / dx);
        }
      }
    }
    prev_grads = std::move(grads);
  }
  if (!any_pair)
    throw DataError("estimate_constants: all probe pairs degenerate");

  for (std::size_t j = 0; j < dim; ++j) {
    est.gamma_l_sq += gamma_l[j];
    est.gamma_g_sq += gamma_g[j];
  }
  return est;
}

namespace {

template <typename Fn>
void parallel_areas(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

MappingResult run_rounds(FedConfig cfg,
                         const std::vector<const LocalObjective*>& areas,
                         const Vec& initial, const LocalObjective* probe,
                         std::uint64_t master_seed, std::size_t threads,
                         const Vec* lr_scale) {
  if (areas.size() != cfg.area_count)
    throw ConfigError("run_rounds: config expects " +
                      std::to_string(cfg.area_count) + " areas, got " +
                      std::to_string(areas.size()));
  const std::size_t terms = areas.empty() ? 1 : areas[0]->term_count();
  validate(cfg, terms);

  MappingResult result;
  result.params = initial;
  result.ledger.mode = "federated";

  AggregatorState state = make_aggregator_state(terms, initial.size());
  RngStream master(master_seed);

  const std::uint64_t message_bytes =
      static_cast<std::uint64_t>(initial.size()) * 8 + 64;

  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream round_rng = master.fork(round);

    std::vector<LocalTrainResult> locals(areas.size());
    std::vector<std::optional<DivergenceError>> failures(areas.size());
    parallel_areas(areas.size(), threads, [&](std::size_t a) {
      try {
        locals[a] = local_train(*areas[a], result.params, cfg.local_steps,
                                cfg.local_lr, round_rng.fork(a), lr_scale);
      } catch (const DivergenceError& e) {
        failures[a] = DivergenceError(e.what(), static_cast<int>(round),
                                      static_cast<int>(a), e.step, e.loss);
      }
    });
    for (const auto& f : failures)
      if (f) throw *f;

    RoundRecord rec;
    rec.round = round;
    for (const auto& lt : locals)
      rec.area_losses.push_back(lt.losses.empty() ? 0.0 : lt.losses.front());

    if (cfg.aggregation == FedConfig::Aggregation::kMean) {
      std::vector<Vec> models;
      models.reserve(areas.size());
      for (const auto& lt : locals) {
        Vec model(result.params.size());
        for (std::size_t j = 0; j < model.size(); ++j)
          model[j] = result.params[j] + lt.delta[j];
        models.push_back(std::move(model));
      }
      result.params = aggregate_mean(models);
    } else {
      // average each term's partial update across areas, then gate
      std::vector<Vec> term_deltas(terms);
      for (std::size_t t = 0; t < terms; ++t) {
        std::vector<Vec> parts;
        parts.reserve(areas.size());
        for (const auto& lt : locals) parts.push_back(lt.term_deltas[t]);
        term_deltas[t] = aggregate_mean(parts);
      }
      const Vec theta_delta = gated_adaptive_step(state, term_deltas, cfg);
      for (std::size_t j = 0; j < result.params.size(); ++j)
        result.params[j] += theta_delta[j];
    }
    if (!all_finite(result.params))
      throw DivergenceError("aggregated parameters diverged",
                            static_cast<int>(round), -1, -1, 0.0);

    rec.down_bytes = message_bytes * areas.size();
    rec.up_bytes = message_bytes * areas.size();
    result.ledger.download_bytes += rec.down_bytes;
    result.ledger.upload_bytes += rec.up_bytes;
    result.ledger.local_steps += cfg.local_steps * areas.size();
    result.ledger.server_steps += 1;

    if (probe) {
      Vec grad(result.params.size());
      RngStream probe_rng = master.fork(1000000 + round);
      rec.global_loss = probe->eval(result.params, &grad, nullptr, &probe_rng);
      rec.grad_norm_sq = squared_norm(grad);
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    result.history.push_back(std::move(rec));
  }
  return result;
}

std::uint64_t federated_transfer_bytes(std::size_t rounds, std::size_t areas,
                                       std::size_t param_count) {
  const std::uint64_t message = static_cast<std::uint64_t>(param_count) * 8 + 64;
  return 2ULL * rounds * areas * message;
}

CostPair cost_compare(std::size_t rounds, std::size_t areas,
                      std::size_t param_count, std::size_t local_steps,
                      std::uint64_t raw_dataset_bytes) {
  const std::uint64_t message = static_cast<std::uint64_t>(param_count) * 8 + 64;
  CostPair pair;
  pair.federated.mode = "federated";
  pair.federated.download_bytes = rounds * areas * message;
  pair.federated.upload_bytes = rounds * areas * message;
  pair.federated.local_steps = rounds * areas * local_steps;
  pair.federated.server_steps = rounds;

  pair.centralized.mode = "centralized";
  pair.centralized.upload_bytes =
      raw_dataset_bytes + (raw_dataset_bytes > 0 ? 64ULL * areas : 0);
  pair.centralized.download_bytes = message;  // one final model download
  pair.centralized.local_steps = 0;
  pair.centralized.server_steps = rounds * local_steps;
  return pair;
}

void export_history_csv(const std::vector<RoundRecord>& history,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "round,area,loss,grad_norm_sq,up_bytes,down_bytes,wall_ms\n";
  for (const RoundRecord& rec : history) {
    for (std::size_t a = 0; a < rec.area_losses.size(); ++a)
      out << rec.round << ',' << a << ',' << format_double(rec.area_losses[a])
          << ",,,,\n";
    out << rec.round << ",," << format_double(rec.global_loss) << ','
        << format_double(rec.grad_norm_sq) << ',' << rec.up_bytes << ','
        << rec.down_bytes << ',' << format_double(rec.wall_ms) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_divergence_report(const DivergenceError& err,
                             const std::string& path) {
  nlohmann::json j;
  j["error"] = "divergence";
  j["message"] = err.what();
  j["round"] = err.round;
  j["area"] = err.area;
  j["step"] = err.step;
  j["loss"] = std::isfinite(err.loss) ? nlohmann::json(err.loss)
                                      : nlohmann::json("non-finite");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace twinkit
