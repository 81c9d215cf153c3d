#include "twinkit/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

namespace twinkit {

namespace {

using nlohmann::json;

// Collects every schema violation before failing.
struct SchemaErrors {
  std::vector<std::string> items;

  void add(const std::string& path, const std::string& msg) {
    items.push_back(path + ": " + msg);
  }
  void raise_if_any() const {
    if (items.empty()) return;
    std::string all = "config schema violations:";
    for (const std::string& item : items) all += "\n  - " + item;
    throw ConfigError(all);
  }
};

void check_keys(const json& obj, const std::string& path,
                const std::vector<std::string>& allowed, SchemaErrors& errs) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      errs.add(path.empty() ? key : path + "." + key, "unknown key");
  }
}

template <typename T>
void read_field(const json& obj, const std::string& path,
                const std::string& key, T& out, SchemaErrors& errs) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    errs.add(path + "." + key, "wrong type");
  }
}

void parse_world(const json& j, WorldConfig& world, SchemaErrors& errs) {
  check_keys(j, "world",
             {"seed", "areas", "steps_per_area", "window", "walk_step_std",
              "walk_revert", "noise_std", "ap_positions", "area_seeds"},
             errs);
  read_field(j, "world", "seed", world.seed, errs);
  read_field(j, "world", "areas", world.area_count, errs);
  read_field(j, "world", "steps_per_area", world.steps_per_area, errs);
  read_field(j, "world", "window", world.window, errs);
  read_field(j, "world", "walk_step_std", world.walk_step_std, errs);
  read_field(j, "world", "walk_revert", world.walk_revert, errs);
  if (j.contains("noise_std")) {
    const auto& n = j.at("noise_std");
    if (!n.is_object()) {
      errs.add("world.noise_std", "must be an object with V/W/S");
    } else {
      check_keys(n, "world.noise_std", {"V", "W", "S"}, errs);
      read_field(n, "world.noise_std", "V", world.noise_std[0], errs);
      read_field(n, "world.noise_std", "W", world.noise_std[1], errs);
      read_field(n, "world.noise_std", "S", world.noise_std[2], errs);
    }
  }
  if (j.contains("ap_positions")) {
    try {
      world.ap_positions.clear();
      for (const auto& p : j.at("ap_positions"))
        world.ap_positions.push_back(
            {p.at(0).get<double>(), p.at(1).get<double>()});
    } catch (const json::exception&) {
      errs.add("world.ap_positions", "must be a list of [x, y] pairs");
    }
  }
  read_field(j, "world", "area_seeds", world.area_seeds, errs);
}

void parse_fed(const json& j, const std::string& path, FedConfig& fed,
               SchemaErrors& errs, bool donor_stage,
               ExperimentConfig* cfg) {
  std::vector<std::string> keys = {"rounds",  "local_steps", "local_lr",
                                   "global_lr", "epsilon",   "mu",
                                   "alpha",   "aggregation"};
  if (donor_stage) keys.push_back("objective");
  if (!donor_stage) {
    keys.push_back("fine_tune_encoders");
    keys.push_back("encoder_lr_scale");
  }
  check_keys(j, path, keys, errs);
  read_field(j, path, "rounds", fed.rounds, errs);
  read_field(j, path, "local_steps", fed.local_steps, errs);
  read_field(j, path, "local_lr", fed.local_lr, errs);
  read_field(j, path, "global_lr", fed.global_lr, errs);
  read_field(j, path, "epsilon", fed.epsilon, errs);
  read_field(j, path, "mu", fed.mu, errs);
  read_field(j, path, "alpha", fed.alpha, errs);
  if (j.contains("aggregation")) {
    try {
      fed.aggregation =
          aggregation_from_name(j.at("aggregation").get<std::string>());
    } catch (const std::exception& e) {
      errs.add(path + ".aggregation", e.what());
    }
  }
  if (cfg) {
    if (donor_stage && j.contains("objective")) {
      try {
        cfg->donor_objective =
            train_mode_from_name(j.at("objective").get<std::string>());
      } catch (const std::exception& e) {
        errs.add(path + ".objective", e.what());
      }
    }
    if (!donor_stage) {
      read_field(j, path, "fine_tune_encoders", cfg->fine_tune_encoders, errs);
      read_field(j, path, "encoder_lr_scale", cfg->encoder_lr_scale, errs);
    }
  }
}

void parse_twin(const json& j, ExperimentConfig& cfg, SchemaErrors& errs) {
  check_keys(j, "twin",
             {"latent_dim", "fusors", "conv", "hidden", "activation",
              "loss_space", "eval_fraction"},
             errs);
  read_field(j, "twin", "latent_dim", cfg.latent_dim, errs);
  if (j.contains("fusors")) {
    cfg.fusors.clear();
    try {
      for (const auto& f : j.at("fusors"))
        cfg.fusors.push_back(fusor_from_name(f.get<std::string>()));
    } catch (const std::exception& e) {
      errs.add("twin.fusors", e.what());
    }
  }
  if (j.contains("conv")) {
    cfg.layers.conv.clear();
    try {
      for (const auto& c : j.at("conv")) {
        check_keys(c, "twin.conv[]", {"channels", "kernel", "stride"}, errs);
        LayerConfig::ConvSpec spec;
        spec.channels = c.at("channels").get<std::size_t>();
        spec.kernel = c.at("kernel").get<std::size_t>();
        spec.stride = c.value("stride", std::size_t{1});
        cfg.layers.conv.push_back(spec);
      }
    } catch (const json::exception&) {
      errs.add("twin.conv", "must be a list of {channels, kernel, stride}");
    }
  }
  read_field(j, "twin", "hidden", cfg.layers.hidden, errs);
  if (j.contains("activation")) {
    try {
      cfg.layers.hidden_activation =
          activation_from_name(j.at("activation").get<std::string>());
    } catch (const std::exception& e) {
      errs.add("twin.activation", e.what());
    }
  }
  if (j.contains("loss_space")) {
    const std::string v = j.at("loss_space").get<std::string>();
    if (v == "raw") {
      cfg.loss_space = LossSpace::kRaw;
    } else if (v == "feature") {
      cfg.loss_space = LossSpace::kFeature;
    } else {
      errs.add("twin.loss_space", "must be raw or feature");
    }
  }
  read_field(j, "twin", "eval_fraction", cfg.eval_fraction, errs);
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");

  ExperimentConfig cfg;
  cfg.ops = {op_from_name("V->W"), op_from_name("V+W->S"),
             op_from_name("S->V,W,S")};
  SchemaErrors errs;
  check_keys(j, "",
             {"seeds", "mode", "output_dir", "threads", "dataset", "world",
              "twin", "fed", "transform", "ops"},
             errs);

  read_field(j, "", "seeds", cfg.seeds, errs);
  if (j.contains("mode")) {
    try {
      const std::string m = j.at("mode").get<std::string>();
      cfg.transform_mode = train_mode_from_name(m);
      if (cfg.transform_mode == TrainMode::kMapping)
        errs.add("mode", "must be unified or specific");
    } catch (const std::exception& e) {
      errs.add("mode", e.what());
    }
  }
  read_field(j, "", "output_dir", cfg.output_dir, errs);
  read_field(j, "", "threads", cfg.threads, errs);
  read_field(j, "", "dataset", cfg.dataset_path, errs);
  if (j.contains("world")) parse_world(j.at("world"), cfg.world, errs);
  if (j.contains("twin")) parse_twin(j.at("twin"), cfg, errs);
  // transform stage defaults to the donor stage settings
  if (j.contains("fed")) parse_fed(j.at("fed"), "fed", cfg.fed, errs, true, &cfg);
  cfg.transform_fed = cfg.fed;
  if (j.contains("transform"))
    parse_fed(j.at("transform"), "transform", cfg.transform_fed, errs, false,
              &cfg);
  if (j.contains("ops")) {
    cfg.ops.clear();
    try {
      for (const auto& o : j.at("ops"))
        cfg.ops.push_back(op_from_name(o.get<std::string>()));
    } catch (const std::exception& e) {
      errs.add("ops", e.what());
    }
  }
  errs.raise_if_any();

  if (cfg.seeds.empty()) throw ConfigError("config: seeds must be non-empty");
  if (cfg.fusors.empty()) throw ConfigError("config: fusors must be non-empty");
  if (cfg.ops.empty()) throw ConfigError("config: ops must be non-empty");
  if (cfg.eval_fraction < 0.0 || cfg.eval_fraction >= 1.0)
    throw ConfigError("config: eval_fraction must lie in [0, 1)");
  if (cfg.threads < 1) throw ConfigError("config: threads must be >= 1");
  validate(cfg.world);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return config_from_json_text(text);
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json j;
  j["seeds"] = cfg.seeds;
  j["mode"] = train_mode_name(cfg.transform_mode);
  j["output_dir"] = cfg.output_dir;
  j["threads"] = cfg.threads;
  j["dataset"] = cfg.dataset_path;

  json& w = j["world"];
  w["seed"] = cfg.world.seed;
  w["areas"] = cfg.world.area_count;
  w["steps_per_area"] = cfg.world.steps_per_area;
  w["window"] = cfg.world.window;
  w["walk_step_std"] = cfg.world.walk_step_std;
  w["walk_revert"] = cfg.world.walk_revert;
  w["noise_std"] = {{"V", cfg.world.noise_std[0]},
                    {"W", cfg.world.noise_std[1]},
                    {"S", cfg.world.noise_std[2]}};
  if (!cfg.world.ap_positions.empty()) {
    auto arr = json::array();
    for (const auto& p : cfg.world.ap_positions) arr.push_back({p[0], p[1]});
    w["ap_positions"] = arr;
  }
  if (!cfg.world.area_seeds.empty()) w["area_seeds"] = cfg.world.area_seeds;

  json& t = j["twin"];
  t["latent_dim"] = cfg.latent_dim;
  auto fusors = json::array();
  for (FusorKind k : cfg.fusors) fusors.push_back(fusor_name(k));
  t["fusors"] = fusors;
  auto conv = json::array();
  for (const auto& c : cfg.layers.conv)
    conv.push_back({{"channels", c.channels},
                    {"kernel", c.kernel},
                    {"stride", c.stride}});
  t["conv"] = conv;
  t["hidden"] = cfg.layers.hidden;
  t["activation"] = activation_name(cfg.layers.hidden_activation);
  t["loss_space"] = cfg.loss_space == LossSpace::kRaw ? "raw" : "feature";
  t["eval_fraction"] = cfg.eval_fraction;

  auto fed_json = [](const FedConfig& fed) {
    json f;
    f["rounds"] = fed.rounds;
    f["local_steps"] = fed.local_steps;
    f["local_lr"] = fed.local_lr;
    f["global_lr"] = fed.global_lr;
    f["epsilon"] = fed.epsilon;
    f["mu"] = fed.mu;
    f["alpha"] = fed.alpha;
    f["aggregation"] = aggregation_name(fed.aggregation);
    return f;
  };
  j["fed"] = fed_json(cfg.fed);
  j["fed"]["objective"] = train_mode_name(cfg.donor_objective);
  j["transform"] = fed_json(cfg.transform_fed);
  j["transform"]["fine_tune_encoders"] = cfg.fine_tune_encoders;
  j["transform"]["encoder_lr_scale"] = cfg.encoder_lr_scale;

  auto ops = json::array();
  for (const TwinOp& op : cfg.ops) ops.push_back(op_name(op));
  j["ops"] = ops;
  return j.dump(2) + "\n";
}

void apply_overrides(ExperimentConfig& cfg, const CliOverrides& ov) {
  if (ov.seed) {
    cfg.seeds = {*ov.seed};
    cfg.world.seed = *ov.seed;
  }
  if (ov.out) cfg.output_dir = *ov.out;
  if (ov.threads) cfg.threads = *ov.threads;
  if (ov.mode) {
    cfg.transform_mode = train_mode_from_name(*ov.mode);
    if (cfg.transform_mode == TrainMode::kMapping)
      throw ConfigError("--mode must be unified or specific");
  }
}

namespace {

std::string sanitize(const std::string& name) {
  std::string out;
  for (char ch : name) {
    if (ch == '-' || ch == '>') continue;
    if (ch == '+' || ch == ',') {
      out.push_back('_');
    } else {
      out.push_back(ch);
    }
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

MultiModalDataset obtain_dataset(const ExperimentConfig& cfg,
                                 std::uint64_t seed) {
  if (!cfg.dataset_path.empty()) return load_csv(cfg.dataset_path);
  WorldConfig world = cfg.world;
  world.seed = seed;
  return generate_world(world);
}

const std::vector<Modality> kAllMods = {Modality::kVisual, Modality::kWireless,
                                        Modality::kSensory};

int dispatch(const std::string& out_dir, const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const DivergenceError& e) {
    log_error(std::string("divergence: ") + e.what());
    try {
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_divergence_report(e, out_dir + "/divergence.json");
        std::cout << "divergence report: " << out_dir << "/divergence.json\n";
      }
    } catch (const std::exception&) {
      // reporting failure must not mask the divergence exit code
    }
    return kExitDivergence;
  } catch (const IoError& e) {
    log_error(e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    log_error(e.what());
    return kExitConfig;
  }
}

}  // namespace

int cmd_generate(const std::string& config_path, const CliOverrides& ov) {
  std::string out_dir;
  return dispatch(out_dir, [&] {
    ExperimentConfig cfg = load_config(config_path);
    apply_overrides(cfg, ov);
    out_dir = cfg.output_dir;
    std::filesystem::create_directories(cfg.output_dir + "/areas");

    WorldConfig world = cfg.world;
    if (ov.seed) world.seed = *ov.seed;
    const MultiModalDataset ds = generate_world(world);

    save_csv(ds, cfg.output_dir + "/dataset.csv");
    for (std::size_t a = 0; a < ds.areas.size(); ++a)
      save_csv(slice_area(ds, a),
               cfg.output_dir + "/areas/area_" + std::to_string(a) + ".csv");
    write_text_file(cfg.output_dir + "/manifest.json",
                    config_to_json_text(cfg));
    std::cout << "wrote " << ds.areas.size() << " area files under "
              << cfg.output_dir << "/areas\n";
  });
}

int cmd_run(const std::string& config_path, const CliOverrides& ov,
            const std::vector<std::string>& ops_override) {
  std::string out_dir;
  return dispatch(out_dir, [&] {
    ExperimentConfig cfg = load_config(config_path);
    apply_overrides(cfg, ov);
    if (!ops_override.empty()) {
      cfg.ops.clear();
      for (const std::string& o : ops_override)
        cfg.ops.push_back(op_from_name(o));
    }
    out_dir = cfg.output_dir;
    std::filesystem::create_directories(cfg.output_dir + "/checkpoints");
    write_text_file(cfg.output_dir + "/manifest.json",
                    config_to_json_text(cfg));

    std::vector<HistoryRow> history;
    std::vector<NmseTableRow> nmse_rows;
    bool bound_violated = false;
    json bound_report = json::array();
    std::size_t donor_params = 0;
    std::uint64_t raw_bytes = 0;
    std::size_t actual_areas = cfg.world.area_count;

    for (const std::uint64_t seed : cfg.seeds) {
      const MultiModalDataset ds = obtain_dataset(cfg, seed);
      actual_areas = ds.areas.size();
      const TwinTrainData data =
          prepare_train_data(ds, cfg.world.window, cfg.eval_fraction);
      raw_bytes = data.raw_bytes;
      const std::string seed_str = std::to_string(seed);

      FedConfig donor_fed = cfg.fed;
      donor_fed.area_count = actual_areas;
      FedConfig trans_fed = cfg.transform_fed;
      trans_fed.area_count = actual_areas;

      for (std::size_t fi = 0; fi < cfg.fusors.size(); ++fi) {
        const FusorKind fusor = cfg.fusors[fi];
        const std::string fusor_str = fusor_name(fusor);
        log_info("seed " + seed_str + ", fusor " + fusor_str +
                 ": training donor twin");

        RngStream build_rng = RngStream(seed).fork(10000 + fi);
        const TwinModel donor_template =
            build_twin(kAllMods, cfg.world.window, cfg.latent_dim, fusor,
                       cfg.layers, cfg.loss_space, build_rng);
        donor_params = twin_param_count(donor_template);

        TrainSpec donor_spec;
        donor_spec.mode = cfg.donor_objective;

        if (donor_fed.aggregation == FedConfig::Aggregation::kGated) {
          // step-size sanity against the theoretical bound, using empirical
          // constant estimates on the donor objective
          std::vector<TwinObjective> objs;
          for (const auto& area : data.train)
            objs.emplace_back(donor_template, area, data.st, donor_spec);
          std::vector<const LocalObjective*> ptrs;
          for (const auto& o : objs) ptrs.push_back(&o);
          const auto est = estimate_constants(
              ptrs, flatten_twin(donor_template), 0.05, 4,
              RngStream(seed).fork(50000 + fi));
          const auto chk = check_step_size(
              std::max(est.g_max, 1e-9), std::max(est.l_max, 1e-9),
              donor_fed.mu, donor_fed.local_steps, donor_fed.global_lr,
              donor_fed.local_lr);
          json entry;
          entry["seed"] = seed;
          entry["fusor"] = fusor_str;
          entry["g_hat"] = est.g_max;
          entry["l_hat"] = est.l_max;
          entry["gamma_l_sq"] = est.gamma_l_sq;
          entry["gamma_g_sq"] = est.gamma_g_sq;
          entry["bound"] = chk.bound;
          entry["local_lr"] = donor_fed.local_lr;
          entry["ok"] = chk.ok;
          bound_report.push_back(entry);
          if (!chk.ok) {
            bound_violated = true;
            log_error("step-size bound violated: local_lr " +
                      format_double(donor_fed.local_lr) + " > bound " +
                      format_double(chk.bound));
          }
        }

        const TwinMappingResult donor =
            run_mapping(donor_fed, data, donor_template, donor_spec,
                        RngStream(seed).fork(20000 + fi).seed(), cfg.threads);
        const auto donor_hist =
            flatten_history(fusor_str, "", "donor", seed_str, donor.history);
        history.insert(history.end(), donor_hist.begin(), donor_hist.end());

        for (std::size_t oi = 0; oi < cfg.ops.size(); ++oi) {
          const TwinOp& op = cfg.ops[oi];
          const std::string op_str = op_name(op);
          log_info("seed " + seed_str + ", fusor " + fusor_str + ", op " +
                   op_str + ": transforming");

          TransformConfig tcfg;
          tcfg.fed = trans_fed;
          tcfg.mode = cfg.transform_mode;
          tcfg.fine_tune_encoders = cfg.fine_tune_encoders;
          tcfg.encoder_lr_scale = cfg.encoder_lr_scale;
          tcfg.seed = RngStream(seed).fork(30000 + fi * 256 + oi).seed();
          tcfg.threads = cfg.threads;

          const TransformResult tr = transform({donor.twin}, op, data, tcfg);
          const auto tr_hist = flatten_history(fusor_str, op_str, "transform",
                                               seed_str, tr.history);
          history.insert(history.end(), tr_hist.begin(), tr_hist.end());

          const std::vector<Example>& eval_windows =
              data.probe.empty() ? data.train.front() : data.probe;
          const OpEvaluation eval =
              evaluate_op(tr.twin, eval_windows, op, data.st);
          for (Modality m : op.targets) {
            const auto& r = eval.per_target[static_cast<std::size_t>(m)];
            nmse_rows.push_back(
                {fusor_str, op_str, modality_name(m), seed_str, r->value});
          }
          nmse_rows.push_back(
              {fusor_str, op_str, "all", seed_str, eval.pooled.value});

          save_twin(tr.twin, data.st,
                    cfg.output_dir + "/checkpoints/" + fusor_str + "_" +
                        sanitize(op_str) + "_" + seed_str + ".json");
        }
      }
    }

    const CostPair costs =
        cost_compare(cfg.fed.rounds, actual_areas, donor_params,
                     cfg.fed.local_steps, raw_bytes);
    emit_report(history, with_seed_summaries(nmse_rows),
                {costs.federated, costs.centralized}, cfg.output_dir);
    if (!bound_report.empty())
      write_text_file(cfg.output_dir + "/bound_check.json",
                      bound_report.dump(2) + "\n");
    std::cout << "results: " << cfg.output_dir << "/results.csv\n";
    if (bound_violated)
      std::cout << "warning: step-size bound violated; see "
                << cfg.output_dir << "/bound_check.json\n";
  });
}

int cmd_costs(const std::string& config_path, const CliOverrides& ov) {
  std::string out_dir;
  return dispatch(out_dir, [&] {
    ExperimentConfig cfg = load_config(config_path);
    apply_overrides(cfg, ov);
    out_dir = cfg.output_dir;
    std::filesystem::create_directories(cfg.output_dir);
    write_text_file(cfg.output_dir + "/manifest.json",
                    config_to_json_text(cfg));

    const MultiModalDataset ds = obtain_dataset(cfg, cfg.seeds.front());
    const TwinTrainData data =
        prepare_train_data(ds, cfg.world.window, cfg.eval_fraction);
    RngStream rng(cfg.seeds.front());
    const TwinModel tmpl =
        build_twin(kAllMods, cfg.world.window, cfg.latent_dim,
                   cfg.fusors.front(), cfg.layers, cfg.loss_space, rng);

    const CostPair costs =
        cost_compare(cfg.fed.rounds, ds.areas.size(), twin_param_count(tmpl),
                     cfg.fed.local_steps, data.raw_bytes);
    emit_report({}, {}, {costs.federated, costs.centralized}, cfg.output_dir);
    std::cout << "federated bytes: "
              << costs.federated.upload_bytes + costs.federated.download_bytes
              << ", centralized bytes: "
              << costs.centralized.upload_bytes +
                     costs.centralized.download_bytes
              << "\n";
  });
}

int cmd_check_bound(double g_bound, double lipschitz, double mu,
                    std::size_t beta, double eta,
                    std::optional<double> eta_l) {
  return dispatch("", [&] {
    const auto res =
        check_step_size(g_bound, lipschitz, mu, beta, eta, eta_l.value_or(0.0));
    std::cout << "bound = " << format_double(res.bound) << "\n";
    if (eta_l)
      std::cout << "eta_l = " << format_double(*eta_l) << " -> "
                << (res.ok ? "PASS" : "FAIL") << "\n";
  });
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"twinkit: multi-modal twin transformation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  CliOverrides ov;
  std::string mode_str;
  std::uint64_t seed_val = 0;
  std::size_t threads_val = 0;
  std::string out_str;
  std::string op_str;

  auto add_common = [&](CLI::App* sub, bool with_op) {
    sub->add_option("--config", config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--out", out_str, "output directory override");
    sub->add_option("--seed", seed_val, "seed override");
    sub->add_option("--threads", threads_val, "concurrent areas");
    sub->add_option("--mode", mode_str, "unified|specific");
    if (with_op) sub->add_option("--op", op_str, "twin op, e.g. V->W");
  };

  CLI::App* generate = app.add_subcommand("generate", "write synthetic dataset CSVs");
  add_common(generate, false);
  CLI::App* run = app.add_subcommand("run", "full fusor x op x seed experiment");
  add_common(run, false);
  CLI::App* transfer = app.add_subcommand("transfer", "single transfer op");
  add_common(transfer, true);
  CLI::App* merge = app.add_subcommand("merge", "single merge op");
  add_common(merge, true);
  CLI::App* split = app.add_subcommand("split", "single split op");
  add_common(split, true);
  CLI::App* costs = app.add_subcommand("costs", "federated vs centralized ledger");
  add_common(costs, false);

  CLI::App* bound = app.add_subcommand("check-bound", "evaluate the step-size bound");
  double b_g = 0, b_l = 0, b_mu = 0, b_eta = 0;
  std::size_t b_beta = 0;
  double b_eta_l = -1.0;
  bound->add_option("--G", b_g, "coordinate gradient bound")->required();
  bound->add_option("--L", b_l, "smoothness constant")->required();
  bound->add_option("--mu", b_mu, "damping")->required();
  bound->add_option("--beta", b_beta, "local steps per round")->required();
  bound->add_option("--eta", b_eta, "global update rate")->required();
  bound->add_option("--eta-l", b_eta_l, "local learning rate to check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (!out_str.empty()) ov.out = out_str;
  if (run->count("--seed") || generate->count("--seed") ||
      transfer->count("--seed") || merge->count("--seed") ||
      split->count("--seed") || costs->count("--seed"))
    ov.seed = seed_val;
  if (threads_val > 0) ov.threads = threads_val;
  if (!mode_str.empty()) ov.mode = mode_str;

  auto op_for = [&](TwinOpKind kind, const char* fallback) -> std::optional<std::string> {
    const std::string text = op_str.empty() ? fallback : op_str;
    try {
      if (op_from_name(text).kind != kind) {
        log_error("--op '" + text + "' is not a " + op_kind_name(kind) +
                  " operation");
        return std::nullopt;
      }
    } catch (const std::exception& e) {
      log_error(e.what());
      return std::nullopt;
    }
    return text;
  };

  if (generate->parsed()) return cmd_generate(config_path, ov);
  if (run->parsed()) return cmd_run(config_path, ov);
  if (transfer->parsed()) {
    const auto op = op_for(TwinOpKind::kTransfer, "V->W");
    return op ? cmd_run(config_path, ov, {*op}) : kExitConfig;
  }
  if (merge->parsed()) {
    const auto op = op_for(TwinOpKind::kMerge, "V+W->S");
    return op ? cmd_run(config_path, ov, {*op}) : kExitConfig;
  }
  if (split->parsed()) {
    const auto op = op_for(TwinOpKind::kSplit, "S->V,W,S");
    return op ? cmd_run(config_path, ov, {*op}) : kExitConfig;
  }
  if (costs->parsed()) return cmd_costs(config_path, ov);
  if (bound->parsed())
    return cmd_check_bound(b_g, b_l, b_mu, b_beta, b_eta,
                           b_eta_l >= 0.0 ? std::optional<double>(b_eta_l)
                                          : std::nullopt);
  return kExitConfig;
}

}  // namespace twinkit
