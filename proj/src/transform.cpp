#include "twinkit/transform.hpp"

#include <algorithm>
#include <cmath>

namespace twinkit {

TwinTrainData prepare_train_data(const MultiModalDataset& ds, std::size_t w,
                                 double eval_fraction) {
  if (eval_fraction < 0.0 || eval_fraction >= 1.0)
    throw ConfigError("eval_fraction must lie in [0, 1)");
  const auto all = window(ds, w);

  TwinTrainData data;
  data.train.resize(all.size());
  for (std::size_t a = 0; a < all.size(); ++a) {
    const std::size_t count = all[a].size();
    std::size_t eval_count =
        static_cast<std::size_t>(std::floor(eval_fraction * count));
    if (eval_fraction > 0.0 && eval_count < 2 && count > 4)
      eval_count = 2;  // keep the probe nmse well-defined
    const std::size_t train_count = count - eval_count;
    if (train_count == 0)
      throw ConfigError("eval_fraction leaves no training windows");
    data.train[a].assign(all[a].begin(), all[a].begin() + train_count);
    data.probe.insert(data.probe.end(), all[a].begin() + train_count,
                      all[a].end());
  }

  const std::size_t eval_steps = ds.steps() > 0 && !all.empty() && !all[0].empty()
                                     ? all[0].size() - data.train[0].size()
                                     : 0;
  data.st = fit_standardizer(ds, ds.steps() - eval_steps);

  for (const AreaData& area : ds.areas)
    for (std::size_t m = 0; m < kModalityCount; ++m)
      for (const Vec& s : area.samples[m])
        data.raw_bytes += static_cast<std::uint64_t>(s.size()) * 8;
  return data;
}

namespace {

std::vector<Modality> term_modalities_for(const TwinModel& twin,
                                          const TrainSpec& spec) {
  switch (spec.mode) {
    case TrainMode::kSpecific: {
      if (!spec.op) throw ConfigError("specific training needs an op");
      std::vector<Modality> mods = spec.op->targets;
      std::sort(mods.begin(), mods.end());
      return mods;
    }
    case TrainMode::kUnified:
    case TrainMode::kMapping:
      return twin.decoder_modalities();
  }
  return twin.decoder_modalities();
}

}  // namespace

TwinObjective::TwinObjective(const TwinModel& twin_template,
                             const std::vector<Example>& examples,
                             const Standardizer& st, const TrainSpec& spec)
    : template_(&twin_template),
      examples_(&examples),
      st_(&st),
      spec_(spec),
      term_mods_(term_modalities_for(twin_template, spec)) {
  if (examples.empty()) throw DataError("twin objective: no examples");
}

std::size_t TwinObjective::dim() const { return twin_param_count(*template_); }

double TwinObjective::eval(const Vec& params, Vec* grad,
                           std::vector<Vec>* term_grads,
                           RngStream* rng) const {
  const TwinModel twin = unflatten_twin(*template_, params);
  if (grad) grad->assign(params.size(), 0.0);
  if (term_grads) {
    term_grads->resize(term_mods_.size());
    for (Vec& g : *term_grads) g.assign(params.size(), 0.0);
  }

  auto bucket_of = [&](Modality m) {
    const auto it = std::find(term_mods_.begin(), term_mods_.end(), m);
    if (it == term_mods_.end())
      throw ConfigError("twin objective: unexpected target modality");
    return static_cast<std::size_t>(it - term_mods_.begin());
  };

  const bool want_grads = grad || term_grads;
  double loss = 0.0;

  auto run_op = [&](const std::vector<Modality>& sources,
                    const std::vector<Modality>& targets) {
    std::vector<Vec> scratch;
    if (want_grads) scratch.assign(targets.size(), Vec(params.size(), 0.0));
    for (const Example& ex : *examples_)
      loss += twin_term(twin, ex, sources, targets, *st_, nullptr, nullptr,
                        want_grads ? &scratch : nullptr);
    if (want_grads) {
      for (std::size_t t = 0; t < targets.size(); ++t) {
        if (grad)
          for (std::size_t j = 0; j < params.size(); ++j)
            (*grad)[j] += scratch[t][j];
        if (term_grads) {
          Vec& bucket = (*term_grads)[bucket_of(targets[t])];
          for (std::size_t j = 0; j < params.size(); ++j)
            bucket[j] += scratch[t][j];
        }
      }
    }
  };

  switch (spec_.mode) {
    case TrainMode::kSpecific:
      run_op(spec_.op->sources, spec_.op->targets);
      break;
    case TrainMode::kUnified: {
      if (!rng) throw ConfigError("unified training needs an rng");
      const auto ops = sample_unified_ops(twin, *rng);
      for (const TwinOp& op : ops) run_op(op.sources, op.targets);
      break;
    }
    case TrainMode::kMapping:
      run_op(twin.encoder_modalities(), twin.decoder_modalities());
      break;
  }
  return loss;
}

std::vector<Vec> TwinObjective::sample_grads(const Vec& params) const {
  if (spec_.mode == TrainMode::kUnified) return {};  // sampled objective
  const TwinModel twin = unflatten_twin(*template_, params);
  const std::vector<Modality> sources = spec_.mode == TrainMode::kSpecific
                                            ? spec_.op->sources
                                            : twin.encoder_modalities();
  const std::vector<Modality> targets = spec_.mode == TrainMode::kSpecific
                                            ? spec_.op->targets
                                            : twin.decoder_modalities();
  const double n = static_cast<double>(examples_->size());
  std::vector<Vec> out;
  out.reserve(examples_->size());
  for (const Example& ex : *examples_) {
    Vec g(params.size(), 0.0);
    twin_term(twin, ex, sources, targets, *st_, nullptr, &g, nullptr);
    for (double& x : g) x *= n;  // mean over samples equals the batch gradient
    out.push_back(std::move(g));
  }
  return out;
}

TwinMappingResult run_mapping(const FedConfig& cfg, const TwinTrainData& data,
                              const TwinModel& twin_template,
                              const TrainSpec& spec, std::uint64_t master_seed,
                              std::size_t threads, const Vec* lr_scale) {
  if (data.train.size() != cfg.area_count)
    throw ConfigError("run_mapping: dataset covers " +
                      std::to_string(data.train.size()) +
                      " areas, config expects " +
                      std::to_string(cfg.area_count));

  std::vector<TwinObjective> objectives;
  objectives.reserve(data.train.size());
  for (const auto& area_examples : data.train)
    objectives.emplace_back(twin_template, area_examples, data.st, spec);
  std::vector<const LocalObjective*> ptrs;
  for (const auto& o : objectives) ptrs.push_back(&o);

  std::optional<TwinObjective> probe;
  if (!data.probe.empty())
    probe.emplace(twin_template, data.probe, data.st, spec);

  const Vec theta0 = flatten_twin(twin_template);
  MappingResult raw = run_rounds(cfg, ptrs, theta0,
                                 probe ? &*probe : nullptr, master_seed,
                                 threads, lr_scale);

  TwinMappingResult out;
  out.twin = unflatten_twin(twin_template, raw.params);
  out.history = std::move(raw.history);
  out.ledger = std::move(raw.ledger);
  return out;
}

TransformResult transform(const std::vector<TwinModel>& donors,
                          const TwinOp& op, const TwinTrainData& data,
                          const TransformConfig& cfg) {
  validate(op);
  if (donors.empty()) throw ConfigError("transform: needs at least one donor");
  const TwinModel& first = donors[0];
  for (const TwinModel& d : donors) {
    if (d.latent_dim != first.latent_dim)
      throw ConfigError("transform: donors disagree on latent dim");
    if (d.window != first.window)
      throw ConfigError("transform: donors disagree on window length");
    if (d.loss_space != first.loss_space)
      throw ConfigError("transform: donors disagree on loss space");
  }

  std::vector<Modality> enc_mods = op.sources;
  std::vector<Modality> dec_mods = op.targets;
  if (cfg.mode == TrainMode::kUnified) {
    enc_mods.assign(kAllModalities, kAllModalities + kModalityCount);
    dec_mods = enc_mods;
  }

  RngStream rng(cfg.seed);
  TwinModel twin = build_twin(enc_mods, dec_mods, first.window,
                              first.latent_dim, first.fusor, first.layers,
                              first.loss_space, rng);

  // Source encoders come from the donors; other encoders (unified mode)
  // reuse donor weights when available and stay fresh otherwise.
  for (Modality m : twin.encoder_modalities()) {
    const bool required =
        std::find(op.sources.begin(), op.sources.end(), m) != op.sources.end();
    const TwinModel* donor = nullptr;
    for (const TwinModel& d : donors)
      if (d.has_encoder(m)) {
        donor = &d;
        break;
      }
    if (!donor) {
      if (required)
        throw ConfigError("transform: no donor provides an encoder for " +
                          modality_name(m));
      continue;
    }
    twin.encoders[static_cast<std::size_t>(m)] =
        *donor->encoders[static_cast<std::size_t>(m)];
  }
  validate_twin(twin);
  twin.provenance = first.provenance;
  twin.provenance.push_back("transform:" + op_name(op) + ";mode=" +
                            train_mode_name(cfg.mode));

  Vec lr_scale(twin_param_count(twin), 1.0);
  const double enc_scale = cfg.fine_tune_encoders ? cfg.encoder_lr_scale : 0.0;
  for (const auto& [off, len] : encoder_param_ranges(twin))
    for (std::size_t j = off; j < off + len; ++j) lr_scale[j] = enc_scale;

  TrainSpec spec;
  spec.mode = cfg.mode;
  spec.op = op;

  const std::uint64_t train_seed = RngStream(cfg.seed).fork(1).seed();
  TwinMappingResult mapped = run_mapping(cfg.fed, data, twin, spec, train_seed,
                                         cfg.threads, &lr_scale);

  TransformResult result;
  result.twin = std::move(mapped.twin);
  result.history = std::move(mapped.history);
  result.ledger = std::move(mapped.ledger);

  const std::vector<Example>& eval_batch =
      data.probe.empty() ? data.train.front() : data.probe;
  RngStream loss_rng = RngStream(cfg.seed).fork(2);
  result.final_loss = op_loss(result.twin, eval_batch, data.st, spec,
                              &loss_rng);
  return result;
}

OpEvaluation evaluate_op(const TwinModel& twin,
                         const std::vector<Example>& eval_windows,
                         const TwinOp& op, const Standardizer& st) {
  if (eval_windows.size() < 2)
    throw DataError("evaluate_op: needs at least 2 windows");

  OpEvaluation out;
  std::array<std::vector<Vec>, kModalityCount> preds, truths;
  std::vector<Vec> pooled_pred, pooled_truth;
  pooled_pred.reserve(eval_windows.size());
  pooled_truth.reserve(eval_windows.size());

  for (const Example& ex : eval_windows) {
    const ReconResult rec = reconstruct(twin, ex, op, st);
    Vec cat_pred, cat_truth;
    for (Modality m : op.targets) {
      const auto mi = static_cast<std::size_t>(m);
      const Vec raw_pred = st.invert(m, *rec.outputs[mi]);
      preds[mi].push_back(raw_pred);
      truths[mi].push_back(ex.window[mi]);
      cat_pred.insert(cat_pred.end(), raw_pred.begin(), raw_pred.end());
      cat_truth.insert(cat_truth.end(), ex.window[mi].begin(),
                       ex.window[mi].end());
    }
    pooled_pred.push_back(std::move(cat_pred));
    pooled_truth.push_back(std::move(cat_truth));
  }

  for (Modality m : op.targets) {
    const auto mi = static_cast<std::size_t>(m);
    NmseResult r = nmse(preds[mi], truths[mi]);
    r.label = modality_name(m);
    out.per_target[mi] = r;
  }
  out.pooled = nmse(pooled_pred, pooled_truth);
  out.pooled.label = "all";
  return out;
}

}  // namespace twinkit
