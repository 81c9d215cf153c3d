#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "twinkit/transform.hpp"

using namespace twinkit;

namespace {

const std::vector<Modality> kVWS = {Modality::kVisual, Modality::kWireless,
                                    Modality::kSensory};

WorldConfig default_world(std::uint64_t seed) {
  WorldConfig cfg;
  cfg.seed = seed;
  cfg.area_count = 4;
  cfg.steps_per_area = 120;
  cfg.window = 4;
  return cfg;
}

LayerConfig linear_layers() {
  LayerConfig cfg;
  cfg.conv = {};
  cfg.hidden = {};
  cfg.hidden_activation = Activation::kIdentity;
  return cfg;
}

}  // namespace

TEST_CASE("prepare_train_data splits windows and fits the standardizer") {
  const auto ds = generate_world(default_world(1));
  const auto data = prepare_train_data(ds, 4, 0.25);
  CHECK(data.train.size() == 4);
  const std::size_t per_area = 120 - 4 + 1;
  const std::size_t eval_count =
      static_cast<std::size_t>(std::floor(0.25 * per_area));
  CHECK(data.train[0].size() == per_area - eval_count);
  CHECK(data.probe.size() == 4 * eval_count);
  CHECK(data.raw_bytes == 4ull * 120 * 7 * 8);

  const auto none = prepare_train_data(ds, 4, 0.0);
  CHECK(none.probe.empty());
  CHECK(none.train[0].size() == per_area);
}

TEST_CASE("twin objective gradient matches finite differences") {
  const auto ds = generate_world(default_world(2));
  const auto data = prepare_train_data(ds, 4, 0.25);

  RngStream rng(3);
  LayerConfig layers;
  layers.conv = {};
  layers.hidden = {6};
  layers.hidden_activation = Activation::kTanh;
  const TwinModel twin = build_twin(kVWS, 4, 4, FusorKind::kGating, layers,
                                    LossSpace::kRaw, rng);

  TrainSpec spec;
  spec.mode = TrainMode::kMapping;
  std::vector<Example> small(data.train[0].begin(), data.train[0].begin() + 3);
  TwinObjective obj(twin, small, data.st, spec);

  const Vec p0 = flatten_twin(twin);
  Vec grad;
  std::vector<Vec> term_grads;
  const double loss = obj.eval(p0, &grad, &term_grads, nullptr);
  CHECK(loss > 0.0);
  CHECK(term_grads.size() == 3);

  Vec summed(p0.size(), 0.0);
  for (const Vec& tg : term_grads)
    for (std::size_t j = 0; j < p0.size(); ++j) summed[j] += tg[j];
  for (std::size_t j = 0; j < p0.size(); ++j)
    CHECK(summed[j] == doctest::Approx(grad[j]).epsilon(1e-9).scale(1.0));

  auto f = [&](const Vec& p) { return obj.eval(p, nullptr, nullptr, nullptr); };
  const Vec fd = finite_diff_grad(f, p0);
  for (std::size_t j = 0; j < p0.size(); ++j) {
    const double denom = std::max(1.0, std::abs(fd[j]));
    CHECK(std::abs(grad[j] - fd[j]) / denom <= 1e-5);
  }

  // per-sample gradients average to the batch gradient
  const auto sg = obj.sample_grads(p0);
  CHECK(sg.size() == small.size());
  Vec mean(p0.size(), 0.0);
  for (const Vec& g : sg)
    for (std::size_t j = 0; j < p0.size(); ++j) mean[j] += g[j];
  for (std::size_t j = 0; j < p0.size(); ++j)
    CHECK(mean[j] / sg.size() ==
          doctest::Approx(grad[j]).epsilon(1e-9).scale(1.0));
}

TEST_CASE("run_mapping with zero rounds returns the template") {
  const auto ds = generate_world(default_world(4));
  const auto data = prepare_train_data(ds, 4, 0.25);
  RngStream rng(5);
  const TwinModel twin = build_twin(kVWS, 4, 8, FusorKind::kAverage,
                                    linear_layers(), LossSpace::kRaw, rng);
  FedConfig cfg;
  cfg.area_count = 4;
  cfg.rounds = 0;
  TrainSpec spec;
  spec.mode = TrainMode::kMapping;
  const auto res = run_mapping(cfg, data, twin, spec, 9);
  CHECK(flatten_twin(res.twin) == flatten_twin(twin));
  CHECK(res.history.empty());
}

TEST_CASE("federated mapping reduces the probe loss") {
  const auto ds = generate_world(default_world(6));
  const auto data = prepare_train_data(ds, 4, 0.25);
  RngStream rng(7);
  const TwinModel twin = build_twin(kVWS, 4, 8, FusorKind::kAverage,
                                    linear_layers(), LossSpace::kRaw, rng);
  FedConfig cfg;
  cfg.area_count = 4;
  cfg.rounds = 40;
  cfg.local_steps = 5;
  cfg.local_lr = 3e-4;  // full-batch loss is summed over ~85 windows
  TrainSpec spec;
  spec.mode = TrainMode::kMapping;
  const auto res = run_mapping(cfg, data, twin, spec, 11);
  REQUIRE(res.history.size() == 40);
  CHECK(res.history.back().global_loss < 0.7 * res.history.front().global_loss);
  CHECK(res.ledger.upload_bytes ==
        federated_transfer_bytes(40, 4, twin_param_count(twin)) / 2);
}

TEST_CASE("transform reuses donor encoders and freezes them when asked") {
  const auto ds = generate_world(default_world(8));
  const auto data = prepare_train_data(ds, 4, 0.25);
  RngStream rng(9);
  TwinModel donor = build_twin(kVWS, 4, 8, FusorKind::kAverage,
                               linear_layers(), LossSpace::kRaw, rng);

  TransformConfig cfg;
  cfg.fed.area_count = 4;
  cfg.fed.rounds = 5;
  cfg.fed.local_steps = 3;
  cfg.fed.local_lr = 1e-4;
  cfg.mode = TrainMode::kSpecific;
  cfg.fine_tune_encoders = false;
  cfg.seed = 21;

  const TwinOp op = make_transfer(Modality::kVisual, Modality::kWireless);
  const auto res = transform({donor}, op, data, cfg);

  // frozen donor encoder is bit-identical
  CHECK(flatten(*res.twin.encoders[0]) == flatten(*donor.encoders[0]));
  CHECK(res.twin.has_decoder(Modality::kWireless));
  CHECK_FALSE(res.twin.has_decoder(Modality::kVisual));
  CHECK_FALSE(res.twin.has_encoder(Modality::kWireless));
  CHECK(res.final_loss.transfer_loss > 0.0);
  CHECK(res.final_loss.total == res.final_loss.transfer_loss);
  CHECK(res.twin.provenance.back().find("transform:V->W") !=
        std::string::npos);

  // with fine-tuning on, the encoder moves
  cfg.fine_tune_encoders = true;
  const auto tuned = transform({donor}, op, data, cfg);
  CHECK(flatten(*tuned.twin.encoders[0]) != flatten(*donor.encoders[0]));
}

TEST_CASE("transform validates donors") {
  const auto ds = generate_world(default_world(10));
  const auto data = prepare_train_data(ds, 4, 0.25);
  RngStream rng(11);
  TwinModel donor = build_twin({Modality::kVisual}, 4, 8, FusorKind::kAverage,
                               linear_layers(), LossSpace::kRaw, rng);
  TwinModel other = build_twin({Modality::kWireless}, 4, 6, FusorKind::kAverage,
                               linear_layers(), LossSpace::kRaw, rng);
  TransformConfig cfg;
  cfg.fed.area_count = 4;
  cfg.fed.rounds = 1;
  cfg.fed.local_lr = 1e-4;
  CHECK_THROWS_AS(transform({}, make_transfer(Modality::kVisual,
                                              Modality::kWireless),
                            data, cfg),
                  ConfigError);
  // latent dim mismatch between donors
  CHECK_THROWS_AS(transform({donor, other},
                            make_merge({Modality::kVisual, Modality::kWireless},
                                       Modality::kSensory),
                            data, cfg),
                  ConfigError);
  // no donor provides the source encoder
  CHECK_THROWS_AS(transform({donor}, make_transfer(Modality::kSensory,
                                                   Modality::kVisual),
                            data, cfg),
                  ConfigError);
}

TEST_CASE("merge can draw encoders from two donors") {
  const auto ds = generate_world(default_world(12));
  const auto data = prepare_train_data(ds, 4, 0.25);
  RngStream rng(13);
  TwinModel donor_v = build_twin({Modality::kVisual}, 4, 8, FusorKind::kAverage,
                                 linear_layers(), LossSpace::kRaw, rng);
  TwinModel donor_w = build_twin({Modality::kWireless}, 4, 8,
                                 FusorKind::kAverage, linear_layers(),
                                 LossSpace::kRaw, rng);
  TransformConfig cfg;
  cfg.fed.area_count = 4;
  cfg.fed.rounds = 2;
  cfg.fed.local_steps = 2;
  cfg.fed.local_lr = 1e-4;
  cfg.fine_tune_encoders = false;
  const TwinOp op = make_merge({Modality::kVisual, Modality::kWireless},
                               Modality::kSensory);
  const auto res = transform({donor_v, donor_w}, op, data, cfg);
  CHECK(flatten(*res.twin.encoders[0]) == flatten(*donor_v.encoders[0]));
  CHECK(flatten(*res.twin.encoders[1]) == flatten(*donor_w.encoders[1]));
}

TEST_CASE("evaluate_op reports per-target and pooled nmse in raw units") {
  const auto ds = generate_world(default_world(14));
  const auto data = prepare_train_data(ds, 4, 0.25);
  RngStream rng(15);
  const TwinModel twin = build_twin(kVWS, 4, 8, FusorKind::kAverage,
                                    linear_layers(), LossSpace::kRaw, rng);
  const TwinOp op = make_split(Modality::kSensory, kVWS);
  const auto eval = evaluate_op(twin, data.probe, op, data.st);
  for (Modality m : kVWS) {
    const auto& r = eval.per_target[static_cast<std::size_t>(m)];
    REQUIRE(r.has_value());
    CHECK(r->value > 0.0);
    CHECK(r->samples == data.probe.size());
  }
  CHECK(eval.pooled.label == "all");
  CHECK(eval.pooled.value > 0.0);

  CHECK_THROWS_AS(evaluate_op(twin, {}, op, data.st), DataError);
}

TEST_CASE("composability: a transformed twin can donate to the next op") {
  const auto ds = generate_world(default_world(16));
  const auto data = prepare_train_data(ds, 4, 0.25);
  RngStream rng(17);
  TwinModel donor = build_twin(kVWS, 4, 8, FusorKind::kAverage,
                               linear_layers(), LossSpace::kRaw, rng);
  TransformConfig cfg;
  cfg.fed.area_count = 4;
  cfg.fed.rounds = 2;
  cfg.fed.local_steps = 2;
  cfg.fed.local_lr = 1e-4;
  cfg.seed = 31;

  const auto first = transform(
      {donor}, make_merge({Modality::kVisual, Modality::kWireless},
                          Modality::kSensory),
      data, cfg);
  // the merged twin's V encoder can seed a V->W transfer
  const auto second = transform(
      {first.twin}, make_transfer(Modality::kVisual, Modality::kWireless),
      data, cfg);
  CHECK(second.twin.has_encoder(Modality::kVisual));
  CHECK(second.twin.provenance.size() >= 3);
}
