#include "twinkit/twin.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace twinkit {

std::string op_kind_name(TwinOpKind k) {
  switch (k) {
    case TwinOpKind::kTransfer: return "transfer";
    case TwinOpKind::kMerge: return "merge";
    case TwinOpKind::kSplit: return "split";
  }
  return "transfer";
}

namespace {

void sort_mods(std::vector<Modality>& mods) {
  std::sort(mods.begin(), mods.end(), [](Modality a, Modality b) {
    return static_cast<int>(a) < static_cast<int>(b);
  });
}

bool has_duplicates(const std::vector<Modality>& mods) {
  for (std::size_t i = 0; i + 1 < mods.size(); ++i)
    if (mods[i] == mods[i + 1]) return true;
  return false;
}

}  // namespace

TwinOp make_transfer(Modality source, Modality target) {
  TwinOp op{TwinOpKind::kTransfer, {source}, {target}};
  validate(op);
  return op;
}

TwinOp make_merge(std::vector<Modality> sources, Modality target) {
  sort_mods(sources);
  TwinOp op{TwinOpKind::kMerge, std::move(sources), {target}};
  validate(op);
  return op;
}

TwinOp make_split(Modality source, std::vector<Modality> targets) {
  sort_mods(targets);
  TwinOp op{TwinOpKind::kSplit, {source}, std::move(targets)};
  validate(op);
  return op;
}

void validate(const TwinOp& op) {
  if (op.sources.empty() || op.targets.empty())
    throw ConfigError("twin op: sources and targets must be non-empty");
  std::vector<Modality> s = op.sources;
  std::vector<Modality> t = op.targets;
  sort_mods(s);
  sort_mods(t);
  if (has_duplicates(s) || has_duplicates(t))
    throw ConfigError("twin op: duplicate modalities");
  switch (op.kind) {
    case TwinOpKind::kTransfer:
      if (op.sources.size() != 1 || op.targets.size() != 1)
        throw ConfigError("transfer: exactly one source and one target");
      if (op.sources[0] == op.targets[0])
        throw ConfigError("transfer: source must differ from target");
      break;
    case TwinOpKind::kMerge:
      if (op.sources.size() < 2)
        throw ConfigError("merge: needs at least two sources");
      if (op.targets.size() != 1)
        throw ConfigError("merge: exactly one target");
      for (Modality m : op.sources)
        if (m == op.targets[0])
          throw ConfigError("merge: target must not be a source");
      break;
    case TwinOpKind::kSplit:
      // A single target equal to the source is the degenerate autoencoding
      // split; normal splits carry two or more targets.
      if (op.sources.size() != 1)
        throw ConfigError("split: exactly one source");
      if (op.targets.size() < 2 &&
          !(op.targets.size() == 1 && op.targets[0] == op.sources[0]))
        throw ConfigError("split: needs at least two targets");
      break;
  }
}

std::string op_name(const TwinOp& op) {
  std::string out;
  for (std::size_t i = 0; i < op.sources.size(); ++i) {
    if (i) out += '+';
    out += modality_name(op.sources[i]);
  }
  out += "->";
  for (std::size_t i = 0; i < op.targets.size(); ++i) {
    if (i) out += ',';
    out += modality_name(op.targets[i]);
  }
  return out;
}

TwinOp op_from_name(const std::string& text) {
  const auto arrow = text.find("->");
  if (arrow == std::string::npos)
    throw ParseError("twin op '" + text + "': missing '->'");
  const std::string lhs = text.substr(0, arrow);
  const std::string rhs = text.substr(arrow + 2);

  auto parse_list = [&](const std::string& part, char sep) {
    std::vector<Modality> mods;
    std::string cur;
    for (char ch : part + sep) {
      if (ch == sep) {
        if (cur.empty())
          throw ParseError("twin op '" + text + "': empty modality");
        mods.push_back(modality_from_name(cur));
        cur.clear();
      } else if (ch != ' ') {
        cur.push_back(ch);
      }
    }
    return mods;
  };

  const std::vector<Modality> sources = parse_list(lhs, '+');
  const std::vector<Modality> targets = parse_list(rhs, ',');

  TwinOp op;
  op.sources = sources;
  op.targets = targets;
  if (sources.size() > 1) {
    op.kind = TwinOpKind::kMerge;
    if (targets.size() != 1)
      throw ParseError("twin op '" + text + "': merge takes one target");
  } else if (targets.size() > 1) {
    op.kind = TwinOpKind::kSplit;
  } else {
    op.kind = sources[0] == targets[0] ? TwinOpKind::kSplit
                                       : TwinOpKind::kTransfer;
  }
  sort_mods(op.sources);
  sort_mods(op.targets);
  validate(op);
  return op;
}

LayerConfig default_layer_config() { return LayerConfig{}; }

std::vector<Modality> TwinModel::encoder_modalities() const {
  std::vector<Modality> out;
  for (Modality m : kAllModalities)
    if (encoders[static_cast<std::size_t>(m)]) out.push_back(m);
  return out;
}

std::vector<Modality> TwinModel::decoder_modalities() const {
  std::vector<Modality> out;
  for (Modality m : kAllModalities)
    if (decoders[static_cast<std::size_t>(m)]) out.push_back(m);
  return out;
}

bool TwinModel::has_encoder(Modality m) const {
  return encoders[static_cast<std::size_t>(m)].has_value();
}

bool TwinModel::has_decoder(Modality m) const {
  return decoders[static_cast<std::size_t>(m)].has_value();
}

std::size_t TwinModel::encoder_slot(Modality m) const {
  std::size_t slot = 0;
  for (Modality e : kAllModalities) {
    if (e == m) {
      if (!has_encoder(m))
        throw ConfigError("twin has no encoder for " + modality_name(m));
      return slot;
    }
    if (has_encoder(e)) ++slot;
  }
  throw ConfigError("twin has no encoder for " + modality_name(m));
}

void validate_twin(const TwinModel& twin) {
  if (twin.latent_dim < 1) throw ConfigError("twin: latent_dim must be >= 1");
  if (twin.window < 1) throw ConfigError("twin: window must be >= 1");
  const auto enc_mods = twin.encoder_modalities();
  const auto dec_mods = twin.decoder_modalities();
  if (enc_mods.empty()) throw ConfigError("twin: no encoders");
  if (dec_mods.empty()) throw ConfigError("twin: no decoders");

  for (Modality m : enc_mods) {
    const Network& e = *twin.encoders[static_cast<std::size_t>(m)];
    if (e.input_dim != modality_dim(m) * twin.window)
      throw ShapeError("twin: encoder " + modality_name(m) +
                       " input dim does not match window");
    if (e.output_dim != twin.latent_dim)
      throw ShapeError("twin: encoder " + modality_name(m) +
                       " output dim " + std::to_string(e.output_dim) +
                       " != latent dim " + std::to_string(twin.latent_dim));
  }
  for (Modality m : dec_mods) {
    const Network& d = *twin.decoders[static_cast<std::size_t>(m)];
    if (d.input_dim != twin.latent_dim)
      throw ShapeError("twin: decoder " + modality_name(m) +
                       " input dim != latent dim");
    const std::size_t want = twin.loss_space == LossSpace::kRaw
                                 ? modality_dim(m) * twin.window
                                 : twin.latent_dim;
    if (d.output_dim != want)
      throw ShapeError("twin: decoder " + modality_name(m) +
                       " output dim != reconstruction dim");
  }

  if (twin.fusor == FusorKind::kConcatenation) {
    if (!twin.projection)
      throw ConfigError("twin: concatenation fusor requires a projection");
    if (twin.projection->input_dim != enc_mods.size() * twin.latent_dim ||
        twin.projection->output_dim != twin.latent_dim)
      throw ShapeError("twin: projection dims must be |encoders|*d -> d");
  } else if (twin.projection) {
    throw ConfigError("twin: projection only valid for concatenation");
  }

  if (twin.fusor == FusorKind::kGating) {
    if (twin.fusor_params.gate_weights.size() != enc_mods.size())
      throw ConfigError("twin: gating weights must match encoder count");
    for (const Matrix& w : twin.fusor_params.gate_weights)
      if (w.rows != twin.latent_dim || w.cols != twin.latent_dim)
        throw ShapeError("twin: gating weight must be d x d");
  } else if (twin.fusor == FusorKind::kAttention) {
    if (twin.fusor_params.attn_scorers.size() != enc_mods.size())
      throw ConfigError("twin: attention scorers must match encoder count");
    for (const Vec& s : twin.fusor_params.attn_scorers)
      if (s.size() != twin.latent_dim)
        throw ShapeError("twin: attention scorer must have length d");
  } else if (!twin.fusor_params.gate_weights.empty() ||
             !twin.fusor_params.attn_scorers.empty()) {
    throw ConfigError("twin: fusor params present for a parameter-free fusor");
  }
}

namespace {

Network build_encoder(Modality m, std::size_t window, std::size_t d,
                      const LayerConfig& cfg) {
  std::vector<Layer> layers;
  std::size_t channels = modality_dim(m);
  std::size_t length = window;
  for (const auto& spec : cfg.conv) {
    layers.push_back(make_conv1d(channels, length, spec.channels, spec.kernel,
                                 spec.stride, cfg.hidden_activation));
    const auto& conv = std::get<Conv1dLayer>(layers.back());
    channels = conv.out_channels();
    length = conv.out_length();
  }
  std::size_t width = channels * length;
  for (std::size_t h : cfg.hidden) {
    layers.push_back(make_dense(width, h, cfg.hidden_activation));
    width = h;
  }
  layers.push_back(make_dense(width, d, Activation::kIdentity));
  return make_network(std::move(layers));
}

Network build_decoder(Modality m, std::size_t window, std::size_t d,
                      LossSpace loss_space, const LayerConfig& cfg) {
  const std::size_t out_dim =
      loss_space == LossSpace::kRaw ? modality_dim(m) * window : d;
  std::vector<Layer> layers;
  std::size_t width = d;
  for (std::size_t h : cfg.hidden) {
    layers.push_back(make_dense(width, h, cfg.hidden_activation));
    width = h;
  }
  layers.push_back(make_dense(width, out_dim, Activation::kIdentity));
  return make_network(std::move(layers));
}

}  // namespace

TwinModel build_twin(const std::vector<Modality>& encoder_mods,
                     const std::vector<Modality>& decoder_mods,
                     std::size_t window, std::size_t latent_dim,
                     FusorKind fusor, const LayerConfig& layers,
                     LossSpace loss_space, RngStream& rng) {
  if (encoder_mods.empty() || decoder_mods.empty())
    throw ConfigError("build_twin: modality sets must be non-empty");
  if (latent_dim < 1) throw ConfigError("build_twin: latent_dim must be >= 1");

  TwinModel twin;
  twin.latent_dim = latent_dim;
  twin.window = window;
  twin.fusor = fusor;
  twin.loss_space = loss_space;
  twin.layers = layers;

  // Initialization order is fixed (encoders, fusor, projection, decoders in
  // modality order) so one seed always yields one parameter vector.
  std::vector<Modality> enc = encoder_mods;
  std::vector<Modality> dec = decoder_mods;
  sort_mods(enc);
  sort_mods(dec);
  if (has_duplicates(enc) || has_duplicates(dec))
    throw ConfigError("build_twin: duplicate modalities");

  for (Modality m : enc) {
    Network net = build_encoder(m, window, latent_dim, layers);
    init_params(net, rng);
    twin.encoders[static_cast<std::size_t>(m)] = std::move(net);
  }
  twin.fusor_params = init_fusor_params(fusor, enc.size(), latent_dim, rng);
  if (fusor == FusorKind::kConcatenation) {
    Network proj = make_network(
        {make_dense(enc.size() * latent_dim, latent_dim,
                    Activation::kIdentity)});
    init_params(proj, rng);
    twin.projection = std::move(proj);
  }
  for (Modality m : dec) {
    Network net = build_decoder(m, window, latent_dim, loss_space, layers);
    init_params(net, rng);
    twin.decoders[static_cast<std::size_t>(m)] = std::move(net);
  }

  std::string prov = "built:enc=";
  for (Modality m : enc) prov += modality_name(m);
  prov += ";dec=";
  for (Modality m : dec) prov += modality_name(m);
  prov += ";fusor=" + fusor_name(fusor);
  twin.provenance.push_back(prov);

  validate_twin(twin);
  return twin;
}

TwinModel build_twin(const std::vector<Modality>& modalities,
                     std::size_t window, std::size_t latent_dim,
                     FusorKind fusor, const LayerConfig& layers,
                     LossSpace loss_space, RngStream& rng) {
  return build_twin(modalities, modalities, window, latent_dim, fusor, layers,
                    loss_space, rng);
}

namespace {

struct TwinLayout {
  std::array<std::size_t, kModalityCount> encoder_off{}, encoder_len{};
  std::array<std::size_t, kModalityCount> fusor_off{}, fusor_len{};
  std::size_t projection_off = 0, projection_len = 0;
  std::array<std::size_t, kModalityCount> decoder_off{}, decoder_len{};
  std::size_t total = 0;
};

TwinLayout twin_layout(const TwinModel& twin) {
  TwinLayout lay;
  std::size_t off = 0;
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (twin.encoders[i]) {
      lay.encoder_off[i] = off;
      lay.encoder_len[i] = param_count(*twin.encoders[i]);
      off += lay.encoder_len[i];
    }
  }
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (!twin.encoders[i]) continue;
    const std::size_t slot = twin.encoder_slot(m);
    std::size_t len = 0;
    if (twin.fusor == FusorKind::kGating)
      len = twin.fusor_params.gate_weights[slot].size();
    else if (twin.fusor == FusorKind::kAttention)
      len = twin.fusor_params.attn_scorers[slot].size();
    lay.fusor_off[i] = off;
    lay.fusor_len[i] = len;
    off += len;
  }
  if (twin.projection) {
    lay.projection_off = off;
    lay.projection_len = param_count(*twin.projection);
    off += lay.projection_len;
  }
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (twin.decoders[i]) {
      lay.decoder_off[i] = off;
      lay.decoder_len[i] = param_count(*twin.decoders[i]);
      off += lay.decoder_len[i];
    }
  }
  lay.total = off;
  return lay;
}

}  // namespace

std::size_t twin_param_count(const TwinModel& twin) {
  return twin_layout(twin).total;
}

Vec flatten_twin(const TwinModel& twin) {
  Vec out;
  out.reserve(twin_param_count(twin));
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (twin.encoders[i]) {
      const Vec p = flatten(*twin.encoders[i]);
      out.insert(out.end(), p.begin(), p.end());
    }
  }
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (!twin.encoders[i]) continue;
    const std::size_t slot = twin.encoder_slot(m);
    if (twin.fusor == FusorKind::kGating) {
      const auto& w = twin.fusor_params.gate_weights[slot];
      out.insert(out.end(), w.data.begin(), w.data.end());
    } else if (twin.fusor == FusorKind::kAttention) {
      const auto& s = twin.fusor_params.attn_scorers[slot];
      out.insert(out.end(), s.begin(), s.end());
    }
  }
  if (twin.projection) {
    const Vec p = flatten(*twin.projection);
    out.insert(out.end(), p.begin(), p.end());
  }
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (twin.decoders[i]) {
      const Vec p = flatten(*twin.decoders[i]);
      out.insert(out.end(), p.begin(), p.end());
    }
  }
  return out;
}

TwinModel unflatten_twin(const TwinModel& twin_template, const Vec& params) {
  const TwinLayout lay = twin_layout(twin_template);
  if (params.size() != lay.total)
    throw ShapeError("unflatten_twin: expected " + std::to_string(lay.total) +
                     " parameters, got " + std::to_string(params.size()));
  TwinModel twin = twin_template;
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (twin.encoders[i]) {
      const Vec sub(params.begin() + lay.encoder_off[i],
                    params.begin() + lay.encoder_off[i] + lay.encoder_len[i]);
      twin.encoders[i] = unflatten(*twin.encoders[i], sub);
    }
  }
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (!twin.encoders[i] || lay.fusor_len[i] == 0) continue;
    const std::size_t slot = twin.encoder_slot(m);
    auto first = params.begin() + lay.fusor_off[i];
    if (twin.fusor == FusorKind::kGating) {
      std::copy(first, first + lay.fusor_len[i],
                twin.fusor_params.gate_weights[slot].data.begin());
    } else {
      std::copy(first, first + lay.fusor_len[i],
                twin.fusor_params.attn_scorers[slot].begin());
    }
  }
  if (twin.projection) {
    const Vec sub(params.begin() + lay.projection_off,
                  params.begin() + lay.projection_off + lay.projection_len);
    twin.projection = unflatten(*twin.projection, sub);
  }
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (twin.decoders[i]) {
      const Vec sub(params.begin() + lay.decoder_off[i],
                    params.begin() + lay.decoder_off[i] + lay.decoder_len[i]);
      twin.decoders[i] = unflatten(*twin.decoders[i], sub);
    }
  }
  return twin;
}

std::vector<std::pair<std::size_t, std::size_t>> encoder_param_ranges(
    const TwinModel& twin) {
  const TwinLayout lay = twin_layout(twin);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (twin.encoders[i])
      out.emplace_back(lay.encoder_off[i], lay.encoder_len[i]);
  }
  return out;
}

namespace {

// Shared forward state for one example and one source/target view.
struct TwinPass {
  std::vector<Modality> sources;
  std::vector<Vec> features;
  std::vector<Tape> encoder_tapes;
  Vec fused;      // decoder input
  Vec padded;     // concatenation only: slotted |encoders|*d vector
  Tape projection_tape;
};

void check_view(const TwinModel& twin, const Example& example,
                const std::vector<Modality>& sources,
                const std::vector<Modality>& targets) {
  for (Modality m : sources) {
    if (!twin.has_encoder(m))
      throw ConfigError("twin has no encoder for source " + modality_name(m));
    const Vec& w = example.window[static_cast<std::size_t>(m)];
    if (w.size() != modality_dim(m) * twin.window)
      throw DataError("example window for " + modality_name(m) +
                      " has wrong length");
  }
  for (Modality m : targets) {
    if (!twin.has_decoder(m))
      throw ConfigError("twin has no decoder for target " + modality_name(m));
    const Vec& w = example.window[static_cast<std::size_t>(m)];
    if (w.size() != modality_dim(m) * twin.window)
      throw DataError("example window for target " + modality_name(m) +
                      " has wrong length");
    if (twin.loss_space == LossSpace::kFeature && !twin.has_encoder(m))
      throw ConfigError("feature-space loss needs an encoder for target " +
                        modality_name(m));
  }
}

// Fusor parameter view for the given source subset.
FusorParams params_view(const TwinModel& twin,
                        const std::vector<Modality>& sources) {
  FusorParams view;
  if (twin.fusor == FusorKind::kGating) {
    for (Modality m : sources)
      view.gate_weights.push_back(
          twin.fusor_params.gate_weights[twin.encoder_slot(m)]);
  } else if (twin.fusor == FusorKind::kAttention) {
    for (Modality m : sources)
      view.attn_scorers.push_back(
          twin.fusor_params.attn_scorers[twin.encoder_slot(m)]);
  }
  return view;
}

TwinPass twin_forward(const TwinModel& twin, const Example& example,
                      const std::vector<Modality>& sources,
                      const Standardizer& st, bool with_tapes) {
  TwinPass pass;
  pass.sources = sources;
  for (Modality m : sources) {
    const Vec x = st.apply(m, example.window[static_cast<std::size_t>(m)]);
    Tape tape;
    pass.features.push_back(
        forward(*twin.encoders[static_cast<std::size_t>(m)], x,
                with_tapes ? &tape : nullptr));
    pass.encoder_tapes.push_back(std::move(tape));
  }
  if (twin.fusor == FusorKind::kConcatenation) {
    const std::size_t slots = twin.encoder_modalities().size();
    pass.padded.assign(slots * twin.latent_dim, 0.0);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const std::size_t slot = twin.encoder_slot(sources[i]);
      std::copy(pass.features[i].begin(), pass.features[i].end(),
                pass.padded.begin() + slot * twin.latent_dim);
    }
    pass.fused = forward(*twin.projection, pass.padded,
                         with_tapes ? &pass.projection_tape : nullptr);
  } else {
    const FusorParams view = params_view(twin, sources);
    pass.fused = fuse(twin.fusor, pass.features,
                      fusor_needs_params(twin.fusor) ? &view : nullptr);
  }
  return pass;
}

// Backpropagates d(loss)/d(code) through the shared fuse/encode path,
// accumulating parameter gradients (twin flatten layout) into grad.
void shared_backward(const TwinModel& twin, const TwinPass& pass,
                     const Vec& d_code, Vec& grad) {
  const TwinLayout lay = twin_layout(twin);
  std::vector<Vec> d_features(pass.sources.size());

  if (twin.fusor == FusorKind::kConcatenation) {
    const BackwardResult proj_bw =
        backward(*twin.projection, pass.projection_tape, d_code);
    for (std::size_t j = 0; j < proj_bw.param_grads.size(); ++j)
      grad[lay.projection_off + j] += proj_bw.param_grads[j];
    for (std::size_t i = 0; i < pass.sources.size(); ++i) {
      const std::size_t slot = twin.encoder_slot(pass.sources[i]);
      d_features[i].assign(
          proj_bw.dx.begin() + slot * twin.latent_dim,
          proj_bw.dx.begin() + (slot + 1) * twin.latent_dim);
    }
  } else {
    const FusorParams view = params_view(twin, pass.sources);
    const FuseBackwardResult fbw =
        fuse_backward(twin.fusor, pass.features,
                      fusor_needs_params(twin.fusor) ? &view : nullptr, d_code);
    d_features = fbw.d_features;
    for (std::size_t i = 0; i < pass.sources.size(); ++i) {
      const auto mi = static_cast<std::size_t>(pass.sources[i]);
      if (twin.fusor == FusorKind::kGating) {
        const auto& dw = fbw.d_params.gate_weights[i].data;
        for (std::size_t j = 0; j < dw.size(); ++j)
          grad[lay.fusor_off[mi] + j] += dw[j];
      } else if (twin.fusor == FusorKind::kAttention) {
        const auto& dsv = fbw.d_params.attn_scorers[i];
        for (std::size_t j = 0; j < dsv.size(); ++j)
          grad[lay.fusor_off[mi] + j] += dsv[j];
      }
    }
  }

  for (std::size_t i = 0; i < pass.sources.size(); ++i) {
    const auto mi = static_cast<std::size_t>(pass.sources[i]);
    const BackwardResult enc_bw =
        backward(*twin.encoders[mi], pass.encoder_tapes[i], d_features[i]);
    for (std::size_t j = 0; j < enc_bw.param_grads.size(); ++j)
      grad[lay.encoder_off[mi] + j] += enc_bw.param_grads[j];
  }
}

Vec target_values(const TwinModel& twin, const Example& example, Modality m,
                  const Standardizer& st) {
  const Vec z = st.apply(m, example.window[static_cast<std::size_t>(m)]);
  if (twin.loss_space == LossSpace::kRaw) return z;
  // feature space: the target's own encoding, treated as a constant
  return forward(*twin.encoders[static_cast<std::size_t>(m)], z);
}

}  // namespace

ReconResult reconstruct(const TwinModel& twin, const Example& example,
                        const TwinOp& op, const Standardizer& st) {
  validate(op);
  check_view(twin, example, op.sources, op.targets);
  TwinPass pass = twin_forward(twin, example, op.sources, st, false);
  ReconResult res;
  res.encoder_passes = op.sources.size();
  for (Modality m : op.targets) {
    const auto mi = static_cast<std::size_t>(m);
    res.outputs[mi] = forward(*twin.decoders[mi], pass.fused);
    ++res.decoder_passes;
  }
  return res;
}

double twin_term(const TwinModel& twin, const Example& example,
                 const std::vector<Modality>& sources,
                 const std::vector<Modality>& targets, const Standardizer& st,
                 std::array<double, kModalityCount>* per_modality_loss,
                 Vec* grad_total, std::vector<Vec>* grad_per_target) {
  check_view(twin, example, sources, targets);
  const bool want_grads = grad_total != nullptr || grad_per_target != nullptr;
  const TwinLayout lay = twin_layout(twin);
  if (grad_total && grad_total->size() != lay.total)
    throw ShapeError("twin_term: grad_total has wrong length");
  if (grad_per_target && grad_per_target->size() != targets.size())
    throw ShapeError("twin_term: grad_per_target has wrong slot count");

  TwinPass pass = twin_forward(twin, example, sources, st, want_grads);

  double loss_sum = 0.0;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    const Modality m = targets[ti];
    const auto mi = static_cast<std::size_t>(m);
    Tape dec_tape;
    const Vec out = forward(*twin.decoders[mi], pass.fused,
                            want_grads ? &dec_tape : nullptr);
    const Vec want = target_values(twin, example, m, st);
    const double term = mse(out, want);
    loss_sum += term;
    if (per_modality_loss) (*per_modality_loss)[mi] += term;

    if (want_grads) {
      Vec dy(out.size());
      const double scale = 2.0 / static_cast<double>(out.size());
      for (std::size_t j = 0; j < out.size(); ++j)
        dy[j] = scale * (out[j] - want[j]);

      // Per-target gradient = decoder term plus its share of the shared path.
      Vec term_grad(lay.total, 0.0);
      const BackwardResult dec_bw = backward(*twin.decoders[mi], dec_tape, dy);
      for (std::size_t j = 0; j < dec_bw.param_grads.size(); ++j)
        term_grad[lay.decoder_off[mi] + j] += dec_bw.param_grads[j];
      shared_backward(twin, pass, dec_bw.dx, term_grad);

      if (grad_total)
        for (std::size_t j = 0; j < lay.total; ++j)
          (*grad_total)[j] += term_grad[j];
      if (grad_per_target) {
        Vec& slot = (*grad_per_target)[ti];
        if (slot.size() != lay.total)
          throw ShapeError("twin_term: per-target gradient has wrong length");
        for (std::size_t j = 0; j < lay.total; ++j) slot[j] += term_grad[j];
      }
    }
  }
  return loss_sum;
}

std::array<TwinOp, 3> sample_unified_ops(const TwinModel& twin,
                                         RngStream& rng) {
  const auto mods = twin.encoder_modalities();
  if (mods.size() < 3)
    throw ConfigError("unified training needs at least 3 modalities");
  for (Modality m : mods)
    if (!twin.has_decoder(m))
      throw ConfigError("unified training needs matching decoders");

  const std::size_t n = mods.size();
  const std::size_t src = rng.next_u64() % n;
  std::size_t tgt = rng.next_u64() % (n - 1);
  if (tgt >= src) ++tgt;
  const TwinOp transfer = make_transfer(mods[src], mods[tgt]);

  const std::size_t merge_tgt = rng.next_u64() % n;
  std::vector<Modality> merge_sources;
  for (std::size_t i = 0; i < n; ++i)
    if (i != merge_tgt) merge_sources.push_back(mods[i]);
  const TwinOp merge = make_merge(merge_sources, mods[merge_tgt]);

  const std::size_t split_src = rng.next_u64() % n;
  const TwinOp split = make_split(mods[split_src], mods);

  return {transfer, merge, split};
}

LossReport op_loss(const TwinModel& twin, const std::vector<Example>& batch,
                   const Standardizer& st, const TrainSpec& spec,
                   RngStream* rng) {
  if (batch.empty()) throw DataError("op_loss: empty batch");
  LossReport report;

  auto accumulate = [&](const TwinOp& op, double& slot) {
    for (const Example& ex : batch)
      slot += twin_term(twin, ex, op.sources, op.targets, st,
                        &report.per_modality, nullptr, nullptr);
  };

  switch (spec.mode) {
    case TrainMode::kSpecific: {
      if (!spec.op) throw ConfigError("op_loss: specific mode needs an op");
      double acc = 0.0;
      accumulate(*spec.op, acc);
      switch (spec.op->kind) {
        case TwinOpKind::kTransfer: report.transfer_loss = acc; break;
        case TwinOpKind::kMerge: report.merge_loss = acc; break;
        case TwinOpKind::kSplit: report.split_loss = acc; break;
      }
      break;
    }
    case TrainMode::kUnified: {
      if (!rng) throw ConfigError("op_loss: unified mode needs an rng");
      const auto ops = sample_unified_ops(twin, *rng);
      accumulate(ops[0], report.transfer_loss);
      accumulate(ops[1], report.merge_loss);
      accumulate(ops[2], report.split_loss);
      break;
    }
    case TrainMode::kMapping: {
      const auto sources = twin.encoder_modalities();
      const auto targets = twin.decoder_modalities();
      for (const Example& ex : batch)
        report.mapping_loss += twin_term(twin, ex, sources, targets, st,
                                         &report.per_modality, nullptr,
                                         nullptr);
      break;
    }
  }
  report.total = report.transfer_loss + report.merge_loss +
                 report.split_loss + report.mapping_loss;
  return report;
}

std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kSpecific: return "specific";
    case TrainMode::kUnified: return "unified";
    case TrainMode::kMapping: return "mapping";
  }
  return "mapping";
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "specific") return TrainMode::kSpecific;
  if (name == "unified") return TrainMode::kUnified;
  if (name == "mapping") return TrainMode::kMapping;
  throw ConfigError("unknown train mode: " + name);
}

namespace {

nlohmann::json net_json(const Network& net) {
  return nlohmann::json::parse(network_to_json(net));
}

}  // namespace

std::string twin_to_json(const TwinModel& twin, const Standardizer& st) {
  nlohmann::json j;
  j["format"] = "twinkit-twin-v1";
  j["latent_dim"] = twin.latent_dim;
  j["window"] = twin.window;
  j["fusor"] = fusor_name(twin.fusor);
  j["loss_space"] = twin.loss_space == LossSpace::kRaw ? "raw" : "feature";
  nlohmann::json layers;
  layers["conv"] = nlohmann::json::array();
  for (const auto& c : twin.layers.conv)
    layers["conv"].push_back({{"channels", c.channels},
                              {"kernel", c.kernel},
                              {"stride", c.stride}});
  layers["hidden"] = twin.layers.hidden;
  layers["activation"] = activation_name(twin.layers.hidden_activation);
  j["layers"] = layers;

  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    if (twin.encoders[i]) j["encoders"][modality_name(m)] = net_json(*twin.encoders[i]);
    if (twin.decoders[i]) j["decoders"][modality_name(m)] = net_json(*twin.decoders[i]);
  }
  if (twin.fusor == FusorKind::kGating) {
    auto arr = nlohmann::json::array();
    for (const Matrix& w : twin.fusor_params.gate_weights) arr.push_back(w.data);
    j["fusor_params"]["gate_weights"] = arr;
  } else if (twin.fusor == FusorKind::kAttention) {
    auto arr = nlohmann::json::array();
    for (const Vec& s : twin.fusor_params.attn_scorers) arr.push_back(s);
    j["fusor_params"]["attn_scorers"] = arr;
  } else {
    j["fusor_params"] = nlohmann::json::object();
  }
  j["projection"] = twin.projection ? net_json(*twin.projection)
                                    : nlohmann::json(nullptr);
  j["provenance"] = twin.provenance;

  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    j["standardizer"]["mean"][modality_name(m)] = st.mean[i];
    j["standardizer"]["stddev"][modality_name(m)] = st.stddev[i];
  }
  return j.dump();
}

void save_twin(const TwinModel& twin, const Standardizer& st,
               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << twin_to_json(twin, st);
  if (!out) throw IoError("write failed: " + path);
}

std::pair<TwinModel, Standardizer> load_twin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("twin checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "twinkit-twin-v1")
    throw ParseError("twin checkpoint: unknown format");

  TwinModel twin;
  twin.latent_dim = j.at("latent_dim").get<std::size_t>();
  twin.window = j.at("window").get<std::size_t>();
  twin.fusor = fusor_from_name(j.at("fusor").get<std::string>());
  twin.loss_space = j.at("loss_space").get<std::string>() == "raw"
                        ? LossSpace::kRaw
                        : LossSpace::kFeature;
  const auto& lj = j.at("layers");
  twin.layers.conv.clear();
  for (const auto& c : lj.at("conv"))
    twin.layers.conv.push_back({c.at("channels").get<std::size_t>(),
                                c.at("kernel").get<std::size_t>(),
                                c.at("stride").get<std::size_t>()});
  twin.layers.hidden = lj.at("hidden").get<std::vector<std::size_t>>();
  twin.layers.hidden_activation =
      activation_from_name(lj.at("activation").get<std::string>());

  for (Modality m : kAllModalities) {
    const std::string name = modality_name(m);
    const auto i = static_cast<std::size_t>(m);
    if (j.contains("encoders") && j["encoders"].contains(name))
      twin.encoders[i] = network_from_json(j["encoders"][name].dump());
    if (j.contains("decoders") && j["decoders"].contains(name))
      twin.decoders[i] = network_from_json(j["decoders"][name].dump());
  }
  const auto& fp = j.at("fusor_params");
  if (fp.contains("gate_weights")) {
    for (const auto& wj : fp["gate_weights"]) {
      Matrix w(twin.latent_dim, twin.latent_dim);
      w.data = wj.get<Vec>();
      if (w.data.size() != twin.latent_dim * twin.latent_dim)
        throw ParseError("twin checkpoint: gate weight size mismatch");
      twin.fusor_params.gate_weights.push_back(std::move(w));
    }
  }
  if (fp.contains("attn_scorers"))
    for (const auto& sj : fp["attn_scorers"])
      twin.fusor_params.attn_scorers.push_back(sj.get<Vec>());
  if (!j.at("projection").is_null())
    twin.projection = network_from_json(j["projection"].dump());
  twin.provenance = j.at("provenance").get<std::vector<std::string>>();

  Standardizer st;
  for (Modality m : kAllModalities) {
    const auto i = static_cast<std::size_t>(m);
    st.mean[i] = j.at("standardizer").at("mean").at(modality_name(m)).get<Vec>();
    st.stddev[i] =
        j.at("standardizer").at("stddev").at(modality_name(m)).get<Vec>();
  }
  validate_twin(twin);
  return {std::move(twin), std::move(st)};
}

}  // namespace twinkit
