#include "twinkit/fusion.hpp"

#include <cmath>

namespace twinkit {

std::string fusor_name(FusorKind k) {
  switch (k) {
    case FusorKind::kAddition: return "addition";
    case FusorKind::kAverage: return "average";
    case FusorKind::kConcatenation: return "concatenation";
    case FusorKind::kMultiplication: return "multiplication";
    case FusorKind::kMaximum: return "maximum";
    case FusorKind::kMinimum: return "minimum";
    case FusorKind::kGating: return "gating";
    case FusorKind::kAttention: return "attention";
  }
  return "addition";
}

FusorKind fusor_from_name(const std::string& name) {
  for (FusorKind k : kAllFusorKinds)
    if (fusor_name(k) == name) return k;
  throw ConfigError("unknown fusor: " + name);
}

bool fusor_needs_params(FusorKind k) {
  return k == FusorKind::kGating || k == FusorKind::kAttention;
}

FusorParams init_fusor_params(FusorKind k, std::size_t modality_count,
                              std::size_t d, RngStream& rng) {
  FusorParams p;
  if (k == FusorKind::kGating) {
    const double bound = std::sqrt(6.0 / static_cast<double>(2 * d));
    for (std::size_t m = 0; m < modality_count; ++m) {
      Matrix w(d, d);
      for (double& x : w.data) x = rng.uniform(-bound, bound);
      p.gate_weights.push_back(std::move(w));
    }
  } else if (k == FusorKind::kAttention) {
    const double bound = std::sqrt(6.0 / static_cast<double>(d + 1));
    for (std::size_t m = 0; m < modality_count; ++m) {
      Vec s(d);
      for (double& x : s) x = rng.uniform(-bound, bound);
      p.attn_scorers.push_back(std::move(s));
    }
  }
  return p;
}

std::size_t fusor_param_count(FusorKind k, std::size_t modality_count,
                              std::size_t d) {
  if (k == FusorKind::kGating) return modality_count * d * d;
  if (k == FusorKind::kAttention) return modality_count * d;
  return 0;
}

std::size_t fused_dim(FusorKind k, std::size_t m, std::size_t d) {
  if (m < 1 || d < 1) throw ShapeError("fused_dim: m and d must be >= 1");
  return k == FusorKind::kConcatenation ? m * d : d;
}

namespace {

void check_inputs(FusorKind k, const std::vector<Vec>& features,
                  const FusorParams* params) {
  if (features.empty()) throw ShapeError("fuse: no features");
  const std::size_t d = features[0].size();
  if (d == 0) throw ShapeError("fuse: empty feature vector");
  for (const Vec& f : features)
    if (f.size() != d) throw ShapeError("fuse: mixed feature lengths");
  if (fusor_needs_params(k)) {
    if (!params) throw ConfigError("fuse: " + fusor_name(k) +
                                   " requires parameters");
    if (k == FusorKind::kGating) {
      if (params->gate_weights.size() != features.size())
        throw ConfigError("fuse: gating weight count " +
                          std::to_string(params->gate_weights.size()) +
                          " vs feature count " +
                          std::to_string(features.size()));
      for (const Matrix& w : params->gate_weights)
        if (w.rows != d || w.cols != d)
          throw ShapeError("fuse: gating weight must be d x d");
    } else {
      if (params->attn_scorers.size() != features.size())
        throw ConfigError("fuse: attention scorer count " +
                          std::to_string(params->attn_scorers.size()) +
                          " vs feature count " +
                          std::to_string(features.size()));
      for (const Vec& s : params->attn_scorers)
        if (s.size() != d) throw ShapeError("fuse: scorer must have length d");
    }
  }
}

Vec attention_weights(const std::vector<Vec>& features,
                      const FusorParams& params) {
  Vec scores(features.size());
  for (std::size_t m = 0; m < features.size(); ++m)
    scores[m] = dot(params.attn_scorers[m], features[m]);
  return softmax(scores);
}

}  // namespace

Vec fuse(FusorKind k, const std::vector<Vec>& features,
         const FusorParams* params) {
  check_inputs(k, features, params);
  const std::size_t m = features.size();
  const std::size_t d = features[0].size();

  switch (k) {
    case FusorKind::kAddition: {
      Vec out(d, 0.0);
      for (const Vec& f : features)
        for (std::size_t j = 0; j < d; ++j) out[j] += f[j];
      return out;
    }
    case FusorKind::kAverage: {
      Vec out(d, 0.0);
      for (const Vec& f : features)
        for (std::size_t j = 0; j < d; ++j) out[j] += f[j];
      for (double& x : out) x /= static_cast<double>(m);
      return out;
    }
    case FusorKind::kConcatenation: {
      Vec out;
      out.reserve(m * d);
      for (const Vec& f : features) out.insert(out.end(), f.begin(), f.end());
      return out;
    }
    case FusorKind::kMultiplication: {
      Vec out(features[0]);
      for (std::size_t i = 1; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] *= features[i][j];
      return out;
    }
    case FusorKind::kMaximum: {
      Vec out(features[0]);
      for (std::size_t i = 1; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j)
          if (features[i][j] > out[j]) out[j] = features[i][j];
      return out;
    }
    case FusorKind::kMinimum: {
      Vec out(features[0]);
      for (std::size_t i = 1; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j)
          if (features[i][j] < out[j]) out[j] = features[i][j];
      return out;
    }
    case FusorKind::kGating: {
      Vec z(d, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const Vec wi = matvec(params->gate_weights[i], features[i]);
        for (std::size_t j = 0; j < d; ++j) z[j] += wi[j];
      }
      return sigmoid(z);
    }
    case FusorKind::kAttention: {
      const Vec theta = attention_weights(features, *params);
      Vec out(d, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += theta[i] * features[i][j];
      return out;
    }
  }
  throw ConfigError("fuse: unhandled kind");
}

FuseBackwardResult fuse_backward(FusorKind k, const std::vector<Vec>& features,
                                 const FusorParams* params, const Vec& d_out) {
  check_inputs(k, features, params);
  const std::size_t m = features.size();
  const std::size_t d = features[0].size();
  if (d_out.size() != fused_dim(k, m, d))
    throw ShapeError("fuse_backward: d_out length " +
                     std::to_string(d_out.size()) + " vs fused dim " +
                     std::to_string(fused_dim(k, m, d)));

  FuseBackwardResult res;
  res.d_features.assign(m, Vec(d, 0.0));

  switch (k) {
    case FusorKind::kAddition: {
      for (std::size_t i = 0; i < m; ++i) res.d_features[i] = d_out;
      return res;
    }
    case FusorKind::kAverage: {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j)
          res.d_features[i][j] = d_out[j] / static_cast<double>(m);
      return res;
    }
    case FusorKind::kConcatenation: {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j)
          res.d_features[i][j] = d_out[i * d + j];
      return res;
    }
    case FusorKind::kMultiplication: {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          double rest = 1.0;
          for (std::size_t l = 0; l < m; ++l)
            if (l != i) rest *= features[l][j];
          res.d_features[i][j] = d_out[j] * rest;
        }
      }
      return res;
    }
    case FusorKind::kMaximum:
    case FusorKind::kMinimum: {
      for (std::size_t j = 0; j < d; ++j) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < m; ++i) {
          const bool better = k == FusorKind::kMaximum
                                  ? features[i][j] > features[arg][j]
                                  : features[i][j] < features[arg][j];
          if (better) arg = i;
        }
        res.d_features[arg][j] = d_out[j];
      }
      return res;
    }
    case FusorKind::kGating: {
      Vec z(d, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const Vec wi = matvec(params->gate_weights[i], features[i]);
        for (std::size_t j = 0; j < d; ++j) z[j] += wi[j];
      }
      const Vec s = sigmoid(z);
      Vec dz(d);
      for (std::size_t j = 0; j < d; ++j)
        dz[j] = d_out[j] * s[j] * (1.0 - s[j]);
      for (std::size_t i = 0; i < m; ++i) {
        Matrix dw(d, d);
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < d; ++c)
            dw.at(r, c) = dz[r] * features[i][c];
        res.d_params.gate_weights.push_back(std::move(dw));
        res.d_features[i] = matvec_transpose(params->gate_weights[i], dz);
      }
      return res;
    }
    case FusorKind::kAttention: {
      const Vec theta = attention_weights(features, *params);
      // d theta_i = d_out . f_i ; de = softmax backward ; then
      // d f_i = theta_i d_out + de_i scorer_i ; d scorer_i = de_i f_i.
      Vec dtheta(m);
      for (std::size_t i = 0; i < m; ++i) dtheta[i] = dot(d_out, features[i]);
      double inner = 0.0;
      for (std::size_t i = 0; i < m; ++i) inner += theta[i] * dtheta[i];
      Vec de(m);
      for (std::size_t i = 0; i < m; ++i)
        de[i] = theta[i] * (dtheta[i] - inner);
      for (std::size_t i = 0; i < m; ++i) {
        Vec ds(d);
        for (std::size_t j = 0; j < d; ++j) {
          res.d_features[i][j] =
              theta[i] * d_out[j] + de[i] * params->attn_scorers[i][j];
          ds[j] = de[i] * features[i][j];
        }
        res.d_params.attn_scorers.push_back(std::move(ds));
      }
      return res;
    }
  }
  throw ConfigError("fuse_backward: unhandled kind");
}

}  // namespace twinkit
