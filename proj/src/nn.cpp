#include "twinkit/nn.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace twinkit {

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::kIdentity: return z;
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kSigmoid: return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                               : std::exp(z) / (1.0 + std::exp(z));
    case Activation::kTanh: return std::tanh(z);
  }
  return z;
}

// Derivative as a function of the pre-activation z. relu'(0) := 0.
double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kSigmoid: {
      const double s = activate(Activation::kSigmoid, z);
      return s * (1.0 - s);
    }
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

void apply_activation(Activation a, Vec& v) {
  if (a == Activation::kIdentity) return;
  for (double& x : v) x = activate(a, x);
}

}  // namespace

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation: " + name);
}

std::size_t layer_input_dim(const Layer& l) {
  if (const auto* d = std::get_if<DenseLayer>(&l)) return d->weight.cols;
  const auto& c = std::get<Conv1dLayer>(l);
  return c.in_channels * c.in_length;
}

std::size_t layer_output_dim(const Layer& l) {
  if (const auto* d = std::get_if<DenseLayer>(&l)) return d->weight.rows;
  const auto& c = std::get<Conv1dLayer>(l);
  return c.out_channels() * c.out_length();
}

std::size_t layer_param_count(const Layer& l) {
  if (const auto* d = std::get_if<DenseLayer>(&l))
    return d->weight.size() + d->bias.size();
  const auto& c = std::get<Conv1dLayer>(l);
  return c.kernels.size() + c.bias.size();
}

Network make_network(std::vector<Layer> layers) {
  if (layers.empty()) throw ShapeError("make_network: no layers");
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    const std::size_t out = layer_output_dim(layers[i]);
    const std::size_t in = layer_input_dim(layers[i + 1]);
    if (out != in)
      throw ShapeError("make_network: layer " + std::to_string(i) +
                       " output dim " + std::to_string(out) +
                       " does not feed layer " + std::to_string(i + 1) +
                       " input dim " + std::to_string(in));
  }
  Network net;
  net.input_dim = layer_input_dim(layers.front());
  net.output_dim = layer_output_dim(layers.back());
  net.layers = std::move(layers);
  return net;
}

DenseLayer make_dense(std::size_t in, std::size_t out, Activation act) {
  if (in == 0 || out == 0) throw ShapeError("make_dense: zero dimension");
  DenseLayer l;
  l.weight = Matrix(out, in);
  l.bias = Vec(out, 0.0);
  l.activation = act;
  return l;
}

Conv1dLayer make_conv1d(std::size_t in_channels, std::size_t in_length,
                        std::size_t out_channels, std::size_t kernel_width,
                        std::size_t stride, Activation act) {
  if (in_channels == 0 || out_channels == 0)
    throw ShapeError("make_conv1d: zero channel count");
  if (kernel_width < 1 || stride < 1)
    throw ShapeError("make_conv1d: kernel_width and stride must be >= 1");
  if (in_length < kernel_width)
    throw ShapeError("make_conv1d: input length " + std::to_string(in_length) +
                     " shorter than kernel width " +
                     std::to_string(kernel_width));
  Conv1dLayer l;
  l.kernels = Matrix(out_channels, in_channels * kernel_width);
  l.bias = Vec(out_channels, 0.0);
  l.in_channels = in_channels;
  l.in_length = in_length;
  l.kernel_width = kernel_width;
  l.stride = stride;
  l.activation = act;
  return l;
}

void init_params(Network& net, RngStream& rng) {
  for (Layer& layer : net.layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      const double bound =
          std::sqrt(6.0 / static_cast<double>(d->weight.rows + d->weight.cols));
      for (double& w : d->weight.data) w = rng.uniform(-bound, bound);
      for (double& b : d->bias) b = 0.0;
    } else {
      auto& c = std::get<Conv1dLayer>(layer);
      const double fan_in =
          static_cast<double>(c.in_channels * c.kernel_width);
      const double fan_out =
          static_cast<double>(c.out_channels() * c.kernel_width);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& w : c.kernels.data) w = rng.uniform(-bound, bound);
      for (double& b : c.bias) b = 0.0;
    }
  }
}

namespace {

Vec dense_forward(const DenseLayer& l, const Vec& x, Vec* preact) {
  Vec z = matvec(l.weight, x);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += l.bias[i];
  if (preact) *preact = z;
  apply_activation(l.activation, z);
  return z;
}

Vec conv_forward(const Conv1dLayer& l, const Vec& x, Vec* preact) {
  const std::size_t lo = l.out_length();
  const std::size_t oc = l.out_channels();
  Vec z(oc * lo, 0.0);
  for (std::size_t o = 0; o < oc; ++o) {
    for (std::size_t s = 0; s < lo; ++s) {
      double acc = l.bias[o];
      for (std::size_t c = 0; c < l.in_channels; ++c) {
        for (std::size_t k = 0; k < l.kernel_width; ++k) {
          acc += l.kernels.at(o, c * l.kernel_width + k) *
                 x[c * l.in_length + s * l.stride + k];
        }
      }
      z[o * lo + s] = acc;
    }
  }
  if (preact) *preact = z;
  apply_activation(l.activation, z);
  return z;
}

}  // namespace

Vec forward(const Network& net, const Vec& x, Tape* tape) {
  if (x.size() != net.input_dim)
    throw ShapeError("forward: input length " + std::to_string(x.size()) +
                     " vs network input dim " + std::to_string(net.input_dim));
  if (tape) {
    tape->inputs.clear();
    tape->preacts.clear();
    tape->inputs.reserve(net.layers.size());
    tape->preacts.reserve(net.layers.size());
  }
  Vec cur = x;
  for (const Layer& layer : net.layers) {
    if (tape) tape->inputs.push_back(cur);
    Vec preact;
    Vec* pp = tape ? &preact : nullptr;
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      cur = dense_forward(*d, cur, pp);
    } else {
      cur = conv_forward(std::get<Conv1dLayer>(layer), cur, pp);
    }
    if (tape) tape->preacts.push_back(std::move(preact));
  }
  return cur;
}

BackwardResult backward(const Network& net, const Tape& tape, const Vec& dy) {
  if (tape.inputs.size() != net.layers.size() ||
      tape.preacts.size() != net.layers.size())
    throw ShapeError("backward: tape does not match network layer count");
  if (dy.size() != net.output_dim)
    throw ShapeError("backward: dy length " + std::to_string(dy.size()) +
                     " vs network output dim " +
                     std::to_string(net.output_dim));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (tape.inputs[i].size() != layer_input_dim(net.layers[i]) ||
        tape.preacts[i].size() != layer_output_dim(net.layers[i]))
      throw ShapeError("backward: tape shapes stale at layer " +
                       std::to_string(i));
  }

  BackwardResult res;
  res.param_grads.assign(param_count(net), 0.0);

  // Per-layer parameter offsets in flatten() order.
  std::vector<std::size_t> offsets(net.layers.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    offsets[i] = off;
    off += layer_param_count(net.layers[i]);
  }

  Vec grad_out = dy;
  for (std::size_t ii = net.layers.size(); ii-- > 0;) {
    const Layer& layer = net.layers[ii];
    const Vec& x = tape.inputs[ii];
    const Vec& z = tape.preacts[ii];
    double* pg = res.param_grads.data() + offsets[ii];

    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      Vec dz(grad_out.size());
      for (std::size_t i = 0; i < dz.size(); ++i)
        dz[i] = grad_out[i] * activate_grad(d->activation, z[i]);
      // weight grads, row-major, then bias
      for (std::size_t r = 0; r < d->weight.rows; ++r)
        for (std::size_t c = 0; c < d->weight.cols; ++c)
          pg[r * d->weight.cols + c] = dz[r] * x[c];
      double* bg = pg + d->weight.size();
      for (std::size_t r = 0; r < d->bias.size(); ++r) bg[r] = dz[r];
      grad_out = matvec_transpose(d->weight, dz);
    } else {
      const auto& c = std::get<Conv1dLayer>(layer);
      const std::size_t lo = c.out_length();
      const std::size_t oc = c.out_channels();
      Vec dz(grad_out.size());
      for (std::size_t i = 0; i < dz.size(); ++i)
        dz[i] = grad_out[i] * activate_grad(c.activation, z[i]);
      Vec dx(x.size(), 0.0);
      double* bg = pg + c.kernels.size();
      for (std::size_t o = 0; o < oc; ++o) {
        for (std::size_t s = 0; s < lo; ++s) {
          const double g = dz[o * lo + s];
          bg[o] += g;
          for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
            for (std::size_t k = 0; k < c.kernel_width; ++k) {
              const std::size_t xi = ch * c.in_length + s * c.stride + k;
              pg[o * c.kernels.cols + ch * c.kernel_width + k] += g * x[xi];
              dx[xi] += g * c.kernels.at(o, ch * c.kernel_width + k);
            }
          }
        }
      }
      grad_out = std::move(dx);
    }
  }
  res.dx = std::move(grad_out);
  return res;
}

std::size_t param_count(const Network& net) {
  std::size_t n = 0;
  for (const Layer& l : net.layers) n += layer_param_count(l);
  return n;
}

Vec flatten(const Network& net) {
  Vec out;
  out.reserve(param_count(net));
  for (const Layer& layer : net.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      out.insert(out.end(), d->weight.data.begin(), d->weight.data.end());
      out.insert(out.end(), d->bias.begin(), d->bias.end());
    } else {
      const auto& c = std::get<Conv1dLayer>(layer);
      out.insert(out.end(), c.kernels.data.begin(), c.kernels.data.end());
      out.insert(out.end(), c.bias.begin(), c.bias.end());
    }
  }
  return out;
}

Network unflatten(const Network& net_template, const Vec& params) {
  if (params.size() != param_count(net_template))
    throw ShapeError("unflatten: expected " +
                     std::to_string(param_count(net_template)) +
                     " parameters, got " + std::to_string(params.size()));
  Network net = net_template;
  std::size_t off = 0;
  for (Layer& layer : net.layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      std::copy(params.begin() + off, params.begin() + off + d->weight.size(),
                d->weight.data.begin());
      off += d->weight.size();
      std::copy(params.begin() + off, params.begin() + off + d->bias.size(),
                d->bias.begin());
      off += d->bias.size();
    } else {
      auto& c = std::get<Conv1dLayer>(layer);
      std::copy(params.begin() + off, params.begin() + off + c.kernels.size(),
                c.kernels.data.begin());
      off += c.kernels.size();
      std::copy(params.begin() + off, params.begin() + off + c.bias.size(),
                c.bias.begin());
      off += c.bias.size();
    }
  }
  return net;
}

Vec sgd_step(const Vec& params, const Vec& grads, double lr) {
  if (params.size() != grads.size())
    throw ShapeError("sgd_step: length mismatch");
  if (lr <= 0.0) throw ConfigError("sgd_step: lr must be positive");
  Vec out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    out[i] = params[i] - lr * grads[i];
  return out;
}

namespace {

nlohmann::json layer_to_json(const Layer& layer) {
  nlohmann::json j;
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    j["type"] = "dense";
    j["in"] = d->weight.cols;
    j["out"] = d->weight.rows;
    j["activation"] = activation_name(d->activation);
    j["weight"] = d->weight.data;
    j["bias"] = d->bias;
  } else {
    const auto& c = std::get<Conv1dLayer>(layer);
    j["type"] = "conv1d";
    j["in_channels"] = c.in_channels;
    j["in_length"] = c.in_length;
    j["out_channels"] = c.out_channels();
    j["kernel_width"] = c.kernel_width;
    j["stride"] = c.stride;
    j["activation"] = activation_name(c.activation);
    j["kernels"] = c.kernels.data;
    j["bias"] = c.bias;
  }
  return j;
}

Layer layer_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  const Activation act =
      activation_from_name(j.at("activation").get<std::string>());
  if (type == "dense") {
    DenseLayer d = make_dense(j.at("in").get<std::size_t>(),
                              j.at("out").get<std::size_t>(), act);
    d.weight.data = j.at("weight").get<Vec>();
    d.bias = j.at("bias").get<Vec>();
    if (d.weight.data.size() != d.weight.rows * d.weight.cols ||
        d.bias.size() != d.weight.rows)
      throw ParseError("dense layer: value counts do not match dims");
    return d;
  }
  if (type == "conv1d") {
    Conv1dLayer c = make_conv1d(
        j.at("in_channels").get<std::size_t>(),
        j.at("in_length").get<std::size_t>(),
        j.at("out_channels").get<std::size_t>(),
        j.at("kernel_width").get<std::size_t>(),
        j.at("stride").get<std::size_t>(), act);
    c.kernels.data = j.at("kernels").get<Vec>();
    c.bias = j.at("bias").get<Vec>();
    if (c.kernels.data.size() != c.kernels.rows * c.kernels.cols ||
        c.bias.size() != c.out_channels())
      throw ParseError("conv1d layer: value counts do not match dims");
    return c;
  }
  throw ParseError("unknown layer type: " + type);
}

}  // namespace

std::string network_to_json(const Network& net) {
  nlohmann::json j;
  j["input_dim"] = net.input_dim;
  j["output_dim"] = net.output_dim;
  j["layers"] = nlohmann::json::array();
  for (const Layer& l : net.layers) j["layers"].push_back(layer_to_json(l));
  return j.dump();
}

Network network_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("network checkpoint: ") + e.what());
  }
  std::vector<Layer> layers;
  for (const auto& lj : j.at("layers")) layers.push_back(layer_from_json(lj));
  return make_network(std::move(layers));
}

void save_network(const Network& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << network_to_json(net);
  if (!out) throw IoError("write failed: " + path);
}

Network load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return network_from_json(text);
}

}  // namespace twinkit
