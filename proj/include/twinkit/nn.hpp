#pragma once

#include <string>
#include <variant>
#include <vector>

#include "twinkit/numerics.hpp"

namespace twinkit {

enum class Activation { kIdentity, kRelu, kSigmoid, kTanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vec bias;       // out
  Activation activation = Activation::kIdentity;
};

// 1-D convolution, cross-correlation convention, valid padding. Input and
// output are flat channel-major vectors: entry (c, t) lives at c*length + t.
// The input length is fixed at construction so every layer has static dims.
struct Conv1dLayer {
  Matrix kernels;  // out_channels x (in_channels * kernel_width)
  Vec bias;        // out_channels
  std::size_t in_channels = 0;
  std::size_t in_length = 0;
  std::size_t kernel_width = 0;
  std::size_t stride = 1;
  Activation activation = Activation::kIdentity;

  std::size_t out_channels() const { return kernels.rows; }
  std::size_t out_length() const {
    return (in_length - kernel_width) / stride + 1;
  }
};

using Layer = std::variant<DenseLayer, Conv1dLayer>;

std::size_t layer_input_dim(const Layer& l);
std::size_t layer_output_dim(const Layer& l);
std::size_t layer_param_count(const Layer& l);

struct Network {
  std::vector<Layer> layers;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
};

// Builds a network from an ordered layer list, checking that adjacent layer
// dims are compatible. Throws ShapeError otherwise.
Network make_network(std::vector<Layer> layers);

DenseLayer make_dense(std::size_t in, std::size_t out, Activation act);
Conv1dLayer make_conv1d(std::size_t in_channels, std::size_t in_length,
                        std::size_t out_channels, std::size_t kernel_width,
                        std::size_t stride, Activation act);

// Scaled uniform init (+-sqrt(6/(fan_in+fan_out))), biases zero.
void init_params(Network& net, RngStream& rng);

// Cached intermediates of one forward call; required by backward. Holds the
// input and pre-activation of every layer.
struct Tape {
  std::vector<Vec> inputs;
  std::vector<Vec> preacts;
};

// Forward pass. If tape is non-null it is filled for a later backward call.
// Throws ShapeError when x does not match net.input_dim.
Vec forward(const Network& net, const Vec& x, Tape* tape = nullptr);

struct BackwardResult {
  Vec dx;            // gradient w.r.t. the network input
  Vec param_grads;   // same layout as flatten()
};

// Reverse pass from dLoss/dOutput. The tape must come from a forward call on
// this exact network; a mismatched tape raises ShapeError.
BackwardResult backward(const Network& net, const Tape& tape, const Vec& dy);

// Flattened parameter order: layers in sequence; for each layer the weight
// (or kernel) matrix row-major, then the bias. flatten/unflatten round-trip
// bit-exactly.
std::size_t param_count(const Network& net);
Vec flatten(const Network& net);
Network unflatten(const Network& net_template, const Vec& params);

// p - lr * g, elementwise.
Vec sgd_step(const Vec& params, const Vec& grads, double lr);

// Checkpoint file: a JSON document holding the layer template plus all
// 64-bit parameter values; write/read round-trips bit-exactly.
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

std::string network_to_json(const Network& net);
Network network_from_json(const std::string& text);

}  // namespace twinkit
