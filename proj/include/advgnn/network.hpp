#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace advgnn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class LayerOrigin { dense, convolution };

std::string_view to_string(LayerOrigin origin);
LayerOrigin layer_origin_from_string(std::string_view tag);

struct Layer {
  Matrix weight;  // out_dim x in_dim
  Vector bias;    // out_dim
  LayerOrigin origin = LayerOrigin::dense;

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }
};

// Feed-forward ReLU network: affine layers with a ReLU after every layer but
// the last. Immutable once constructed.
class Network {
 public:
  // Input box defaults to [0, 1]^d.
  explicit Network(std::vector<Layer> layers);
  Network(std::vector<Layer> layers, Vector input_lo, Vector input_hi);

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t num_layers() const { return layers_.size(); }
  Index input_dim() const { return layers_.front().in_dim(); }
  Index output_dim() const { return layers_.back().out_dim(); }
  const Vector& input_lo() const { return input_lo_; }
  const Vector& input_hi() const { return input_hi_; }

  // Width of layer k in the node indexing used by bounds and the GNN:
  // k = 0 is the input, k = 1..L are the pre-activation layers.
  Index width(std::size_t k) const;

 private:
  std::vector<Layer> layers_;
  Vector input_lo_;
  Vector input_hi_;
};

struct ForwardTrace {
  Vector input;             // x_0
  std::vector<Vector> pre;  // pre-activations of layers 1..L
  std::vector<Vector> post; // ReLU outputs of layers 1..L-1

  const Vector& logits() const { return pre.back(); }
};

ForwardTrace forward(const Network& net, const Vector& x);
Vector logits(const Network& net, const Vector& x);

// Throws ConfigError unless y != y_tar and both index an output.
void check_classes(const Network& net, Index y, Index y_tar);

// f(x)[y_tar] - f(x)[y]; x is adversarial when this is >= 0.
double adversarial_loss(const Network& net, const Vector& x, Index y, Index y_tar);

struct LossGradient {
  double loss = 0.0;
  Vector gradient;
};

// Reverse-mode pass from an output cotangent to the input. ReLU derivative is
// 0 at exactly 0.
Vector backprop_input(const Network& net, const ForwardTrace& trace, const Vector& d_logits);

LossGradient loss_and_gradient(const Network& net, const Vector& x, Index y, Index y_tar);
Vector input_gradient(const Network& net, const Vector& x, Index y, Index y_tar);

// sgn with sgn(0) = 0.
Vector sign(const Vector& v);

struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Index in_height = 1;
  Index in_width = 1;
  Index kernel_height = 1;
  Index kernel_width = 1;
  Index stride = 1;
  Index padding = 0;
  // [out_channel][in_channel][kh][kw], row-major.
  std::vector<double> kernel;
  // One per output channel; empty means zero bias.
  std::vector<double> bias;

  Index out_height() const;
  Index out_width() const;
};

// Materializes a 2-D convolution over a CHW-flattened input as a dense layer.
Layer conv_to_linear(const ConvSpec& spec);

// JSON: {"input_dim", "output_dim", "input_box": [[lo, hi], ...],
//        "layers": [{"weight": [[...]], "bias": [...], "origin": "dense"}]}
Network network_from_json(const nlohmann::json& doc, std::string_view source = "network");
nlohmann::json network_to_json(const Network& net);
Network load_network(const std::filesystem::path& path);
void save_network(const Network& net, const std::filesystem::path& path);

}  // namespace advgnn
