#include "advgnn/network.hpp"

#include "advgnn/error.hpp"
#include "advgnn/json_io.hpp"

#include <nlohmann/json.hpp>

namespace advgnn {

namespace {

std::string layer_tag(std::size_t i) { return "layers[" + std::to_string(i) + "]"; }

}  // namespace

std::string_view to_string(LayerOrigin origin) {
  switch (origin) {
    case LayerOrigin::dense:
      return "dense";
    case LayerOrigin::convolution:
      return "convolution-materialized";
  }
  return "dense";
}

LayerOrigin layer_origin_from_string(std::string_view tag) {
  if (tag == "dense") return LayerOrigin::dense;
  if (tag == "convolution-materialized" || tag == "convolution") return LayerOrigin::convolution;
  throw FormatError("unknown layer origin '" + std::string(tag) + "'");
}

Network::Network(std::vector<Layer> layers)
    : Network(std::move(layers), Vector(), Vector()) {}

Network::Network(std::vector<Layer> layers, Vector input_lo, Vector input_hi)
    : layers_(std::move(layers)), input_lo_(std::move(input_lo)), input_hi_(std::move(input_hi)) {
  if (layers_.empty()) throw ShapeError("network needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    if (layer.weight.rows() == 0 || layer.weight.cols() == 0)
      throw ShapeError(layer_tag(i) + ": empty weight matrix");
    if (layer.bias.size() != layer.weight.rows())
      throw ShapeError(layer_tag(i) + ": bias has " + std::to_string(layer.bias.size()) +
                       " entries, weight has " + std::to_string(layer.weight.rows()) + " rows");
    if (i > 0 && layer.in_dim() != layers_[i - 1].out_dim())
      throw ShapeError(layer_tag(i) + ": expects " + std::to_string(layer.in_dim()) +
                       " inputs but previous layer produces " +
                       std::to_string(layers_[i - 1].out_dim()));
  }
  const Index d = input_dim();
  if (input_lo_.size() == 0 && input_hi_.size() == 0) {
    input_lo_ = Vector::Zero(d);
    input_hi_ = Vector::Ones(d);
  }
  if (input_lo_.size() != d || input_hi_.size() != d)
    throw ShapeError("input_box: expected " + std::to_string(d) + " coordinates");
  for (Index i = 0; i < d; ++i) {
    if (!(input_lo_[i] <= input_hi_[i]))
      throw ShapeError("input_box[" + std::to_string(i) + "]: lo > hi");
  }
}

Index Network::width(std::size_t k) const {
  if (k == 0) return input_dim();
  return layers_.at(k - 1).out_dim();
}

ForwardTrace forward(const Network& net, const Vector& x) {
  if (x.size() != net.input_dim())
    throw ShapeError(layer_tag(0) + ": input has " + std::to_string(x.size()) +
                     " entries, expected " + std::to_string(net.input_dim()));
  ForwardTrace trace;
  trace.input = x;
  trace.pre.reserve(net.num_layers());
  trace.post.reserve(net.num_layers() - 1);
  const Vector* current = &trace.input;
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const Layer& layer = net.layer(i);
    trace.pre.push_back(layer.weight * (*current) + layer.bias);
    if (i + 1 < net.num_layers()) {
      trace.post.push_back(trace.pre.back().cwiseMax(0.0));
      current = &trace.post.back();
    }
  }
  return trace;
}

Vector logits(const Network& net, const Vector& x) { return forward(net, x).pre.back(); }

void check_classes(const Network& net, Index y, Index y_tar) {
  const Index m = net.output_dim();
  if (y < 0 || y >= m) throw ConfigError("true class " + std::to_string(y) + " out of range");
  if (y_tar < 0 || y_tar >= m)
    throw ConfigError("target class " + std::to_string(y_tar) + " out of range");
  if (y == y_tar) throw ConfigError("true and target class must differ");
}

double adversarial_loss(const Network& net, const Vector& x, Index y, Index y_tar) {
  check_classes(net, y, y_tar);
  const Vector out = logits(net, x);
  return out[y_tar] - out[y];
}

Vector backprop_input(const Network& net, const ForwardTrace& trace, const Vector& d_logits) {
  Vector grad = d_logits;
  for (std::size_t i = net.num_layers(); i-- > 0;) {
    grad = net.layer(i).weight.transpose() * grad;
    if (i > 0) {
      const Vector& pre = trace.pre[i - 1];
      for (Index j = 0; j < grad.size(); ++j) {
        if (!(pre[j] > 0.0)) grad[j] = 0.0;
      }
    }
  }
  return grad;
}

LossGradient loss_and_gradient(const Network& net, const Vector& x, Index y, Index y_tar) {
  check_classes(net, y, y_tar);
  const ForwardTrace trace = forward(net, x);
  Vector seed = Vector::Zero(net.output_dim());
  seed[y_tar] = 1.0;
  seed[y] = -1.0;
  return {trace.logits()[y_tar] - trace.logits()[y], backprop_input(net, trace, seed)};
}

Vector input_gradient(const Network& net, const Vector& x, Index y, Index y_tar) {
  return loss_and_gradient(net, x, y, y_tar).gradient;
}

Vector sign(const Vector& v) {
  return v.unaryExpr([](double a) { return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0); });
}

Index ConvSpec::out_height() const {
  return (in_height + 2 * padding - kernel_height) / stride + 1;
}

Index ConvSpec::out_width() const { return (in_width + 2 * padding - kernel_width) / stride + 1; }

Layer conv_to_linear(const ConvSpec& spec) {
  if (spec.in_channels <= 0 || spec.out_channels <= 0 || spec.in_height <= 0 ||
      spec.in_width <= 0 || spec.kernel_height <= 0 || spec.kernel_width <= 0)
    throw ShapeError("convolution: dimensions must be positive");
  if (spec.stride <= 0) throw ShapeError("convolution: stride must be positive");
  if (spec.padding < 0) throw ShapeError("convolution: padding must be nonnegative");
  if (spec.in_height + 2 * spec.padding < spec.kernel_height ||
      spec.in_width + 2 * spec.padding < spec.kernel_width)
    throw ShapeError("convolution: kernel larger than padded input");
  const auto kernel_size = static_cast<std::size_t>(spec.out_channels * spec.in_channels *
                                                    spec.kernel_height * spec.kernel_width);
  if (spec.kernel.size() != kernel_size)
    throw ShapeError("convolution: kernel has " + std::to_string(spec.kernel.size()) +
                     " values, geometry needs " + std::to_string(kernel_size));
  if (!spec.bias.empty() && spec.bias.size() != static_cast<std::size_t>(spec.out_channels))
    throw ShapeError("convolution: bias needs one value per output channel");

  const Index oh = spec.out_height();
  const Index ow = spec.out_width();
  const Index in_plane = spec.in_height * spec.in_width;
  const Index out_plane = oh * ow;

  Layer layer;
  layer.origin = LayerOrigin::convolution;
  layer.weight = Matrix::Zero(spec.out_channels * out_plane, spec.in_channels * in_plane);
  layer.bias = Vector::Zero(spec.out_channels * out_plane);
  auto kernel_at = [&](Index oc, Index ic, Index r, Index c) {
    return spec.kernel[static_cast<std::size_t>(
        ((oc * spec.in_channels + ic) * spec.kernel_height + r) * spec.kernel_width + c)];
  };
  for (Index oc = 0; oc < spec.out_channels; ++oc) {
    for (Index orow = 0; orow < oh; ++orow) {
      for (Index ocol = 0; ocol < ow; ++ocol) {
        const Index row = oc * out_plane + orow * ow + ocol;
        if (!spec.bias.empty()) layer.bias[row] = spec.bias[static_cast<std::size_t>(oc)];
        for (Index ic = 0; ic < spec.in_channels; ++ic) {
          for (Index kr = 0; kr < spec.kernel_height; ++kr) {
            const Index irow = orow * spec.stride + kr - spec.padding;
            if (irow < 0 || irow >= spec.in_height) continue;
            for (Index kc = 0; kc < spec.kernel_width; ++kc) {
              const Index icol = ocol * spec.stride + kc - spec.padding;
              if (icol < 0 || icol >= spec.in_width) continue;
              layer.weight(row, ic * in_plane + irow * spec.in_width + icol) +=
                  kernel_at(oc, ic, kr, kc);
            }
          }
        }
      }
    }
  }
  return layer;
}

using json_io::matrix_from_json;
using json_io::matrix_to_json;
using json_io::vector_from_json;

Network network_from_json(const nlohmann::json& doc, std::string_view source) {
  const std::string src(source);
  if (!doc.is_object()) throw FormatError(src + ": expected a JSON object");
  if (!doc.contains("layers")) throw FormatError(src + ": missing 'layers'");
  const auto& layers_node = doc.at("layers");
  if (!layers_node.is_array() || layers_node.empty())
    throw FormatError(src + ": 'layers' must be a nonempty array");

  std::vector<Layer> layers;
  for (std::size_t i = 0; i < layers_node.size(); ++i) {
    const std::string path = src + ": " + layer_tag(i);
    const auto& node = layers_node[i];
    if (!node.is_object() || !node.contains("weight") || !node.contains("bias"))
      throw FormatError(path + ": needs 'weight' and 'bias'");
    Layer layer;
    layer.weight = matrix_from_json(node.at("weight"), path + ".weight");
    layer.bias = vector_from_json(node.at("bias"), path + ".bias");
    if (node.contains("origin")) {
      try {
        layer.origin = layer_origin_from_string(node.at("origin").get<std::string>());
      } catch (const std::exception& e) {
        throw FormatError(path + ".origin: " + e.what());
      }
    }
    if (layer.bias.size() != layer.weight.rows())
      throw FormatError(path + ".bias: has " + std::to_string(layer.bias.size()) +
                        " entries, weight has " + std::to_string(layer.weight.rows()) + " rows");
    if (i > 0 && layer.weight.cols() != layers.back().weight.rows())
      throw FormatError(path + ".weight: has " + std::to_string(layer.weight.cols()) +
                        " columns, previous layer produces " +
                        std::to_string(layers.back().weight.rows()));
    layers.push_back(std::move(layer));
  }

  const Index d = layers.front().in_dim();
  const Index m = layers.back().out_dim();
  if (doc.contains("input_dim") && doc.at("input_dim").get<Index>() != d)
    throw FormatError(src + ": input_dim " + doc.at("input_dim").dump() +
                      " does not match first layer (" + std::to_string(d) + ")");
  if (doc.contains("output_dim") && doc.at("output_dim").get<Index>() != m)
    throw FormatError(src + ": output_dim " + doc.at("output_dim").dump() +
                      " does not match last layer (" + std::to_string(m) + ")");

  Vector lo = Vector::Zero(d);
  Vector hi = Vector::Ones(d);
  if (doc.contains("input_box")) {
    const auto& box = doc.at("input_box");
    if (!box.is_array() || box.size() != static_cast<std::size_t>(d))
      throw FormatError(src + ": input_box must list " + std::to_string(d) + " [lo, hi] pairs");
    for (std::size_t i = 0; i < box.size(); ++i) {
      const std::string path = src + ": input_box[" + std::to_string(i) + "]";
      if (!box[i].is_array() || box[i].size() != 2) throw FormatError(path + ": expected [lo, hi]");
      lo[static_cast<Index>(i)] = box[i][0].get<double>();
      hi[static_cast<Index>(i)] = box[i][1].get<double>();
      if (lo[static_cast<Index>(i)] > hi[static_cast<Index>(i)])
        throw FormatError(path + ": lo > hi");
    }
  }
  return Network(std::move(layers), std::move(lo), std::move(hi));
}

nlohmann::json network_to_json(const Network& net) {
  nlohmann::json doc;
  doc["input_dim"] = net.input_dim();
  doc["output_dim"] = net.output_dim();
  nlohmann::json box = nlohmann::json::array();
  for (Index i = 0; i < net.input_dim(); ++i) box.push_back({net.input_lo()[i], net.input_hi()[i]});
  doc["input_box"] = std::move(box);
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& layer : net.layers()) {
    nlohmann::json node;
    node["weight"] = matrix_to_json(layer.weight);
    node["bias"] = json_io::vector_to_json(layer.bias);
    node["origin"] = std::string(to_string(layer.origin));
    layers.push_back(std::move(node));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

Network load_network(const std::filesystem::path& path) {
  return network_from_json(json_io::read_file(path), path.string());
}

void save_network(const Network& net, const std::filesystem::path& path) {
  json_io::write_file(path, network_to_json(net));
}

}  // namespace advgnn
