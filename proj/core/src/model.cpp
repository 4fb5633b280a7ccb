#include "seufi/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "seufi/error.hpp"
#include "seufi/random.hpp"

namespace seufi {

std::string_view to_string(ParamKind kind) noexcept {
  switch (kind) {
    case ParamKind::ConvWeight:
      return "conv_weight";
    case ParamKind::ConvBias:
      return "conv_bias";
    case ParamKind::BNGamma:
      return "bn_gamma";
    case ParamKind::BNBeta:
      return "bn_beta";
    case ParamKind::BNMean:
      return "bn_mean";
    case ParamKind::BNVar:
      return "bn_var";
  }
  return "?";
}

ParamKind parse_param_kind(std::string_view name) {
  for (auto k : kAllParamKinds) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown parameter kind '" + std::string(name) + "'");
}

KindSet default_campaign_kinds() {
  return {ParamKind::ConvWeight, ParamKind::ConvBias, ParamKind::BNGamma, ParamKind::BNBeta};
}

KindSet all_param_kinds() { return KindSet(std::begin(kAllParamKinds), std::end(kAllParamKinds)); }

std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Input:
      return "input";
    case LayerKind::Conv:
      return "conv";
    case LayerKind::BatchNorm:
      return "batch_norm";
    case LayerKind::Activation:
      return "activation";
    case LayerKind::MaxPool:
      return "max_pool";
    case LayerKind::Upsample:
      return "upsample";
    case LayerKind::Concat:
      return "concat";
  }
  return "?";
}

const Tensor& LayerNode::param(ParamKind kind) const {
  auto it = params.find(kind);
  if (it == params.end()) {
    throw ValidationError("layer " + std::to_string(id) + " has no " + std::string(to_string(kind)));
  }
  return it->second;
}

Tensor& LayerNode::param(ParamKind kind) {
  return const_cast<Tensor&>(static_cast<const LayerNode&>(*this).param(kind));
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& node : nodes) {
    for (const auto& [kind, t] : node.params) n += t.size();
  }
  return n;
}

bool ModelGraph::bit_equal(const ModelGraph& other) const {
  if (n_classes != other.n_classes || n_input_channels != other.n_input_channels ||
      dtype_mode != other.dtype_mode || activation != other.activation ||
      nodes.size() != other.nodes.size()) {
    return false;
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& a = nodes[i];
    const auto& b = other.nodes[i];
    if (a.id != b.id || a.kind != b.kind || a.inputs != b.inputs || a.stride != b.stride ||
        a.padding != b.padding || a.eps != b.eps || a.activation != b.activation ||
        a.output_quant != b.output_quant || a.params.size() != b.params.size()) {
      return false;
    }
    for (const auto& [kind, t] : a.params) {
      auto it = b.params.find(kind);
      if (it == b.params.end() || !t.bit_equal(it->second)) return false;
    }
  }
  return true;
}

namespace {

[[noreturn]] void layer_error(const LayerNode& node, const std::string& what) {
  throw ShapeError("layer " + std::to_string(node.id) + " (" + std::string(to_string(node.kind)) +
                   "): " + what);
}

void expect_inputs(const LayerNode& node, std::size_t n) {
  if (node.inputs.size() != n) {
    layer_error(node, "expects " + std::to_string(n) + " input(s), has " +
                          std::to_string(node.inputs.size()));
  }
}

Shape node_shape(const ModelGraph& model, const LayerNode& node, const std::vector<Shape>& shapes,
                 std::size_t height, std::size_t width) {
  auto in = [&](std::size_t i) -> const Shape& { return shapes.at(static_cast<std::size_t>(node.inputs[i])); };
  switch (node.kind) {
    case LayerKind::Input:
      expect_inputs(node, 0);
      return {model.n_input_channels, height, width};
    case LayerKind::Conv: {
      expect_inputs(node, 1);
      const auto& w = node.param(ParamKind::ConvWeight).shape();
      const auto& b = node.param(ParamKind::ConvBias).shape();
      if (w.size() != 4) layer_error(node, "weight must be 4-D");
      if (b.size() != 1 || b[0] != w[0]) layer_error(node, "bias length must equal output channels");
      if (w[1] != in(0)[0]) {
        layer_error(node, "weight expects " + std::to_string(w[1]) + " input channels, got " +
                              std::to_string(in(0)[0]));
      }
      if (node.stride < 1 || node.padding < 0) layer_error(node, "bad stride/padding");
      const auto ph = static_cast<long long>(in(0)[1]) + 2LL * node.padding;
      const auto pw = static_cast<long long>(in(0)[2]) + 2LL * node.padding;
      if (ph < static_cast<long long>(w[2]) || pw < static_cast<long long>(w[3])) {
        layer_error(node, "kernel larger than padded input");
      }
      return {w[0], static_cast<std::size_t>((ph - static_cast<long long>(w[2])) / node.stride + 1),
              static_cast<std::size_t>((pw - static_cast<long long>(w[3])) / node.stride + 1)};
    }
    case LayerKind::BatchNorm:
      expect_inputs(node, 1);
      for (auto k : {ParamKind::BNGamma, ParamKind::BNBeta, ParamKind::BNMean, ParamKind::BNVar}) {
        const auto& s = node.param(k).shape();
        if (s.size() != 1 || s[0] != in(0)[0]) layer_error(node, "parameter length must equal channels");
      }
      return in(0);
    case LayerKind::Activation:
      expect_inputs(node, 1);
      return in(0);
    case LayerKind::MaxPool:
      expect_inputs(node, 1);
      if (in(0)[1] % 2 || in(0)[2] % 2) layer_error(node, "pooling needs even spatial dims");
      return {in(0)[0], in(0)[1] / 2, in(0)[2] / 2};
    case LayerKind::Upsample:
      expect_inputs(node, 1);
      return {in(0)[0], in(0)[1] * 2, in(0)[2] * 2};
    case LayerKind::Concat:
      expect_inputs(node, 2);
      if (in(0)[1] != in(1)[1] || in(0)[2] != in(1)[2]) layer_error(node, "concat spatial dims differ");
      return {in(0)[0] + in(1)[0], in(0)[1], in(0)[2]};
  }
  layer_error(node, "unknown layer kind");
}

}  // namespace

std::vector<Shape> infer_shapes(const ModelGraph& model, std::size_t height, std::size_t width) {
  std::vector<Shape> shapes;
  shapes.reserve(model.nodes.size());
  for (const auto& node : model.nodes) shapes.push_back(node_shape(model, node, shapes, height, width));
  return shapes;
}

void validate(const ModelGraph& model) {
  if (model.nodes.empty()) throw ValidationError("model has no layers");
  if (model.n_classes == 0 || model.n_input_channels == 0) {
    throw ValidationError("model needs positive class and input-channel counts");
  }
  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    const auto& node = model.nodes[i];
    if (node.id != static_cast<int>(i)) throw ValidationError("layer ids must be dense ordinals");
    if ((i == 0) != (node.kind == LayerKind::Input)) {
      throw ValidationError("exactly the first layer must be the input");
    }
    for (int src : node.inputs) {
      if (src < 0 || src >= node.id) layer_error(node, "inputs must reference earlier layers");
    }
    for (const auto& [kind, t] : node.params) {
      const bool conv_kind = kind == ParamKind::ConvWeight || kind == ParamKind::ConvBias;
      const bool allowed = node.kind == LayerKind::Conv ? conv_kind : node.kind == LayerKind::BatchNorm && !conv_kind;
      if (!allowed) {
        layer_error(node, "parameter " + std::string(to_string(kind)) + " does not belong to this layer kind");
      }
    }
    if (model.dtype_mode == DTypeMode::Int8) {
      if (node.kind == LayerKind::BatchNorm) layer_error(node, "int8 models must have batch-norm folded");
      if (!node.output_quant) layer_error(node, "int8 models need output quantization on every layer");
      if (node.kind == LayerKind::Conv) {
        if (node.param(ParamKind::ConvWeight).dtype() != DType::I8 ||
            node.param(ParamKind::ConvBias).dtype() != DType::I32) {
          layer_error(node, "int8 conv needs i8 weights and i32 bias");
        }
      }
    } else {
      for (const auto& [kind, t] : node.params) {
        if (t.dtype() != DType::F32) layer_error(node, "float32 models hold f32 parameters only");
      }
      if (node.kind == LayerKind::BatchNorm) {
        const auto var = node.param(ParamKind::BNVar).f32_data();
        for (float v : var) {
          if (!(static_cast<double>(v) + node.eps > 0.0)) layer_error(node, "var + eps must be positive");
        }
      }
    }
  }
  // Every non-output layer must feed something; the output is the single sink.
  std::vector<bool> used(model.nodes.size(), false);
  for (const auto& node : model.nodes) {
    for (int src : node.inputs) used[static_cast<std::size_t>(src)] = true;
  }
  for (std::size_t i = 0; i + 1 < model.nodes.size(); ++i) {
    if (!used[i]) throw ValidationError("layer " + std::to_string(i) + " has no consumer; only the output may be a sink");
  }
  // Shape propagation on a nominal input; the spatial size must survive pooling.
  std::size_t pools = 0;
  for (const auto& node : model.nodes) pools += node.kind == LayerKind::MaxPool;
  const std::size_t side = std::size_t{1} << std::min<std::size_t>(pools + 1, 20);
  const auto shapes = infer_shapes(model, side, side);
  if (shapes.back()[0] != model.n_classes) {
    throw ShapeError("output produces " + std::to_string(shapes.back()[0]) + " channels, expected " +
                     std::to_string(model.n_classes) + " classes");
  }
}

std::vector<int> consumers(const ModelGraph& model, int id) {
  std::vector<int> out;
  for (const auto& node : model.nodes) {
    for (int src : node.inputs) {
      if (src == id) {
        out.push_back(node.id);
        break;
      }
    }
  }
  return out;
}

namespace {

Tensor run_node(const ModelGraph& model, const LayerNode& node, const Tensor* a, const Tensor* b,
                const Tensor& model_input) {
  switch (node.kind) {
    case LayerKind::Input: {
      if (model_input.rank() != 3 || model_input.dim(0) != model.n_input_channels) {
        throw ShapeError("model expects input [" + std::to_string(model.n_input_channels) +
                         ", H, W], got " + shape_string(model_input.shape()));
      }
      if (model.dtype_mode == DTypeMode::Int8) {
        return model_input.dtype() == DType::I8 ? model_input : quantize_tensor(model_input, *node.output_quant);
      }
      return model_input;
    }
    case LayerKind::Conv:
      return conv2d(*a, node.param(ParamKind::ConvWeight), node.param(ParamKind::ConvBias), node.stride,
                    node.padding, node.output_quant);
    case LayerKind::BatchNorm:
      return batch_norm(*a, node.param(ParamKind::BNGamma), node.param(ParamKind::BNBeta),
                        node.param(ParamKind::BNMean), node.param(ParamKind::BNVar), node.eps,
                        /*strict=*/false);
    case LayerKind::Activation:
      return activation(*a, node.activation, node.output_quant);
    case LayerKind::MaxPool:
      return max_pool2(*a);
    case LayerKind::Upsample:
      return upsample2(*a);
    case LayerKind::Concat:
      return concat_channels(*a, *b, node.output_quant);
  }
  throw ValidationError("unknown layer kind");
}

const Tensor* input_ptr(const LayerNode& node, std::size_t i, const std::vector<const Tensor*>& outs) {
  return i < node.inputs.size() ? outs[static_cast<std::size_t>(node.inputs[i])] : nullptr;
}

}  // namespace

Activations forward_all(const ModelGraph& model, const Tensor& input) {
  Activations acts;
  acts.reserve(model.nodes.size());
  std::vector<const Tensor*> outs;
  outs.reserve(model.nodes.size());
  for (const auto& node : model.nodes) {
    // Reserve above guarantees pointers into acts stay valid.
    acts.push_back(run_node(model, node, input_ptr(node, 0, outs), input_ptr(node, 1, outs), input));
    outs.push_back(&acts.back());
  }
  return acts;
}

Tensor forward(const ModelGraph& model, const Tensor& input) {
  return std::move(forward_all(model, input).back());
}

Tensor forward_from(const ModelGraph& model, const Activations& cached, int dirty_node) {
  const auto n = model.nodes.size();
  if (cached.size() != n) throw ValidationError("cached activations do not match the model");
  if (dirty_node <= 0 || static_cast<std::size_t>(dirty_node) >= n) {
    throw ValidationError("dirty layer out of range");
  }
  std::vector<std::optional<Tensor>> fresh(n);
  std::vector<const Tensor*> outs(n);
  for (std::size_t i = 0; i < n; ++i) outs[i] = &cached[i];

  for (std::size_t i = static_cast<std::size_t>(dirty_node); i < n; ++i) {
    const auto& node = model.nodes[i];
    bool dirty = static_cast<int>(i) == dirty_node;
    for (int src : node.inputs) dirty = dirty || fresh[static_cast<std::size_t>(src)].has_value();
    if (!dirty) continue;
    fresh[i] = run_node(model, node, input_ptr(node, 0, outs), input_ptr(node, 1, outs), cached[0]);
    outs[i] = &*fresh[i];
  }
  return fresh[n - 1] ? std::move(*fresh[n - 1]) : cached[n - 1];
}

GraphBuilder::GraphBuilder(std::uint32_t n_input_channels, std::uint32_t n_classes, ActivationKind nominal) {
  model_.n_input_channels = n_input_channels;
  model_.n_classes = n_classes;
  model_.activation = nominal;
  LayerNode in;
  in.kind = LayerKind::Input;
  push(std::move(in));
}

int GraphBuilder::push(LayerNode node) {
  node.id = static_cast<int>(model_.nodes.size());
  for (int src : node.inputs) {
    if (src < 0 || src >= node.id) throw ValidationError("layer input must reference an earlier layer");
  }
  model_.nodes.push_back(std::move(node));
  return model_.nodes.back().id;
}

int GraphBuilder::conv(int src, Tensor weight, Tensor bias, int stride, int padding) {
  LayerNode n;
  n.kind = LayerKind::Conv;
  n.inputs = {src};
  n.params.emplace(ParamKind::ConvWeight, std::move(weight));
  n.params.emplace(ParamKind::ConvBias, std::move(bias));
  n.stride = stride;
  n.padding = padding;
  return push(std::move(n));
}

int GraphBuilder::batch_norm(int src, Tensor gamma, Tensor beta, Tensor mean, Tensor var, double eps) {
  LayerNode n;
  n.kind = LayerKind::BatchNorm;
  n.inputs = {src};
  n.params.emplace(ParamKind::BNGamma, std::move(gamma));
  n.params.emplace(ParamKind::BNBeta, std::move(beta));
  n.params.emplace(ParamKind::BNMean, std::move(mean));
  n.params.emplace(ParamKind::BNVar, std::move(var));
  n.eps = eps;
  return push(std::move(n));
}

int GraphBuilder::activation(int src, ActivationKind kind) {
  LayerNode n;
  n.kind = LayerKind::Activation;
  n.inputs = {src};
  n.activation = kind;
  return push(std::move(n));
}

int GraphBuilder::max_pool(int src) {
  LayerNode n;
  n.kind = LayerKind::MaxPool;
  n.inputs = {src};
  return push(std::move(n));
}

int GraphBuilder::upsample(int src) {
  LayerNode n;
  n.kind = LayerKind::Upsample;
  n.inputs = {src};
  return push(std::move(n));
}

int GraphBuilder::concat(int a, int b) {
  LayerNode n;
  n.kind = LayerKind::Concat;
  n.inputs = {a, b};
  return push(std::move(n));
}

ModelGraph GraphBuilder::finish() && {
  validate(model_);
  return std::move(model_);
}

Tensor synthetic_input(std::uint32_t channels, std::size_t height, std::size_t width, std::uint64_t seed) {
  if (channels == 0 || height == 0 || width == 0) throw ValidationError("synthetic input needs positive dims");
  Rng rng(derive_seed(seed, 0x1A9E7));
  std::vector<float> data(channels * height * width);
  constexpr int kWaves = 4;
  for (std::uint32_t c = 0; c < channels; ++c) {
    double fx[kWaves], fy[kWaves], phase[kWaves], amp[kWaves];
    for (int k = 0; k < kWaves; ++k) {
      fx[k] = rng.uniform(0.5, 3.0) * 2.0 * std::numbers::pi / static_cast<double>(width);
      fy[k] = rng.uniform(0.5, 3.0) * 2.0 * std::numbers::pi / static_cast<double>(height);
      phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      amp[k] = rng.uniform(0.2, 0.45);
    }
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double v = 0.0;
        for (int k = 0; k < kWaves; ++k) {
          v += amp[k] * std::sin(fx[k] * static_cast<double>(x) + fy[k] * static_cast<double>(y) + phase[k]);
        }
        v += 0.05 * rng.normal();
        data[(c * height + y) * width + x] = static_cast<float>(v);
      }
    }
  }
  return Tensor::f32({channels, height, width}, std::move(data));
}

}  // namespace seufi
