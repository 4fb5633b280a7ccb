#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string_view>
#include <vector>

#include "seufi/kernels.hpp"
#include "seufi/tensor.hpp"

namespace seufi {

enum class ParamKind : std::uint8_t {
  ConvWeight = 0,
  ConvBias = 1,
  BNGamma = 2,
  BNBeta = 3,
  BNMean = 4,
  BNVar = 5,
};

inline constexpr ParamKind kAllParamKinds[] = {ParamKind::ConvWeight, ParamKind::ConvBias,
                                               ParamKind::BNGamma,    ParamKind::BNBeta,
                                               ParamKind::BNMean,     ParamKind::BNVar};

std::string_view to_string(ParamKind kind) noexcept;
ParamKind parse_param_kind(std::string_view name);

using KindSet = std::set<ParamKind>;

/// Kinds injected unless configured otherwise (BN running statistics excluded).
KindSet default_campaign_kinds();
KindSet all_param_kinds();

enum class LayerKind : std::uint8_t {
  Input = 0,
  Conv = 1,
  BatchNorm = 2,
  Activation = 3,
  MaxPool = 4,
  Upsample = 5,
  Concat = 6,
};

std::string_view to_string(LayerKind kind) noexcept;

enum class DTypeMode : std::uint8_t { Float32 = 0, Int8 = 1 };

struct LayerNode {
  int id = 0;
  LayerKind kind = LayerKind::Input;
  std::vector<int> inputs;
  std::map<ParamKind, Tensor> params;

  // Conv attributes.
  int stride = 1;
  int padding = 0;
  // BatchNorm attribute.
  double eps = 1e-3;
  // Activation attribute.
  ActivationKind activation = ActivationKind::ReLU;
  // Int8 mode: quantization of this node's output activation.
  std::optional<QuantParams> output_quant;

  bool has_params() const noexcept { return !params.empty(); }
  const Tensor& param(ParamKind kind) const;
  Tensor& param(ParamKind kind);
};

/// Topologically ordered layer DAG. Node 0 is the input, the last node the output.
struct ModelGraph {
  std::vector<LayerNode> nodes;
  std::uint32_t n_classes = 0;
  std::uint32_t n_input_channels = 0;
  DTypeMode dtype_mode = DTypeMode::Float32;
  /// Nominal activation the model was built with (recorded in the file header).
  ActivationKind activation = ActivationKind::ReLU;

  const LayerNode& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }
  LayerNode& node(int id) { return nodes.at(static_cast<std::size_t>(id)); }
  int output_id() const noexcept { return static_cast<int>(nodes.size()) - 1; }

  std::size_t parameter_count() const;
  bool bit_equal(const ModelGraph& other) const;
};

/// Appends layers with dense ids; finish() validates the result.
class GraphBuilder {
 public:
  GraphBuilder(std::uint32_t n_input_channels, std::uint32_t n_classes,
               ActivationKind nominal = ActivationKind::ReLU);

  static constexpr int input() noexcept { return 0; }
  int conv(int src, Tensor weight, Tensor bias, int stride = 1, int padding = 0);
  int batch_norm(int src, Tensor gamma, Tensor beta, Tensor mean, Tensor var, double eps = 1e-3);
  int activation(int src, ActivationKind kind);
  int max_pool(int src);
  int upsample(int src);
  int concat(int a, int b);

  const ModelGraph& peek() const noexcept { return model_; }
  ModelGraph finish() &&;

 private:
  int push(LayerNode node);
  ModelGraph model_;
};

/// Shape of each node's output for an input of the given spatial size.
std::vector<Shape> infer_shapes(const ModelGraph& model, std::size_t height, std::size_t width);

/// Checks structural invariants (dense ids, topological inputs, parameter shapes,
/// int8 quantization). Throws ShapeError or ValidationError.
void validate(const ModelGraph& model);

/// Ids of the nodes that consume `id`'s output.
std::vector<int> consumers(const ModelGraph& model, int id);

/// Output of every node for one input. Node 0 holds the (quantized, in int8 mode) input.
using Activations = std::vector<Tensor>;

Activations forward_all(const ModelGraph& model, const Tensor& input);
Tensor forward(const ModelGraph& model, const Tensor& input);

/// Re-runs only the nodes downstream of `dirty_node`, reusing `cached` for
/// everything else. `cached` must come from forward_all on an identical model
/// except for the parameters of `dirty_node`. Returns the output node's tensor.
Tensor forward_from(const ModelGraph& model, const Activations& cached, int dirty_node);

/// Seeded smooth random image [channels, height, width] with values roughly in [-1, 1].
Tensor synthetic_input(std::uint32_t channels, std::size_t height, std::size_t width,
                       std::uint64_t seed);

}  // namespace seufi
