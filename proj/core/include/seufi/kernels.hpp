#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "seufi/tensor.hpp"

// Reference inference kernels. Activation tensors are [C, H, W] (batch of one).
// Float kernels never mask NaN or Inf: fault propagation is what gets measured.

namespace seufi {

enum class ActivationKind : std::uint8_t { ReLU = 0, Sigmoid = 1, HardSigmoid = 2 };

std::string_view to_string(ActivationKind kind) noexcept;
ActivationKind parse_activation(std::string_view name);

float relu(float x) noexcept;
float sigmoid(float x) noexcept;
/// 0 for x <= -3, 1 for x >= 3, x/6 + 0.5 in between; NaN stays NaN.
float hard_sigmoid(float x) noexcept;
float apply_activation(float x, ActivationKind kind) noexcept;

/// Round-to-nearest-even and saturate into the i8 range.
std::int8_t saturate_i8(double value) noexcept;
std::int8_t quantize_i8(double real, const QuantParams& q) noexcept;
std::int32_t saturate_i32(std::int64_t value) noexcept;

/// 2-D convolution; the float path accumulates in double. weight is [out_ch, in_ch, kh, kw], bias is [out_ch].
///
/// Float path: all three tensors f32. Integer path: i8 input and weight, i32 bias
/// whose scale equals input_scale * weight_scale; the accumulator saturates at the
/// i32 range and the result is requantized to `output_quant`.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding, std::optional<QuantParams> output_quant = std::nullopt);

/// out = gamma * (x - mean) / sqrt(var + eps) + beta, per channel. f32 only.
/// With `strict` unset a non-positive var + eps yields NaN/Inf instead of an
/// error; the graph executor runs that way because a faulted var is legal input.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  const Tensor& mean, const Tensor& var, double eps, bool strict = true);

/// Integer inputs go through a 256-entry table built from the input and output
/// QuantParams (`output_quant` defaults to the input's).
Tensor activation(const Tensor& input, ActivationKind kind,
                  std::optional<QuantParams> output_quant = std::nullopt);

/// Entry q + 128 holds the output code for input code q.
std::array<std::int8_t, 256> activation_table(ActivationKind kind, const QuantParams& in,
                                              const QuantParams& out);

/// 2x2 max pooling, stride 2. A NaN anywhere in a window yields NaN.
Tensor max_pool2(const Tensor& input);
/// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& input);
/// Channel concatenation, a's channels first. Integer inputs are requantized to
/// `output_quant` (defaults to a's).
Tensor concat_channels(const Tensor& a, const Tensor& b,
                       std::optional<QuantParams> output_quant = std::nullopt);

/// Converts an f32 tensor to i8 under q.
Tensor quantize_tensor(const Tensor& input, const QuantParams& q);
/// Converts an integer tensor to f32.
Tensor dequantize_tensor(const Tensor& input);

/// Per-pixel argmax over [classes, H, W] logits. NaN ranks below every other
/// value, ties go to the lowest class index, and an all-NaN pixel maps to 0.
ClassMap argmax_classes(const Tensor& logits);

}  // namespace seufi
