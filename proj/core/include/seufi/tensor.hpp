#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace seufi {

enum class DType : std::uint8_t { F32 = 0, I8 = 1, I32 = 2 };

std::string_view to_string(DType dtype) noexcept;
/// Storage width of one element in bits.
int bit_width(DType dtype) noexcept;
bool is_integer(DType dtype) noexcept;

/// Per-tensor affine quantization: real = scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;

  bool operator==(const QuantParams&) const = default;
};

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Integer tensors always carry QuantParams.
class Tensor {
 public:
  Tensor() = default;

  static Tensor f32(Shape shape, std::vector<float> data);
  static Tensor i8(Shape shape, std::vector<std::int8_t> data, QuantParams quant);
  static Tensor i32(Shape shape, std::vector<std::int32_t> data, QuantParams quant);
  static Tensor zeros(Shape shape, DType dtype = DType::F32,
                      std::optional<QuantParams> quant = std::nullopt);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept;
  DType dtype() const noexcept { return static_cast<DType>(data_.index()); }
  const std::optional<QuantParams>& quant() const noexcept { return quant_; }
  void set_quant(QuantParams q);

  std::span<float> f32_data();
  std::span<const float> f32_data() const;
  std::span<std::int8_t> i8_data();
  std::span<const std::int8_t> i8_data() const;
  std::span<std::int32_t> i32_data();
  std::span<const std::int32_t> i32_data() const;

  /// Raw storage bits of element i, zero-extended to 32 bits.
  std::uint32_t raw_bits(std::size_t i) const;
  void set_raw_bits(std::size_t i, std::uint32_t bits);
  /// Element i as a real number (dequantized for integer tensors).
  double real_at(std::size_t i) const;

  /// Bit-exact equality of shape, dtype, quant and payload (NaN payloads included).
  bool bit_equal(const Tensor& other) const noexcept;

 private:
  Tensor(Shape shape, std::variant<std::vector<float>, std::vector<std::int8_t>,
                                   std::vector<std::int32_t>> data,
         std::optional<QuantParams> quant);
  void validate() const;

  Shape shape_;
  std::variant<std::vector<float>, std::vector<std::int8_t>, std::vector<std::int32_t>> data_;
  std::optional<QuantParams> quant_;
};

/// Per-pixel class indices of one segmentation output, row-major [H, W].
struct ClassMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool operator==(const ClassMap&) const = default;
};

}  // namespace seufi
