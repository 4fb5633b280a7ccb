#include "seufi/tensor.hpp"

#include <bit>
#include <cstring>
#include <limits>
#include <sstream>

#include "seufi/error.hpp"

namespace seufi {

std::string_view to_string(DType dtype) noexcept {
  switch (dtype) {
    case DType::F32:
      return "f32";
    case DType::I8:
      return "i8";
    case DType::I32:
      return "i32";
  }
  return "?";
}

int bit_width(DType dtype) noexcept {
  switch (dtype) {
    case DType::I8:
      return 8;
    case DType::F32:
    case DType::I32:
      return 32;
  }
  return 0;
}

bool is_integer(DType dtype) noexcept { return dtype != DType::F32; }

std::size_t element_count(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape,
               std::variant<std::vector<float>, std::vector<std::int8_t>,
                            std::vector<std::int32_t>>
                   data,
               std::optional<QuantParams> quant)
    : shape_(std::move(shape)), data_(std::move(data)), quant_(quant) {
  validate();
}

void Tensor::validate() const {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (element_count(shape_) != size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(size()) + " elements");
  }
  if (is_integer(dtype()) != quant_.has_value()) {
    throw ValidationError("quantization parameters must be present iff the dtype is integer");
  }
  if (quant_) {
    if (!(quant_->scale > 0.0)) throw ValidationError("quantization scale must be positive");
    if (dtype() == DType::I8 && (quant_->zero_point < -128 || quant_->zero_point > 127)) {
      throw ValidationError("i8 zero point out of range");
    }
    if (dtype() == DType::I32 && quant_->zero_point != 0) {
      throw ValidationError("i32 tensors use zero point 0");
    }
  }
}

Tensor Tensor::f32(Shape shape, std::vector<float> data) {
  return Tensor(std::move(shape), std::move(data), std::nullopt);
}

Tensor Tensor::i8(Shape shape, std::vector<std::int8_t> data, QuantParams quant) {
  return Tensor(std::move(shape), std::move(data), quant);
}

Tensor Tensor::i32(Shape shape, std::vector<std::int32_t> data, QuantParams quant) {
  return Tensor(std::move(shape), std::move(data), quant);
}

Tensor Tensor::zeros(Shape shape, DType dtype, std::optional<QuantParams> quant) {
  const auto n = element_count(shape);
  switch (dtype) {
    case DType::F32:
      return f32(std::move(shape), std::vector<float>(n, 0.0f));
    case DType::I8:
      return i8(std::move(shape), std::vector<std::int8_t>(n, 0), quant.value_or(QuantParams{}));
    case DType::I32:
      return i32(std::move(shape), std::vector<std::int32_t>(n, 0),
                 quant.value_or(QuantParams{}));
  }
  throw ValidationError("unknown dtype");
}

std::size_t Tensor::size() const noexcept {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

void Tensor::set_quant(QuantParams q) {
  if (!is_integer(dtype())) throw ValidationError("f32 tensors carry no quantization parameters");
  auto old = quant_;
  quant_ = q;
  try {
    validate();
  } catch (...) {
    quant_ = old;
    throw;
  }
}

namespace {

template <typename T, typename V>
std::span<T> get_span(V& data, DType want, DType have) {
  if (want != have) {
    throw ValidationError("tensor dtype is " + std::string(to_string(have)) + ", expected " +
                          std::string(to_string(want)));
  }
  return std::span<T>(std::get<std::vector<std::remove_const_t<T>>>(data));
}

}  // namespace

std::span<float> Tensor::f32_data() { return get_span<float>(data_, DType::F32, dtype()); }
std::span<const float> Tensor::f32_data() const {
  return get_span<const float>(data_, DType::F32, dtype());
}
std::span<std::int8_t> Tensor::i8_data() { return get_span<std::int8_t>(data_, DType::I8, dtype()); }
std::span<const std::int8_t> Tensor::i8_data() const {
  return get_span<const std::int8_t>(data_, DType::I8, dtype());
}
std::span<std::int32_t> Tensor::i32_data() {
  return get_span<std::int32_t>(data_, DType::I32, dtype());
}
std::span<const std::int32_t> Tensor::i32_data() const {
  return get_span<const std::int32_t>(data_, DType::I32, dtype());
}

std::uint32_t Tensor::raw_bits(std::size_t i) const {
  if (i >= size()) throw ValidationError("element index out of range");
  switch (dtype()) {
    case DType::F32:
      return std::bit_cast<std::uint32_t>(std::get<0>(data_)[i]);
    case DType::I8:
      return std::bit_cast<std::uint8_t>(std::get<1>(data_)[i]);
    case DType::I32:
      return std::bit_cast<std::uint32_t>(std::get<2>(data_)[i]);
  }
  return 0;
}

void Tensor::set_raw_bits(std::size_t i, std::uint32_t bits) {
  if (i >= size()) throw ValidationError("element index out of range");
  switch (dtype()) {
    case DType::F32:
      std::get<0>(data_)[i] = std::bit_cast<float>(bits);
      break;
    case DType::I8:
      if (bits > 0xFFu) throw ValidationError("i8 raw bits exceed 8 bits");
      std::get<1>(data_)[i] = std::bit_cast<std::int8_t>(static_cast<std::uint8_t>(bits));
      break;
    case DType::I32:
      std::get<2>(data_)[i] = std::bit_cast<std::int32_t>(bits);
      break;
  }
}

double Tensor::real_at(std::size_t i) const {
  if (i >= size()) throw ValidationError("element index out of range");
  switch (dtype()) {
    case DType::F32:
      return std::get<0>(data_)[i];
    case DType::I8:
      return quant_->scale * (static_cast<double>(std::get<1>(data_)[i]) - quant_->zero_point);
    case DType::I32:
      return quant_->scale * (static_cast<double>(std::get<2>(data_)[i]) - quant_->zero_point);
  }
  return 0.0;
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  if (shape_ != other.shape_ || dtype() != other.dtype() || quant_.has_value() != other.quant_.has_value()) {
    return false;
  }
  if (quant_) {
    if (std::bit_cast<std::uint64_t>(quant_->scale) != std::bit_cast<std::uint64_t>(other.quant_->scale) ||
        quant_->zero_point != other.quant_->zero_point) {
      return false;
    }
  }
  return std::visit(
      [&](const auto& mine) {
        using V = std::decay_t<decltype(mine)>;
        const auto& theirs = std::get<V>(other.data_);
        return mine.size() == theirs.size() &&
               std::memcmp(mine.data(), theirs.data(), mine.size() * sizeof(typename V::value_type)) == 0;
      },
      data_);
}

}  // namespace seufi
