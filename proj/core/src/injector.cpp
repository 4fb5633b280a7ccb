#include "seufi/injector.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "seufi/error.hpp"

namespace seufi {

std::string_view to_string(BitField f) noexcept {
  switch (f) {
    case BitField::Sign:
      return "sign";
    case BitField::Exponent:
      return "exponent";
    case BitField::Mantissa:
      return "mantissa";
    case BitField::Magnitude:
      return "magnitude";
  }
  return "?";
}

std::string_view to_string(FlipDirection d) noexcept {
  return d == FlipDirection::ZeroToOne ? "0->1" : "1->0";
}

std::string_view to_string(ValueKind k) noexcept {
  switch (k) {
    case ValueKind::Finite:
      return "finite";
    case ValueKind::Infinite:
      return "inf";
    case ValueKind::NaN:
      return "nan";
  }
  return "?";
}

BitField parse_bit_field(std::string_view s) {
  for (auto f : {BitField::Sign, BitField::Exponent, BitField::Mantissa, BitField::Magnitude}) {
    if (to_string(f) == s) return f;
  }
  throw ValidationError("unknown bit field '" + std::string(s) + "'");
}

FlipDirection parse_flip_direction(std::string_view s) {
  if (s == "0->1") return FlipDirection::ZeroToOne;
  if (s == "1->0") return FlipDirection::OneToZero;
  throw ValidationError("unknown flip direction '" + std::string(s) + "'");
}

ValueKind parse_value_kind(std::string_view s) {
  for (auto k : {ValueKind::Finite, ValueKind::Infinite, ValueKind::NaN}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown value kind '" + std::string(s) + "'");
}

BitField classify_bit(DType dtype, int bit) {
  const int width = bit_width(dtype);
  if (bit < 0 || bit >= width) {
    throw ValidationError("bit " + std::to_string(bit) + " out of range for " + std::string(to_string(dtype)));
  }
  if (bit == width - 1) return BitField::Sign;
  if (dtype == DType::F32) return bit >= 23 ? BitField::Exponent : BitField::Mantissa;
  return BitField::Magnitude;
}

namespace {

double decode(std::uint32_t raw, DType dtype) {
  switch (dtype) {
    case DType::F32:
      return std::bit_cast<float>(raw);
    case DType::I8:
      return std::bit_cast<std::int8_t>(static_cast<std::uint8_t>(raw));
    case DType::I32:
      return std::bit_cast<std::int32_t>(raw);
  }
  return 0.0;
}

}  // namespace

FlipClassification flip_bits(std::uint32_t raw, DType dtype, int bit) {
  FlipClassification c;
  c.field = classify_bit(dtype, bit);
  if (dtype == DType::I8 && raw > 0xFFu) throw ValidationError("i8 raw value exceeds 8 bits");
  const std::uint32_t mask = std::uint32_t{1} << bit;
  c.direction = (raw & mask) ? FlipDirection::OneToZero : FlipDirection::ZeroToOne;
  c.pre_bits = raw;
  c.post_bits = raw ^ mask;
  c.pre_value = decode(c.pre_bits, dtype);
  c.post_value = decode(c.post_bits, dtype);
  if (std::isnan(c.post_value)) {
    c.post_kind = ValueKind::NaN;
  } else if (std::isinf(c.post_value)) {
    c.post_kind = ValueKind::Infinite;
  } else {
    c.post_kind = ValueKind::Finite;
  }
  return c;
}

FlipResult<float> flip_bit(float value, int bit) {
  auto c = flip_bits(std::bit_cast<std::uint32_t>(value), DType::F32, bit);
  return {std::bit_cast<float>(c.post_bits), c};
}

FlipResult<std::int8_t> flip_bit(std::int8_t value, int bit) {
  auto c = flip_bits(std::bit_cast<std::uint8_t>(value), DType::I8, bit);
  return {std::bit_cast<std::int8_t>(static_cast<std::uint8_t>(c.post_bits)), c};
}

FlipResult<std::int32_t> flip_bit(std::int32_t value, int bit) {
  auto c = flip_bits(std::bit_cast<std::uint32_t>(value), DType::I32, bit);
  return {std::bit_cast<std::int32_t>(c.post_bits), c};
}

void check_location(const ModelGraph& model, const FaultLocation& loc) {
  if (loc.layer_id < 0 || static_cast<std::size_t>(loc.layer_id) >= model.nodes.size()) {
    throw FaultStateError("fault layer " + std::to_string(loc.layer_id) + " does not exist");
  }
  const auto& node = model.node(loc.layer_id);
  auto it = node.params.find(loc.kind);
  if (it == node.params.end()) {
    throw FaultStateError("layer " + std::to_string(loc.layer_id) + " has no " + std::string(to_string(loc.kind)));
  }
  if (loc.index >= it->second.size()) throw FaultStateError("fault element index out of range");
  if (loc.bit < 0 || loc.bit >= bit_width(it->second.dtype())) throw FaultStateError("fault bit out of range");
}

FaultableModel::FaultableModel(ModelGraph model) : model_(std::move(model)) {}

FaultHandle FaultableModel::apply(const FaultLocation& loc) {
  if (active_) throw FaultStateError("a fault is already active; revert it first");
  check_location(model_, loc);
  auto& t = model_.node(loc.layer_id).param(loc.kind);
  const auto flip = flip_bits(t.raw_bits(loc.index), t.dtype(), loc.bit);
  t.set_raw_bits(loc.index, flip.post_bits);
  active_ = FaultHandle(loc, flip, ++serial_);
  return *active_;
}

void FaultableModel::revert(const FaultHandle& handle) {
  if (!active_ || active_->serial_ != handle.serial_) throw FaultStateError("handle is not the active fault");
  auto& t = model_.node(handle.location_.layer_id).param(handle.location_.kind);
  t.set_raw_bits(handle.location_.index, handle.flip_.pre_bits);
  active_.reset();
}

ValueRangeCensus value_range_census(std::span<const float> values, int layer_id) {
  ValueRangeCensus c;
  c.layer_id = layer_id;
  c.count = values.size();
  std::size_t lt1 = 0, lt2 = 0, ge2 = 0, zero = 0;
  for (float v : values) {
    const float a = std::abs(v);
    if (a < 1.0f) {
      ++lt1;
      zero += v == 0.0f;
    } else if (a < 2.0f) {
      ++lt2;
    } else {
      ++ge2;  // Inf and NaN land here too
    }
  }
  if (c.count == 0) return c;
  const double n = static_cast<double>(c.count);
  c.below_one = static_cast<double>(lt1) / n;
  c.one_to_two = static_cast<double>(lt2) / n;
  c.two_or_more = static_cast<double>(ge2) / n;
  c.zero = static_cast<double>(zero) / n;
  return c;
}

namespace {

std::vector<float> layer_f32_values(const LayerNode& node) {
  std::vector<float> all;
  for (const auto& [kind, t] : node.params) {
    const auto d = t.f32_data();
    all.insert(all.end(), d.begin(), d.end());
  }
  return all;
}

void require_float(const ModelGraph& model) {
  if (model.dtype_mode != DTypeMode::Float32) throw ValidationError("census requires a float32 model");
}

}  // namespace

std::vector<ValueRangeCensus> value_range_census(const ModelGraph& model) {
  require_float(model);
  std::vector<ValueRangeCensus> out;
  for (const auto& node : model.nodes) {
    if (!node.has_params()) continue;
    out.push_back(value_range_census(layer_f32_values(node), node.id));
  }
  return out;
}

PartialExponentCensus partial_exponent_census(std::span<const float> values, int bit, int layer_id) {
  if (bit < 23 || bit > 29) throw ValidationError("partial exponent bit must be in 23..29");
  PartialExponentCensus c;
  c.layer_id = layer_id;
  c.bit = bit;
  c.count = values.size();
  constexpr std::uint32_t kPartial = 0x7Fu << 23;  // bits 29..23
  constexpr std::uint32_t kMsb = 1u << 30;
  for (float v : values) {
    const auto raw = std::bit_cast<std::uint32_t>(v);
    if (raw & (1u << bit)) continue;
    ++c.zero_at_bit;
    if (!(raw & kMsb) && ((raw | (1u << bit)) & kPartial) == kPartial) ++c.one_flip_from_filled;
  }
  if (c.count > 0) c.frac_zero_at_bit = static_cast<double>(c.zero_at_bit) / static_cast<double>(c.count);
  if (c.zero_at_bit > 0) {
    c.frac_one_flip_from_filled = static_cast<double>(c.one_flip_from_filled) / static_cast<double>(c.zero_at_bit);
  }
  return c;
}

std::vector<PartialExponentCensus> partial_exponent_census(const ModelGraph& model, int bit) {
  require_float(model);
  if (bit < 23 || bit > 29) throw ValidationError("partial exponent bit must be in 23..29");
  std::vector<PartialExponentCensus> out;
  for (const auto& node : model.nodes) {
    if (!node.has_params()) continue;
    out.push_back(partial_exponent_census(layer_f32_values(node), bit, node.id));
  }
  return out;
}

}  // namespace seufi
