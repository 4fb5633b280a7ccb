#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "seufi/fault_space.hpp"
#include "seufi/model.hpp"

namespace seufi {

/// Representation field a bit belongs to. f32: 31 sign, 30..23 exponent, 22..0
/// mantissa. Integers (two's complement): MSB sign, the rest magnitude.
enum class BitField : std::uint8_t { Sign, Exponent, Mantissa, Magnitude };
enum class FlipDirection : std::uint8_t { ZeroToOne, OneToZero };
enum class ValueKind : std::uint8_t { Finite, Infinite, NaN };

std::string_view to_string(BitField f) noexcept;
std::string_view to_string(FlipDirection d) noexcept;
std::string_view to_string(ValueKind k) noexcept;
BitField parse_bit_field(std::string_view s);
FlipDirection parse_flip_direction(std::string_view s);
ValueKind parse_value_kind(std::string_view s);

struct FlipClassification {
  BitField field = BitField::Mantissa;
  FlipDirection direction = FlipDirection::ZeroToOne;
  double pre_value = 0.0;
  double post_value = 0.0;
  ValueKind post_kind = ValueKind::Finite;
  std::uint32_t pre_bits = 0;
  std::uint32_t post_bits = 0;
};

BitField classify_bit(DType dtype, int bit);

/// Toggles one bit of a raw element. Integer values are interpreted as raw
/// codes (no dequantization). Throws ValidationError for an out-of-range bit.
FlipClassification flip_bits(std::uint32_t raw, DType dtype, int bit);

template <typename T>
struct FlipResult {
  T value;
  FlipClassification info;
};

FlipResult<float> flip_bit(float value, int bit);
FlipResult<std::int8_t> flip_bit(std::int8_t value, int bit);
FlipResult<std::int32_t> flip_bit(std::int32_t value, int bit);

/// Opaque token for an applied fault.
class FaultHandle {
 public:
  const FaultLocation& location() const noexcept { return location_; }
  const FlipClassification& flip() const noexcept { return flip_; }

 private:
  friend class FaultableModel;
  FaultHandle(FaultLocation loc, FlipClassification flip, std::uint64_t serial)
      : location_(loc), flip_(flip), serial_(serial) {}
  FaultLocation location_;
  FlipClassification flip_;
  std::uint64_t serial_;
};

/// Private mutable copy of a model with at most one transient fault applied.
/// Campaign workers each own one.
class FaultableModel {
 public:
  explicit FaultableModel(ModelGraph model);

  const ModelGraph& model() const noexcept { return model_; }
  bool has_active_fault() const noexcept { return active_.has_value(); }

  /// Flips the bit at `loc`. Throws FaultStateError if a fault is already active
  /// or the location does not exist.
  FaultHandle apply(const FaultLocation& loc);
  /// Restores the original bit pattern. Throws FaultStateError for a stale handle.
  void revert(const FaultHandle& handle);

 private:
  ModelGraph model_;
  std::optional<FaultHandle> active_;
  std::uint64_t serial_ = 0;
};

/// Validates `loc` against `model`: existing layer and kind, index and bit in range.
void check_location(const ModelGraph& model, const FaultLocation& loc);

struct ValueRangeCensus {
  int layer_id = 0;
  std::size_t count = 0;
  /// 0 <= |x| < 1 (zeros included).
  double below_one = 0.0;
  /// 1 <= |x| < 2.
  double one_to_two = 0.0;
  /// |x| >= 2, plus Inf and NaN.
  double two_or_more = 0.0;
  /// Exact zeros, also counted in below_one.
  double zero = 0.0;
};

/// Per-layer census over every f32 parameter tensor. Throws for int8 models.
std::vector<ValueRangeCensus> value_range_census(const ModelGraph& model);
ValueRangeCensus value_range_census(std::span<const float> values, int layer_id = 0);

struct PartialExponentCensus {
  int layer_id = 0;
  int bit = 23;
  std::size_t count = 0;
  std::size_t zero_at_bit = 0;
  std::size_t one_flip_from_filled = 0;
  /// Fraction of parameters with '0' at `bit`.
  double frac_zero_at_bit = 0.0;
  /// Among those, the fraction for which this flip leaves exponent bits 29..23 all
  /// ones with bit 30 clear (magnitude lands in [1, 2)).
  double frac_one_flip_from_filled = 0.0;
};

/// `bit` must lie in 23..29.
std::vector<PartialExponentCensus> partial_exponent_census(const ModelGraph& model, int bit);
PartialExponentCensus partial_exponent_census(std::span<const float> values, int bit, int layer_id = 0);

}  // namespace seufi
