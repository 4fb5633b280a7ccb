#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "seufi/model.hpp"

namespace seufi {

/// One injectable bit: (layer, parameter kind, flat element index, bit; 0 = LSB).
struct FaultLocation {
  int layer_id = 0;
  ParamKind kind = ParamKind::ConvWeight;
  std::size_t index = 0;
  int bit = 0;

  auto operator<=>(const FaultLocation&) const = default;
};

/// Restricts which (layer, kind, bit) triples are part of the fault space.
struct FaultSpaceFilter {
  KindSet kinds = default_campaign_kinds();
  /// Empty means every bit of each element's width.
  std::set<int> bits;
  /// Empty means every layer.
  std::set<int> layers;
};

struct FaultSpaceEntry {
  ParamKind kind = ParamKind::ConvWeight;
  std::size_t elements = 0;
  int bit_width = 0;
  /// Bit positions of this tensor inside the space, ascending.
  std::vector<int> bits;

  std::uint64_t size() const noexcept { return static_cast<std::uint64_t>(elements) * bits.size(); }
};

struct LayerFaultSpace {
  int layer_id = 0;
  std::vector<FaultSpaceEntry> entries;
  /// N for this layer: sum of elements x included bits.
  std::uint64_t total = 0;

  /// Maps an ordinal in [0, total) to its location. Ordinals run entry by entry,
  /// element-major, bit-minor.
  FaultLocation at(std::uint64_t ordinal) const;
  bool contains(const FaultLocation& loc) const noexcept;
};

struct FaultSpace {
  std::vector<LayerFaultSpace> layers;

  std::uint64_t total() const noexcept;
  const LayerFaultSpace* find(int layer_id) const noexcept;
};

/// Per-layer fault space over `filter.kinds`; layers without a matching parameter
/// are omitted. Bit width is 32 for f32/i32 and 8 for i8.
FaultSpace enumerate_fault_space(const ModelGraph& model, const FaultSpaceFilter& filter);
FaultSpace enumerate_fault_space(const ModelGraph& model, const KindSet& kinds);

}  // namespace seufi
