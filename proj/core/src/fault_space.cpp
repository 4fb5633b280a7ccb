#include "seufi/fault_space.hpp"

#include <algorithm>

#include "seufi/error.hpp"

namespace seufi {

FaultLocation LayerFaultSpace::at(std::uint64_t ordinal) const {
  for (const auto& e : entries) {
    const auto n = e.size();
    if (ordinal < n) {
      const auto nbits = e.bits.size();
      return FaultLocation{layer_id, e.kind, static_cast<std::size_t>(ordinal / nbits),
                           e.bits[static_cast<std::size_t>(ordinal % nbits)]};
    }
    ordinal -= n;
  }
  throw ValidationError("fault ordinal outside layer " + std::to_string(layer_id));
}

bool LayerFaultSpace::contains(const FaultLocation& loc) const noexcept {
  if (loc.layer_id != layer_id) return false;
  for (const auto& e : entries) {
    if (e.kind == loc.kind) {
      return loc.index < e.elements && std::binary_search(e.bits.begin(), e.bits.end(), loc.bit);
    }
  }
  return false;
}

std::uint64_t FaultSpace::total() const noexcept {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.total;
  return n;
}

const LayerFaultSpace* FaultSpace::find(int layer_id) const noexcept {
  for (const auto& l : layers) {
    if (l.layer_id == layer_id) return &l;
  }
  return nullptr;
}

FaultSpace enumerate_fault_space(const ModelGraph& model, const FaultSpaceFilter& filter) {
  FaultSpace space;
  for (const auto& node : model.nodes) {
    if (!filter.layers.empty() && !filter.layers.contains(node.id)) continue;
    LayerFaultSpace layer{node.id, {}, 0};
    for (const auto& [kind, tensor] : node.params) {
      if (!filter.kinds.contains(kind)) continue;
      FaultSpaceEntry e{kind, tensor.size(), bit_width(tensor.dtype()), {}};
      for (int b = 0; b < e.bit_width; ++b) {
        if (filter.bits.empty() || filter.bits.contains(b)) e.bits.push_back(b);
      }
      if (e.bits.empty()) continue;
      layer.total += e.size();
      layer.entries.push_back(std::move(e));
    }
    if (layer.total > 0) space.layers.push_back(std::move(layer));
  }
  return space;
}

FaultSpace enumerate_fault_space(const ModelGraph& model, const KindSet& kinds) {
  FaultSpaceFilter f;
  f.kinds = kinds;
  return enumerate_fault_space(model, f);
}

}  // namespace seufi
