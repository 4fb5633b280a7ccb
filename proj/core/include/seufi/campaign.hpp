#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seufi/fault_space.hpp"
#include "seufi/injector.hpp"
#include "seufi/model.hpp"

namespace seufi {

enum class Sampling : std::uint8_t {
  /// Uniform without replacement over every (element, bit) pair of a layer.
  UniformLayer,
  /// Equal quota per bit position, uniform within each bit.
  StratifiedPerBit,
};

enum class InputMode : std::uint8_t {
  /// One input per injection, assigned round-robin over the input list.
  Single,
  /// Every injection is evaluated on every input (one record per input).
  All,
};

std::string_view to_string(Sampling s) noexcept;
std::string_view to_string(InputMode m) noexcept;
Sampling parse_sampling(std::string_view s);
InputMode parse_input_mode(std::string_view s);

struct CampaignConfig {
  /// Error margin of the per-layer estimate.
  double e = 0.025;
  /// Confidence coefficient (1.96 for 95%).
  double t = 1.96;
  /// Assumed failure probability; 0.5 maximizes the sample size.
  double p = 0.5;
  std::uint64_t cap = 1550;
  KindSet included_kinds = default_campaign_kinds();
  Sampling sampling = Sampling::UniformLayer;
  std::uint64_t seed = 0;
  std::vector<Tensor> inputs;

  /// Restricts injections to these bit positions (empty: all bits).
  std::set<int> bits;
  /// Restricts injections to these layer ids (empty: all layers).
  std::set<int> layers;
  InputMode input_mode = InputMode::Single;

  /// Throws ValidationError when e, t, p or cap are out of range.
  void validate() const;
  FaultSpaceFilter filter() const;
};

/// Injections needed for a layer with N possible faults:
///   ceil(N / (1 + e^2 (N - 1) / (t^2 p (1 - p)))), then capped by `cap` and N.
std::uint64_t sample_size(std::uint64_t n_faults, double e = 0.025, double t = 1.96, double p = 0.5,
                          std::uint64_t cap = 1550);

struct LayerPlan {
  int layer_id = 0;
  std::uint64_t fault_space = 0;
  std::uint64_t injections = 0;
};

struct CampaignPlan {
  std::vector<LayerPlan> layers;

  std::uint64_t total_injections() const noexcept;
  std::uint64_t total_fault_space() const noexcept;
};

/// One entry per layer that owns parameters of the included kinds.
/// Throws ValidationError when the filtered fault space is empty.
CampaignPlan plan(const ModelGraph& model, const CampaignConfig& config);

/// Distinct locations drawn from `space`, ascending by ordinal.
std::vector<FaultLocation> sample_locations(const LayerFaultSpace& space, std::uint64_t n, Sampling sampling,
                                            std::uint64_t seed);

ClassMap golden_run(const ModelGraph& model, const Tensor& input);

/// Golden maps memoized per (model digest, input id). Thread-safe.
class GoldenCache {
 public:
  const ClassMap& get(const ModelGraph& model, const Tensor& input, std::size_t input_id);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::size_t>, ClassMap> maps_;
};

/// Fraction of pixels whose class differs. Throws ShapeError on size mismatch.
double pixel_mismatch_rate(const ClassMap& golden, const ClassMap& faulty);

struct InjectionRecord {
  FaultLocation location;
  FlipDirection direction = FlipDirection::ZeroToOne;
  BitField field = BitField::Mantissa;
  std::uint32_t pre_bits = 0;
  std::uint32_t post_bits = 0;
  ValueKind post_kind = ValueKind::Finite;
  std::size_t input_id = 0;
  double error_rate = 0.0;

  bool operator==(const InjectionRecord&) const = default;
};

struct CellStats {
  std::size_t count = 0;
  std::size_t count_nonzero = 0;
  double mean = 0.0;
  /// Population standard deviation.
  double std = 0.0;
  /// Mean over records with a nonzero rate; 0 when count_nonzero is 0.
  double mean_nonzero = 0.0;
  double max = 0.0;
};

/// Layer x bit error statistics.
struct ErrorMatrix {
  std::map<std::pair<int, int>, CellStats> cells;
  CellStats global;

  const CellStats* cell(int layer_id, int bit) const;
  std::vector<int> layer_ids() const;
};

/// Throws ValidationError on empty input.
ErrorMatrix aggregate(std::span<const InjectionRecord> records);
CellStats summarize(std::span<const double> rates);

struct CampaignResult {
  CampaignPlan plan;
  std::vector<InjectionRecord> records;
  ErrorMatrix matrix;
};

/// apply -> infer -> compare with golden -> revert, for every planned location.
/// `jobs` worker threads each own a private copy of the model; records come back
/// in plan order, so the output is identical for any job count.
CampaignResult run_campaign(const ModelGraph& model, const CampaignConfig& config, unsigned jobs = 1);

}  // namespace seufi
