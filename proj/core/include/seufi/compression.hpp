#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "seufi/error_model.hpp"
#include "seufi/model.hpp"

// Model transforms: structured L1 filter pruning, batch-norm folding and
// per-tensor 8-bit post-training quantization. The supported pipeline is
// prune -> fold -> quantize; every transform returns a new graph.

namespace seufi {

/// Filter indices of a [out, in, kh, kw] weight in ascending L1 order; ties keep
/// the lower index first.
std::vector<std::size_t> l1_filter_ranking(const Tensor& weight);

/// Conv layers that pruning may touch: every conv except the one producing the output.
std::vector<int> prunable_layers(const ModelGraph& model);

struct PruningPlan {
  /// Conv layer id -> fraction of filters to remove, in [0, 0.9].
  std::map<int, double> ratios;
  /// Layers that must not be pruned. The output layer is always excluded.
  std::set<int> excluded;

  /// Throws ValidationError for non-conv targets, excluded targets or ratios out of range.
  void validate(const ModelGraph& model) const;
};

/// floor(ratio * channels), guarded against representation error (0.3 * 10 is 3).
std::size_t filters_to_remove(double ratio, std::size_t channels);

/// Removes the lowest-L1 filters of every planned layer and drops the matching
/// channels downstream (batch-norm parameters, consumer input channels, concat
/// slices). Float32 models only.
ModelGraph apply_prune(const ModelGraph& model, const PruningPlan& plan);

struct LabeledSample {
  Tensor input;
  ClassMap labels;
};

/// Labels each input with the model's own prediction.
std::vector<LabeledSample> self_labeled(const ModelGraph& model, std::span<const Tensor> inputs);

/// Confusion pooled over all samples.
IoUReport evaluate(const ModelGraph& model, std::span<const LabeledSample> samples);

struct SensitivityCurve {
  int layer_id = 0;
  /// 0.0, 0.1, ..., 0.9.
  std::vector<double> ratios;
  std::vector<double> giou;
  std::vector<double> wiou;
};

/// Prunes only `layer_id` at each of the ten ratios and records the pooled metrics.
SensitivityCurve sensitivity_sweep(const ModelGraph& model, std::span<const LabeledSample> samples, int layer_id);

/// One curve per prunable layer.
std::vector<SensitivityCurve> sensitivity_sweep_all(const ModelGraph& model,
                                                    std::span<const LabeledSample> samples);

enum class StopDecision : std::uint8_t { Continue, Stop };
std::string_view to_string(StopDecision d) noexcept;

struct MetricPair {
  double giou = 0.0;
  double wiou = 0.0;
};

/// Stop once either metric has dropped by strictly more than `max_degradation` points.
StopDecision stopping_check(MetricPair baseline, MetricPair current, double max_degradation = 1.5);

/// Absorbs every conv -> batch-norm pair into the conv. Throws ValidationError when
/// a batch-norm does not directly follow a conv that feeds nothing else.
ModelGraph fold_batch_norm(const ModelGraph& model);

/// Symmetric per-tensor weight quantization: scale = max|w| / 127, zero point 0.
/// An all-zero tensor gets scale 1.
QuantParams symmetric_weight_quant(std::span<const float> values);

/// Affine i8 parameters covering [min, max] widened to include 0.
/// A degenerate range (both 0) gets scale 1, zero point 0.
QuantParams affine_activation_quant(double min, double max);

/// Converts a folded float model to int8 mode using min/max calibration over
/// `calibration` inputs. Throws ValidationError on an empty calibration set or
/// an unfolded model.
ModelGraph quantize_model(const ModelGraph& model, std::span<const Tensor> calibration);

}  // namespace seufi
