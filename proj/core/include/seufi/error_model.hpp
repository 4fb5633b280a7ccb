#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "seufi/tensor.hpp"

// Closed-form error expectations for flips in the final-layer biases, and the
// segmentation quality metrics used to judge compressed models.
//
// A huge negative bias erases its class: every pixel predicted as that class
// changes, so the error is the class frequency. A huge positive bias makes its
// class win everywhere: every other pixel changes, so the error is one minus the
// class frequency. The expected error weighs these contributions by the
// probability of the flip landing in each bias.

namespace seufi {

enum class BiasSign : std::uint8_t { Negative, Positive };

using ClassFrequencies = std::vector<double>;
using BiasSignVector = std::vector<BiasSign>;

/// Normalized histogram of a class map. Throws if a label is >= n_classes.
ClassFrequencies class_frequencies(const ClassMap& map, std::size_t n_classes);

/// Sign of each value; -0.0 counts as negative (its sign bit is set).
BiasSignVector bias_signs(std::span<const float> biases);

double bias_flip_contribution(std::span<const double> freqs, std::span<const BiasSign> signs, std::size_t j);
std::vector<double> bias_flip_contributions(std::span<const double> freqs, std::span<const BiasSign> signs);

/// Sum over j of p_fi[j] * contribution[j]. An empty p_fi means uniform 1/n.
double expected_bias_msb_error(std::span<const double> freqs, std::span<const BiasSign> signs,
                               std::span<const double> p_fi = {});

/// Same expectation computed from precomputed contributions (the "P" columns
/// of a printed table).
double expected_error_from_contributions(std::span<const double> contributions,
                                         std::span<const double> p_fi = {});

enum class Weighting : std::uint8_t {
  /// Weight 1 at bits >= k_sat, 0 below.
  SaturatedOnly,
  /// Weight clamp((k - k_min) / (k_sat - k_min), 0, 1).
  LinearRamp,
};

std::string_view to_string(Weighting w) noexcept;
Weighting parse_weighting(std::string_view s);

/// How bias flips in an integer model escalate with bit significance.
struct SaturationProfile {
  /// First bit at which a flip always produces the full class-substitution error.
  int k_sat = 17;
  /// Ramp origin for LinearRamp (weight 0 at and below it).
  int k_min = 0;
  /// Inclusive bit range the estimate covers.
  int bit_lo = 0;
  int bit_hi = 30;
  int bit_width = 32;
  Weighting weighting = Weighting::SaturatedOnly;

  /// Throws ValidationError on an inconsistent profile.
  void validate() const;
  double weight(int bit) const;

  static SaturationProfile relu_preset();
  static SaturationProfile sigmoid_preset();
  static SaturationProfile hard_sigmoid_preset();
};

/// SaturatedOnly: equals expected_bias_msb_error. LinearRamp: that value scaled by
/// the mean weight over [bit_lo, bit_hi].
double expected_quantized_bias_error(std::span<const double> freqs, std::span<const BiasSign> signs,
                                     const SaturationProfile& profile, std::span<const double> p_fi = {});

/// Weighted mean of measured per-bit rates with the profile's weights, normalized
/// by the total weight over [bit_lo, bit_hi]. `rates_by_bit` must cover the range.
double measured_weighted_rate(const std::map<int, double>& rates_by_bit, const SaturationProfile& profile);

struct IoUReport {
  /// Percentages in [0, 100].
  double giou = 0.0;
  double wiou = 0.0;
  std::vector<double> per_class_iou;
  std::vector<std::uint64_t> tp, fp, fn;
};

/// Accumulates a confusion matrix over any number of (label, prediction) pairs.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes);

  void add(const ClassMap& labels, const ClassMap& predicted);
  void add(std::size_t label, std::size_t predicted, std::uint64_t count = 1);
  std::uint64_t at(std::size_t label, std::size_t predicted) const;
  std::size_t n_classes() const noexcept { return n_; }

  /// GIoU = sum TP / sum (TP + FP + FN); WIoU = label-frequency-weighted mean IoU
  /// over classes present in labels or predictions.
  IoUReport iou() const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

double giou(const ClassMap& labels, const ClassMap& predicted, std::size_t n_classes);
double wiou(const ClassMap& labels, const ClassMap& predicted, std::size_t n_classes);

}  // namespace seufi
