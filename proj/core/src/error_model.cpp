#include "seufi/error_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seufi/error.hpp"

namespace seufi {

ClassFrequencies class_frequencies(const ClassMap& map, std::size_t n_classes) {
  if (n_classes == 0) throw ValidationError("need at least one class");
  ClassFrequencies f(n_classes, 0.0);
  if (map.size() == 0) throw ValidationError("class map is empty");
  for (auto label : map.labels) {
    if (label >= n_classes) throw ValidationError("label " + std::to_string(label) + " >= class count");
    f[label] += 1.0;
  }
  for (auto& v : f) v /= static_cast<double>(map.size());
  return f;
}

BiasSignVector bias_signs(std::span<const float> biases) {
  BiasSignVector out;
  out.reserve(biases.size());
  for (float b : biases) out.push_back(std::signbit(b) ? BiasSign::Negative : BiasSign::Positive);
  return out;
}

double bias_flip_contribution(std::span<const double> freqs, std::span<const BiasSign> signs, std::size_t j) {
  if (freqs.size() != signs.size()) throw ValidationError("frequency and sign vectors differ in length");
  if (j >= freqs.size()) throw ValidationError("class index out of range");
  return signs[j] == BiasSign::Negative ? freqs[j] : 1.0 - freqs[j];
}

std::vector<double> bias_flip_contributions(std::span<const double> freqs, std::span<const BiasSign> signs) {
  std::vector<double> out;
  for (std::size_t j = 0; j < freqs.size(); ++j) out.push_back(bias_flip_contribution(freqs, signs, j));
  return out;
}

double expected_error_from_contributions(std::span<const double> contributions, std::span<const double> p_fi) {
  const auto n = contributions.size();
  if (n == 0) throw ValidationError("no classes");
  if (!p_fi.empty()) {
    if (p_fi.size() != n) throw ValidationError("p_fi length must equal the class count");
    double total = 0.0;
    for (double p : p_fi) {
      if (!(p >= 0.0)) throw ValidationError("p_fi entries must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw ValidationError("p_fi must sum to 1");
  }
  double e = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double p = p_fi.empty() ? 1.0 / static_cast<double>(n) : p_fi[j];
    e += p * contributions[j];
  }
  return e;
}

double expected_bias_msb_error(std::span<const double> freqs, std::span<const BiasSign> signs,
                               std::span<const double> p_fi) {
  const auto c = bias_flip_contributions(freqs, signs);
  return expected_error_from_contributions(c, p_fi);
}

std::string_view to_string(Weighting w) noexcept {
  return w == Weighting::SaturatedOnly ? "saturated_only" : "linear_ramp";
}

Weighting parse_weighting(std::string_view s) {
  if (s == "saturated_only") return Weighting::SaturatedOnly;
  if (s == "linear_ramp") return Weighting::LinearRamp;
  throw ValidationError("unknown weighting '" + std::string(s) + "'");
}

void SaturationProfile::validate() const {
  if (bit_width != 8 && bit_width != 32) throw ValidationError("bias bit width must be 8 or 32");
  if (k_sat < 0 || k_sat >= bit_width) throw ValidationError("k_sat must lie in [0, bit width)");
  if (bit_lo < 0 || bit_hi >= bit_width || bit_lo > bit_hi) throw ValidationError("bad bit range");
  if (weighting == Weighting::LinearRamp && k_sat <= k_min) {
    throw ValidationError("linear ramp needs k_sat > k_min");
  }
}

double SaturationProfile::weight(int bit) const {
  if (weighting == Weighting::SaturatedOnly) return bit >= k_sat ? 1.0 : 0.0;
  const double w = static_cast<double>(bit - k_min) / static_cast<double>(k_sat - k_min);
  return std::clamp(w, 0.0, 1.0);
}

SaturationProfile SaturationProfile::relu_preset() {
  SaturationProfile p;
  p.k_sat = 17;
  return p;
}

SaturationProfile SaturationProfile::sigmoid_preset() {
  SaturationProfile p;
  p.k_sat = 19;
  return p;
}

SaturationProfile SaturationProfile::hard_sigmoid_preset() { return sigmoid_preset(); }

double expected_quantized_bias_error(std::span<const double> freqs, std::span<const BiasSign> signs,
                                     const SaturationProfile& profile, std::span<const double> p_fi) {
  profile.validate();
  const double full = expected_bias_msb_error(freqs, signs, p_fi);
  if (profile.weighting == Weighting::SaturatedOnly) return full;
  double w = 0.0;
  for (int k = profile.bit_lo; k <= profile.bit_hi; ++k) w += profile.weight(k);
  return full * w / static_cast<double>(profile.bit_hi - profile.bit_lo + 1);
}

double measured_weighted_rate(const std::map<int, double>& rates_by_bit, const SaturationProfile& profile) {
  profile.validate();
  double num = 0.0, den = 0.0;
  for (int k = profile.bit_lo; k <= profile.bit_hi; ++k) {
    const double w = profile.weight(k);
    if (w == 0.0) continue;
    auto it = rates_by_bit.find(k);
    if (it == rates_by_bit.end()) throw ValidationError("no measured rate for bit " + std::to_string(k));
    num += w * it->second;
    den += w;
  }
  if (den == 0.0) throw ValidationError("profile assigns zero weight to the whole bit range");
  return num / den;
}

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes == 0) throw ValidationError("need at least one class");
}

void ConfusionMatrix::add(std::size_t label, std::size_t predicted, std::uint64_t count) {
  if (label >= n_ || predicted >= n_) throw ValidationError("class index out of range");
  counts_[label * n_ + predicted] += count;
}

void ConfusionMatrix::add(const ClassMap& labels, const ClassMap& predicted) {
  if (labels.height != predicted.height || labels.width != predicted.width ||
      labels.size() != predicted.size()) {
    throw ShapeError("label and prediction maps differ in shape");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) add(labels.labels[i], predicted.labels[i]);
}

std::uint64_t ConfusionMatrix::at(std::size_t label, std::size_t predicted) const {
  return counts_.at(label * n_ + predicted);
}

IoUReport ConfusionMatrix::iou() const {
  IoUReport r;
  r.tp.assign(n_, 0);
  r.fp.assign(n_, 0);
  r.fn.assign(n_, 0);
  r.per_class_iou.assign(n_, 0.0);
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < n_; ++l) {
    for (std::size_t p = 0; p < n_; ++p) {
      const auto c = at(l, p);
      total += c;
      if (l == p) {
        r.tp[l] += c;
      } else {
        r.fn[l] += c;
        r.fp[p] += c;
      }
    }
  }
  if (total == 0) throw ValidationError("confusion matrix is empty");
  std::uint64_t tp_sum = 0, union_sum = 0;
  double weighted = 0.0, weight = 0.0;
  for (std::size_t c = 0; c < n_; ++c) {
    const auto u = r.tp[c] + r.fp[c] + r.fn[c];
    tp_sum += r.tp[c];
    union_sum += u;
    if (u == 0) continue;  // absent from labels and predictions
    r.per_class_iou[c] = static_cast<double>(r.tp[c]) / static_cast<double>(u);
    const double freq = static_cast<double>(r.tp[c] + r.fn[c]) / static_cast<double>(total);
    weighted += freq * r.per_class_iou[c];
    weight += freq;
  }
  r.giou = 100.0 * static_cast<double>(tp_sum) / static_cast<double>(union_sum);
  r.wiou = weight > 0.0 ? 100.0 * weighted / weight : 0.0;
  return r;
}

double giou(const ClassMap& labels, const ClassMap& predicted, std::size_t n_classes) {
  ConfusionMatrix m(n_classes);
  m.add(labels, predicted);
  return m.iou().giou;
}

double wiou(const ClassMap& labels, const ClassMap& predicted, std::size_t n_classes) {
  ConfusionMatrix m(n_classes);
  m.add(labels, predicted);
  return m.iou().wiou;
}

}  // namespace seufi
