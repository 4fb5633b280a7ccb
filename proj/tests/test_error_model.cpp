#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "seufi/error.hpp"
#include "seufi/error_model.hpp"
#include "seufi/random.hpp"

using namespace seufi;

namespace {

struct Row {
  const char* name;
  std::array<double, 6> p;
  double err;
};

// Contribution rows (percent) and printed expected errors.
const Row kNonCompressed[] = {{"relu", {0, 55.09, 4.41, 73.05, 7.47, 83.73}, 37.29},
                              {"sigmoid", {0, 56.80, 95.11, 75.63, 92.17, 80.28}, 66.66},
                              {"hard_sigmoid", {0, 58.66, 4.71, 75.72, 93.63, 76.71}, 51.57}};
const Row kPruned[] = {{"relu", {0, 55.66, 4.35, 72.93, 7.37, 83.13}, 37.24},
                       {"sigmoid", {0, 58.14, 95.30, 76.52, 93.30, 76.75}, 66.67},
                       {"hard_sigmoid", {0, 57.80, 5.01, 76.05, 93.66, 77.51}, 51.67}};
const Row kCompressed[] = {{"relu", {0, 55.68, 4.24, 73.03, 6.96, 82.48}, 37.06},
                           {"sigmoid", {0, 59.09, 95.48, 77.43, 94.07, 73.93}, 66.66},
                           {"hard_sigmoid", {0, 58.78, 5.23, 76.03, 93.82, 76.61}, 51.75}};

const std::vector<double> kReluFreqs{0, .4491, .0441, .2695, .0747, .1627};
const std::vector<float> kReluBiases{-0.85f, 0.32f, -0.03f, 0.04f, -0.17f, 0.11f};

void check_rows(const Row (&rows)[3]) {
  for (const auto& r : rows) {
    CAPTURE(r.name);
    CHECK(std::abs(expected_error_from_contributions(r.p) - r.err) <= 0.01);
  }
}

}  // namespace

TEST_CASE("printed contribution rows give the printed expected errors") {
  check_rows(kNonCompressed);
  check_rows(kPruned);
  check_rows(kCompressed);
}

TEST_CASE("contributions from frequencies and signs") {
  auto signs = bias_signs(kReluBiases);
  CHECK(signs[0] == BiasSign::Negative);
  CHECK(signs[1] == BiasSign::Positive);
  auto c = bias_flip_contributions(kReluFreqs, signs);
  const double want[] = {0, 55.09, 4.41, 73.05, 7.47, 83.73};
  for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(100 * c[j] - want[j]) <= 0.005);
  CHECK(std::abs(100 * expected_bias_msb_error(kReluFreqs, signs) - 37.29) <= 0.01);

  const double one[] = {1.0};
  const BiasSign pos[] = {BiasSign::Positive}, neg[] = {BiasSign::Negative};
  const double zero[] = {0.0};
  CHECK(bias_flip_contribution(zero, neg, 0) == 0.0);
  CHECK(bias_flip_contribution(one, pos, 0) == 0.0);
  const float negzero[] = {-0.0f};
  CHECK(bias_signs(negzero)[0] == BiasSign::Negative);
}

TEST_CASE("uniform frequencies with all-negative biases") {
  const std::vector<double> f(6, 1.0 / 6);
  const BiasSignVector s(6, BiasSign::Negative);
  CHECK(100 * expected_bias_msb_error(f, s) == doctest::Approx(16.6667).epsilon(1e-4));
}

TEST_CASE("expected error invariants") {
  Rng rng(31);
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t n = 2 + rng.below(7);
    std::vector<double> f(n), p(n);
    BiasSignVector s(n);
    double fs = 0, ps = 0;
    for (std::size_t j = 0; j < n; ++j) {
      fs += (f[j] = rng.uniform());
      ps += (p[j] = rng.uniform());
      s[j] = rng.below(2) ? BiasSign::Positive : BiasSign::Negative;
    }
    for (auto& v : f) v /= fs;
    for (auto& v : p) v /= ps;
    const double e = expected_bias_msb_error(f, s, p);
    auto c = bias_flip_contributions(f, s);
    for (double x : c) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
    CHECK(e <= *std::max_element(c.begin(), c.end()) + 1e-12);

    // Joint permutation of classes.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<double> f2(n), p2(n);
    BiasSignVector s2(n);
    for (std::size_t j = 0; j < n; ++j) {
      f2[j] = f[perm[j]];
      p2[j] = p[perm[j]];
      s2[j] = s[perm[j]];
    }
    CHECK(expected_bias_msb_error(f2, s2, p2) == doctest::Approx(e).epsilon(1e-12));

    const BiasSignVector all_neg(n, BiasSign::Negative);
    double want = 0;
    for (std::size_t j = 0; j < n; ++j) want += p[j] * f[j];
    CHECK(expected_bias_msb_error(f, all_neg, p) == doctest::Approx(want).epsilon(1e-12));
    CHECK(expected_bias_msb_error(f, all_neg, p) <= *std::max_element(f.begin(), f.end()) + 1e-12);
  }
}

TEST_CASE("p_fi validation") {
  const std::vector<double> bad{0.5, 0.6, 0, 0, 0, 0};
  CHECK_THROWS_AS(expected_error_from_contributions(kNonCompressed[0].p, bad), ValidationError);
  const std::vector<double> short_p{1.0};
  CHECK_THROWS_AS(expected_error_from_contributions(kNonCompressed[0].p, short_p), ValidationError);
  const std::vector<double> focused{0, 0, 0, 0, 0, 1};
  CHECK(expected_error_from_contributions(kNonCompressed[0].p, focused) == doctest::Approx(83.73));
}

TEST_CASE("class frequencies") {
  ClassMap m{2, 2, {0, 0, 1, 2}};
  auto f = class_frequencies(m, 3);
  CHECK(f == std::vector<double>{0.5, 0.25, 0.25});
  ClassMap u{2, 2, {0, 0, 0, 0}};
  CHECK(class_frequencies(u, 3) == std::vector<double>{1.0, 0.0, 0.0});
  CHECK_THROWS(class_frequencies(m, 2));
}

TEST_CASE("saturation profiles") {
  for (auto p : {SaturationProfile::relu_preset(), SaturationProfile::sigmoid_preset(),
                 SaturationProfile::hard_sigmoid_preset()}) {
    CHECK_NOTHROW(p.validate());
  }
  SaturationProfile p;
  p.k_sat = 20;
  CHECK(p.weight(19) == 0.0);
  CHECK(p.weight(20) == 1.0);
  CHECK(p.weight(30) == 1.0);

  p.weighting = Weighting::LinearRamp;
  p.k_min = 10;
  CHECK(p.weight(10) == 0.0);
  CHECK(p.weight(15) == 0.5);
  CHECK(p.weight(25) == 1.0);

  p.k_min = 19;  // k_sat = k_min + 1: a step at k_sat
  for (int k = 0; k <= 30; ++k) CHECK(p.weight(k) == (k >= 20 ? 1.0 : 0.0));

  p.k_min = 20;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  SaturationProfile w8;
  w8.bit_width = 8;
  w8.k_sat = 9;
  CHECK_THROWS_AS(w8.validate(), ValidationError);
  SaturationProfile range;
  range.bit_lo = 10;
  range.bit_hi = 5;
  CHECK_THROWS_AS(range.validate(), ValidationError);
  CHECK(parse_weighting("linear_ramp") == Weighting::LinearRamp);
  CHECK(parse_weighting(to_string(Weighting::SaturatedOnly)) == Weighting::SaturatedOnly);
}

TEST_CASE("expected quantized bias error") {
  const auto signs = bias_signs(kReluBiases);
  const auto sat = SaturationProfile::relu_preset();
  CHECK(expected_quantized_bias_error(kReluFreqs, signs, sat) == expected_bias_msb_error(kReluFreqs, signs));

  // Compressed row: contributions reproduce 37.06 under the step profile.
  std::vector<double> f{0, 1 - .5568, .0424, 1 - .7303, .0696, 1 - .8248};
  CHECK(std::abs(100 * expected_quantized_bias_error(f, signs, sat) - 37.06) <= 0.01);

  SaturationProfile ramp;
  ramp.weighting = Weighting::LinearRamp;
  ramp.k_min = 10;
  ramp.k_sat = 20;
  ramp.bit_lo = 0;
  ramp.bit_hi = 30;
  double mean_w = 0;
  for (int k = 0; k <= 30; ++k) mean_w += std::clamp((k - 10) / 10.0, 0.0, 1.0);
  mean_w /= 31;
  CHECK(expected_quantized_bias_error(kReluFreqs, signs, ramp) ==
        doctest::Approx(mean_w * expected_bias_msb_error(kReluFreqs, signs)).epsilon(1e-12));
}

TEST_CASE("measured weighted rate") {
  SaturationProfile p;
  p.k_sat = 17;
  p.bit_lo = 0;
  p.bit_hi = 30;
  std::map<int, double> flat;
  for (int k = 0; k <= 30; ++k) flat[k] = 0.42;
  CHECK(measured_weighted_rate(flat, p) == doctest::Approx(0.42));
  p.weighting = Weighting::LinearRamp;
  p.k_min = 5;
  CHECK(measured_weighted_rate(flat, p) == doctest::Approx(0.42));

  SaturationProfile step;
  step.k_sat = 17;
  step.bit_lo = 17;
  step.bit_hi = 30;
  std::map<int, double> steps;
  for (int k = 0; k <= 30; ++k) steps[k] = k >= 17 ? 1.0 : 0.0;
  CHECK(measured_weighted_rate(steps, step) == 1.0);

  SaturationProfile ramp;
  ramp.weighting = Weighting::LinearRamp;
  ramp.k_min = 4;
  ramp.k_sat = 12;
  ramp.bit_lo = 0;
  ramp.bit_hi = 15;
  std::map<int, double> rates;
  double num = 0, den = 0;
  for (int k = 0; k <= 15; ++k) {
    rates[k] = 0.01 * k * k;
    const double w = std::clamp((k - 4) / 8.0, 0.0, 1.0);
    num += w * rates[k];
    den += w;
  }
  CHECK(std::abs(measured_weighted_rate(rates, ramp) - num / den) <= 1e-12);

  rates.erase(13);
  CHECK_THROWS_AS(measured_weighted_rate(rates, ramp), ValidationError);
  SaturationProfile none;
  none.k_sat = 20;
  none.bit_lo = 0;
  none.bit_hi = 10;
  CHECK_THROWS_AS(measured_weighted_rate(flat, none), ValidationError);
}

TEST_CASE("IoU metrics") {
  ClassMap a{2, 4, {0, 1, 2, 3, 0, 1, 2, 3}};
  CHECK(giou(a, a, 4) == 100.0);
  CHECK(wiou(a, a, 4) == 100.0);

  ClassMap zeros{1, 4, {0, 0, 0, 0}}, ones{1, 4, {1, 1, 1, 1}};
  CHECK(giou(zeros, ones, 2) == 0.0);
  CHECK(wiou(zeros, ones, 2) == 0.0);

  ConfusionMatrix cm(2);
  cm.add(0, 0, 3);
  cm.add(0, 1, 1);
  cm.add(1, 0, 1);
  cm.add(1, 1, 3);
  auto r = cm.iou();
  CHECK(r.per_class_iou[0] == doctest::Approx(0.6));
  CHECK(r.per_class_iou[1] == doctest::Approx(0.6));
  CHECK(r.giou == doctest::Approx(60.0));
  CHECK(r.wiou == doctest::Approx(60.0));
  CHECK(cm.at(0, 1) == 1);

  ClassMap l{1, 8, {0, 0, 0, 0, 1, 1, 1, 1}}, p{1, 8, {0, 0, 0, 1, 0, 1, 1, 1}};
  CHECK(giou(l, p, 2) == doctest::Approx(60.0));
  CHECK(wiou(l, p, 2) == doctest::Approx(60.0));

  // Unequal per-class IoU: class 0 IoU 3/4, class 1 IoU 0; label freqs 0.8 / 0.2.
  ClassMap l2{1, 5, {0, 0, 0, 0, 1}}, p2{1, 5, {0, 0, 0, 1, 0}};
  CHECK(wiou(l2, p2, 3) == doctest::Approx(100 * 0.8 * 0.6));
  CHECK(giou(l2, p2, 3) == doctest::Approx(100.0 * 3 / 7));

  ConfusionMatrix empty(3);
  CHECK_THROWS(empty.iou());
  CHECK_THROWS_AS(giou(a, zeros, 4), ShapeError);
}
