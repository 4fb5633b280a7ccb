#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "seufi/campaign.hpp"
#include "seufi/campaign_io.hpp"
#include "seufi/error.hpp"
#include "seufi/error_model.hpp"
#include "seufi/zoo.hpp"
#include "test_support.hpp"

using namespace seufi;
using seufi::testing::random_f32;

namespace {

// Exact rational form of the sample-size formula with e, t, p given as
// e = en/ed, t = tn/td, p = 1/2: n = N / (1 + e^2 (N-1) / (t^2 p(1-p))).
// With defaults: n = N * tn^2 * ed^2 / (tn^2 * ed^2 + 4 * en^2 * td^2 * (N - 1)).
std::uint64_t oracle_sample_size(std::uint64_t n_faults, std::uint64_t cap = 1550) {
  const unsigned __int128 tn = 196, td = 100, en = 25, ed = 1000;
  const unsigned __int128 a = tn * tn * ed * ed;
  const unsigned __int128 b = 4 * en * en * td * td * (n_faults - 1);
  const unsigned __int128 num = static_cast<unsigned __int128>(n_faults) * a, den = a + b;
  const auto n = static_cast<std::uint64_t>((num + den - 1) / den);
  return std::min({n, cap, n_faults});
}

ModelGraph one_param_model() {
  GraphBuilder b(1, 1);
  b.conv(GraphBuilder::input(), Tensor::f32({1, 1, 1, 1}, {0.75f}), Tensor::f32({1}, {0.0f}));
  auto m = std::move(b).finish();
  return m;
}

ClassMap map_of(std::size_t h, std::size_t w, std::vector<std::uint16_t> labels) {
  return ClassMap{h, w, std::move(labels)};
}

CampaignConfig small_config(const ModelGraph& m, std::uint64_t seed) {
  CampaignConfig c;
  c.seed = seed;
  c.cap = 40;
  c.inputs = {synthetic_input(m.n_input_channels, 16, 16, seed + 1), synthetic_input(m.n_input_channels, 16, 16, seed + 2)};
  return c;
}

}  // namespace

TEST_CASE("sample size examples") {
  CHECK(sample_size(1) == 1);
  CHECK(sample_size(1000) == 607);  // 1000 / 1.650120 = 606.017
  CHECK(sample_size(1000000) == 1535);
  CHECK(sample_size(384) == 308);
  CHECK(sample_size(std::uint64_t{1} << 60, 0.025, 1.96, 0.5, 1u << 30) == 1537);
  CHECK(sample_size(5, 0.025, 1.96, 0.5, 2) == 2);
}

TEST_CASE("sample size agrees with an exact integer oracle") {
  std::uint64_t prev = 0;
  for (std::uint64_t n = 1; n <= 200000; n += (n < 5000 ? 1 : 97)) {
    const auto s = sample_size(n);
    CHECK(s == oracle_sample_size(n));
    CHECK(s <= n);
    CHECK(s <= 1550);
    CHECK(s >= prev);
    prev = s;
  }
  CHECK_THROWS_AS(sample_size(100, 0.0), ValidationError);
  CHECK_THROWS_AS(sample_size(100, 0.025, 1.96, 1.5), ValidationError);
}

TEST_CASE("plan follows the fault space") {
  auto m = build_unet(1, 4, 3, 4, ActivationKind::ReLU, 0);
  CampaignConfig c;
  auto p = plan(m, c);
  auto space = enumerate_fault_space(m, c.filter());
  REQUIRE(p.layers.size() == space.layers.size());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    CHECK(p.layers[i].fault_space == space.layers[i].total);
    CHECK(p.layers[i].injections == sample_size(space.layers[i].total));
  }
  CHECK(p.total_fault_space() == space.total());

  c.cap = 10;
  for (const auto& l : plan(m, c).layers) CHECK(l.injections <= 10);

  c.included_kinds.clear();
  CHECK_THROWS_AS(plan(m, c), ValidationError);

  CampaignConfig only_bias;
  only_bias.included_kinds = {ParamKind::ConvBias};
  only_bias.bits = {30};
  only_bias.layers = {m.output_id()};
  auto pb = plan(m, only_bias);
  REQUIRE(pb.layers.size() == 1);
  CHECK(pb.layers[0].fault_space == 4);
  CHECK(pb.layers[0].injections == 4);
}

TEST_CASE("plan on a 12-parameter layer") {
  GraphBuilder b(5, 2);
  b.conv(GraphBuilder::input(), random_f32({2, 5, 1, 1}, 1), random_f32({2}, 2));
  auto m = std::move(b).finish();
  CampaignConfig c;
  c.included_kinds = all_param_kinds();
  auto p = plan(m, c);
  REQUIRE(p.layers.size() == 1);
  CHECK(p.layers[0].fault_space == 384);
  CHECK(p.layers[0].injections == 308);
}

TEST_CASE("sampling is distinct, sorted and inside the space") {
  auto m = build_unet(1, 4, 3, 4, ActivationKind::ReLU, 3);
  auto space = enumerate_fault_space(m, all_param_kinds());
  for (auto s : {Sampling::UniformLayer, Sampling::StratifiedPerBit}) {
    for (const auto& layer : space.layers) {
      const auto n = std::min<std::uint64_t>(layer.total, 200);
      auto locs = sample_locations(layer, n, s, 42);
      CHECK(locs.size() == n);
      CHECK(std::is_sorted(locs.begin(), locs.end()));
      CHECK(std::set<FaultLocation>(locs.begin(), locs.end()).size() == locs.size());
      for (const auto& l : locs) CHECK(layer.contains(l));
      CHECK(sample_locations(layer, n, s, 42) == locs);
    }
  }
  const auto& layer = space.layers[0];
  CHECK(sample_locations(layer, 50, Sampling::UniformLayer, 1) != sample_locations(layer, 50, Sampling::UniformLayer, 2));
  CHECK(sample_locations(layer, layer.total, Sampling::UniformLayer, 9).size() == layer.total);
  CHECK_THROWS(sample_locations(layer, layer.total + 1, Sampling::UniformLayer, 9));
}

TEST_CASE("stratified sampling spreads evenly over bits") {
  auto m = build_unet(1, 4, 3, 4, ActivationKind::ReLU, 3);
  FaultSpaceFilter f;
  f.kinds = {ParamKind::ConvWeight};
  auto space = enumerate_fault_space(m, f);
  const auto& layer = space.layers[1];
  auto locs = sample_locations(layer, 320, Sampling::StratifiedPerBit, 5);
  std::vector<int> per_bit(32, 0);
  for (const auto& l : locs) ++per_bit[static_cast<std::size_t>(l.bit)];
  for (int c : per_bit) CHECK(c == 10);

  auto odd = sample_locations(layer, 70, Sampling::StratifiedPerBit, 5);
  std::fill(per_bit.begin(), per_bit.end(), 0);
  for (const auto& l : odd) ++per_bit[static_cast<std::size_t>(l.bit)];
  for (int c : per_bit) {
    CHECK(c >= 2);
    CHECK(c <= 3);
  }
}

TEST_CASE("pixel mismatch examples") {
  auto a = map_of(3, 4, {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2});
  CHECK(pixel_mismatch_rate(a, a) == 0.0);
  auto b = a;
  b.labels[0] = 1;
  b.labels[5] = 0;
  b.labels[11] = 1;
  CHECK(pixel_mismatch_rate(a, b) == 0.25);
  auto zeros = map_of(2, 2, {0, 0, 0, 0}), ones = map_of(2, 2, {1, 1, 1, 1});
  CHECK(pixel_mismatch_rate(zeros, ones) == 1.0);
  CHECK_THROWS_AS(pixel_mismatch_rate(zeros, a), ShapeError);
}

TEST_CASE("golden runs are repeatable and cached") {
  auto m = build_unet(1, 4, 3, 4, ActivationKind::Sigmoid, 6);
  auto in = synthetic_input(3, 16, 16, 1);
  CHECK(golden_run(m, in) == golden_run(m, in));
  GoldenCache cache;
  const auto& g = cache.get(m, in, 0);
  CHECK(&cache.get(m, in, 0) == &g);
  CHECK(cache.size() == 1);
  cache.get(m, synthetic_input(3, 16, 16, 2), 1);
  CHECK(cache.size() == 2);
  CHECK_THROWS_AS(golden_run(m, synthetic_input(2, 16, 16, 1)), ShapeError);
}

TEST_CASE("aggregate examples") {
  auto rec = [](int layer, int bit, double r) {
    InjectionRecord x;
    x.location = FaultLocation{layer, ParamKind::ConvWeight, 0, bit};
    x.error_rate = r;
    return x;
  };
  std::vector<InjectionRecord> rs{rec(1, 30, 0), rec(1, 30, 0), rec(1, 30, 1)};
  auto m = aggregate(rs);
  const auto* c = m.cell(1, 30);
  REQUIRE(c != nullptr);
  CHECK(c->mean == doctest::Approx(1.0 / 3));
  CHECK(c->mean_nonzero == 1.0);
  CHECK(c->count_nonzero == 1);
  CHECK(c->std == doctest::Approx(std::sqrt(2.0) / 3));

  std::vector<InjectionRecord> zeros{rec(2, 3, 0), rec(2, 3, 0)};
  auto z = aggregate(zeros);
  CHECK(z.cell(2, 3)->mean_nonzero == 0.0);
  CHECK(z.cell(2, 3)->count_nonzero == 0);

  std::vector<InjectionRecord> one{rec(4, 7, 0.375)};
  auto s = aggregate(one);
  CHECK(s.cell(4, 7)->mean == 0.375);
  CHECK(s.cell(4, 7)->std == 0.0);
  CHECK(s.cell(4, 8) == nullptr);

  std::vector<InjectionRecord> mixed{rec(1, 2, 0.5), rec(3, 2, 0.25), rec(1, 5, 0.0)};
  auto g = aggregate(mixed);
  CHECK(g.layer_ids() == std::vector<int>{1, 3});
  CHECK(g.global.count == 3);
  CHECK(g.global.mean == doctest::Approx(0.25));
  CHECK_THROWS_AS(aggregate(std::vector<InjectionRecord>{}), ValidationError);
}

TEST_CASE("exhaustive campaign on a one-parameter model") {
  auto m = one_param_model();
  CampaignConfig c;
  c.included_kinds = {ParamKind::ConvWeight};
  c.inputs = {synthetic_input(1, 4, 4, 0)};
  auto p = plan(m, c);
  REQUIRE(p.layers.size() == 1);
  CHECK(p.layers[0].injections == 32);
  auto r = run_campaign(m, c, 1);
  REQUIRE(r.records.size() == 32);
  std::set<int> bits;
  for (const auto& rec : r.records) bits.insert(rec.location.bit);
  CHECK(bits.size() == 32);
  CHECK(*bits.begin() == 0);
  CHECK(*bits.rbegin() == 31);
}

TEST_CASE("campaign records are consistent and reproducible") {
  auto m = build_unet(1, 4, 3, 4, ActivationKind::ReLU, 2);
  auto c = small_config(m, 11);
  auto a = run_campaign(m, c, 1);
  auto b = run_campaign(m, c, 1);
  CHECK(a.records == b.records);
  CHECK(a.records.size() == a.plan.total_injections());
  auto space = enumerate_fault_space(m, c.filter());
  std::set<FaultLocation> seen;
  for (const auto& r : a.records) {
    const auto* layer = space.find(r.location.layer_id);
    REQUIRE(layer != nullptr);
    CHECK(layer->contains(r.location));
    CHECK(seen.insert(r.location).second);
    CHECK((r.pre_bits ^ r.post_bits) == (1u << r.location.bit));
    CHECK(r.error_rate >= 0.0);
    CHECK(r.error_rate <= 1.0);
    CHECK(r.input_id < c.inputs.size());
  }
  for (const auto& [key, cell] : a.matrix.cells) {
    CHECK(cell.mean >= 0.0);
    CHECK(cell.mean <= 1.0);
  }
  c.seed = 12;
  CHECK(run_campaign(m, c, 1).records != a.records);
}

TEST_CASE("serial and parallel campaigns are identical") {
  auto m = build_unet(1, 4, 3, 4, ActivationKind::HardSigmoid, 5);
  auto c = small_config(m, 3);
  auto serial = run_campaign(m, c, 1);
  for (unsigned jobs : {2u, 4u, 8u}) {
    auto par = run_campaign(m, c, jobs);
    CHECK(par.records == serial.records);
    CHECK(format_matrix_csv(matrix_rows(par.matrix)) == format_matrix_csv(matrix_rows(serial.matrix)));
  }
  c.input_mode = InputMode::All;
  auto all = run_campaign(m, c, 4);
  CHECK(all.records.size() == 2 * all.plan.total_injections());
  CHECK(run_campaign(m, c, 1).records == all.records);
}

TEST_CASE("probe campaign on final biases matches the closed form") {
  const std::vector<float> biases{-0.85f, 0.32f, -0.03f, 0.04f, -0.17f, 0.11f};
  std::vector<double> freqs{0, .4491, .0441, .2695, .0747, .1627};
  double s = 0;
  for (double f : freqs) s += f;
  for (auto& f : freqs) f /= s;
  auto probe = build_bias_probe_model(biases, freqs, 4);
  CampaignConfig c;
  c.included_kinds = {ParamKind::ConvBias};
  c.bits = {30};
  c.layers = {probe.model.output_id()};
  c.inputs = {probe.input};
  auto r = run_campaign(probe.model, c, 2);
  const double analytic = expected_bias_msb_error(class_frequencies(probe.template_map, 6), bias_signs(biases));
  CHECK(std::abs(r.matrix.global.mean - analytic) <= c.e);
}

TEST_CASE("records and matrix CSV round-trip") {
  auto m = build_unet(1, 4, 3, 4, ActivationKind::ReLU, 8);
  auto r = run_campaign(m, small_config(m, 1), 2);
  const auto text = format_records_csv(r.records);
  CHECK(text.rfind(std::string(kRecordsHeader), 0) == 0);
  CHECK(parse_records_csv(text) == r.records);
  CHECK(format_records_csv(parse_records_csv(text)) == text);
  auto rows = matrix_rows(r.matrix);
  CHECK(parse_matrix_csv(format_matrix_csv(rows)) == rows);

  InjectionRecord odd;
  odd.location = FaultLocation{3, ParamKind::BNVar, 17, 31};
  odd.pre_bits = 0x3F800000u;
  odd.post_bits = 0xBF800000u;
  odd.field = BitField::Sign;
  odd.error_rate = 0.1 + 0.2;
  std::vector<InjectionRecord> one{odd};
  CHECK(parse_records_csv(format_records_csv(one)) == one);
}

TEST_CASE("CSV schema violations carry line numbers") {
  const std::string header(kRecordsHeader);
  try {
    parse_records_csv(header + "\n1,conv_weight,0,3,0to1,mantissa,0x00000000,0x00000008,finite,0,0\n1,conv_weight,0\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_records_csv("layer_id,kind\n"), ParseError);
  try {
    parse_matrix_csv(std::string(kMatrixHeader) + "\n1,30,2,1.5,0,0,0\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("campaign config parsing") {
  auto f = parse_campaign_config(
      "# probe campaign\n"
      "e = 0.05\n"
      "cap = 100   # small\n"
      "included_kinds = conv_bias, conv_weight\n"
      "sampling = stratified_per_bit\n"
      "seed = 9\n"
      "bits = 0, 23-25, 30\n"
      "layers = 4\n"
      "inputs = synthetic:3:32x16, file:in.tensor\n"
      "input_mode = all\n");
  CHECK(f.config.e == 0.05);
  CHECK(f.config.cap == 100);
  CHECK(f.config.included_kinds == KindSet{ParamKind::ConvBias, ParamKind::ConvWeight});
  CHECK(f.config.sampling == Sampling::StratifiedPerBit);
  CHECK(f.config.seed == 9);
  CHECK(f.config.bits == std::set<int>{0, 23, 24, 25, 30});
  CHECK(f.config.layers == std::set<int>{4});
  CHECK(f.config.input_mode == InputMode::All);
  REQUIRE(f.inputs.size() == 2);
  CHECK(f.inputs[0] == InputSpec{InputSpec::Kind::Synthetic, 3, 32, 16, ""});
  CHECK(f.inputs[1].path == "in.tensor");

  auto again = parse_campaign_config(format_campaign_config(f));
  CHECK(again.inputs == f.inputs);
  CHECK(again.config.bits == f.config.bits);
  CHECK(again.config.e == f.config.e);

  auto line_of = [](const std::string& text) {
    try {
      parse_campaign_config(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return -1;
  };
  CHECK(line_of("e = 0.05\n\nfoo = 1\n") == 3);
  CHECK(line_of("seed = 1\nseed = 2\n") == 2);
  CHECK(line_of("cap = ten\n") == 1);
  CHECK(line_of("\n# x\nbits = 30-23\n") == 3);
  CHECK(line_of("sampling\n") == 1);
  CHECK(line_of("included_kinds = conv_weight, gamma\n") == 1);
  CHECK_THROWS_AS(parse_campaign_config("e = 2\n"), ParseError);
}

TEST_CASE("input specs") {
  CHECK(parse_input_spec("synthetic:7:64x32") == InputSpec{InputSpec::Kind::Synthetic, 7, 64, 32, ""});
  CHECK(to_string(parse_input_spec("synthetic:7:64x32")) == "synthetic:7:64x32");
  CHECK_THROWS(parse_input_spec("synthetic:7"));
  CHECK_THROWS(parse_input_spec("camera:1"));
  auto m = build_unet(1, 2, 3, 2, ActivationKind::ReLU, 0);
  const InputSpec specs[] = {parse_input_spec("synthetic:1:8x8")};
  auto ins = resolve_inputs(specs, m);
  REQUIRE(ins.size() == 1);
  CHECK(ins[0].bit_equal(synthetic_input(3, 8, 8, 1)));
}

TEST_CASE("prediction comparison") {
  PredictionReport rep;
  rep.profile = SaturationProfile::relu_preset();
  rep.entries.push_back(PredictionEntry{"fp32_msb", 4, {30}, {1.0}, 37.29});
  std::vector<MatrixRow> rows{{4, 30, 10, 0.34, 0.1, 0.5, 1.0}, {4, 12, 10, 0.0, 0.0, 0.0, 0.0}};
  auto cmp = compare_prediction(rep, rows, 2.5);
  REQUIRE(cmp.size() == 1);
  CHECK(cmp[0].measured == doctest::Approx(34.0));
  CHECK(cmp[0].deviation == doctest::Approx(3.29));
  CHECK(cmp[0].flagged);

  rows[0].mean = 0.3729;
  auto same = compare_prediction(rep, rows, 2.5);
  CHECK(same[0].deviation == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_FALSE(same[0].flagged);

  std::vector<MatrixRow> elsewhere{{2, 30, 10, 0.5, 0, 0.5, 0.5}};
  CHECK_THROWS_AS(compare_prediction(rep, elsewhere, 2.5), ValidationError);

  auto json = prediction_to_json(rep);
  CHECK(prediction_from_json(json) == rep);
  CHECK_THROWS_AS(prediction_from_json("{not json"), ParseError);
}
