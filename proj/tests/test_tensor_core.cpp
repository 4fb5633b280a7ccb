#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "doctest.h"
#include "seufi/error.hpp"
#include "seufi/kernels.hpp"
#include "seufi/random.hpp"
#include "test_support.hpp"

using namespace seufi;
using seufi::testing::random_f32;

namespace {

const float kNaN = std::numeric_limits<float>::quiet_NaN();
const float kInf = std::numeric_limits<float>::infinity();

// Nested-loop reference: zero padding, double accumulation.
std::vector<double> reference_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const long ic_n = static_cast<long>(x.dim(0)), ih = static_cast<long>(x.dim(1)), iw = static_cast<long>(x.dim(2));
  const long oc_n = static_cast<long>(w.dim(0)), kh = static_cast<long>(w.dim(2)), kw = static_cast<long>(w.dim(3));
  const long oh = (ih + 2 * pad - kh) / stride + 1, ow = (iw + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(oc_n * oh * ow));
  for (long oc = 0; oc < oc_n; ++oc)
    for (long oy = 0; oy < oh; ++oy)
      for (long ox = 0; ox < ow; ++ox) {
        double s = b.f32_data()[static_cast<std::size_t>(oc)];
        for (long ic = 0; ic < ic_n; ++ic)
          for (long ky = 0; ky < kh; ++ky)
            for (long kx = 0; kx < kw; ++kx) {
              const long iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
              const double xv = (iy < 0 || iy >= ih || ix < 0 || ix >= iw)
                                    ? 0.0
                                    : x.f32_data()[static_cast<std::size_t>((ic * ih + iy) * iw + ix)];
              s += xv * w.f32_data()[static_cast<std::size_t>(((oc * ic_n + ic) * kh + ky) * kw + kx)];
            }
        out[static_cast<std::size_t>((oc * oh + oy) * ow + ox)] = s;
      }
  return out;
}

ClassMap argmax_pixel(std::vector<float> logits) {
  const std::size_t c = logits.size();
  return argmax_classes(Tensor::f32({c, 1, 1}, std::move(logits)));
}

}  // namespace

TEST_CASE("conv2d scalar example") {
  auto out = conv2d(Tensor::f32({1, 1, 1}, {2.0f}), Tensor::f32({1, 1, 1, 1}, {3.0f}), Tensor::f32({1}, {1.0f}), 1, 0);
  REQUIRE(out.shape() == Shape{1, 1, 1});
  CHECK(out.f32_data()[0] == 7.0f);
}

TEST_CASE("conv2d with zero weights yields the bias everywhere") {
  auto x = random_f32({2, 5, 5}, 3);
  auto out = conv2d(x, Tensor::zeros({3, 2, 3, 3}), Tensor::f32({3}, {0.5f, -1.0f, 2.0f}), 1, 1);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 25; ++i) CHECK(out.f32_data()[c * 25 + i] == out.f32_data()[c * 25]);
  CHECK(out.f32_data()[0] == 0.5f);
  CHECK(out.f32_data()[25] == -1.0f);
  CHECK(out.f32_data()[50] == 2.0f);
}

TEST_CASE("conv2d matches nested-loop oracle") {
  struct Case { std::size_t ic, oc, h, w, k; int stride, pad; };
  const Case cases[] = {{2, 1, 5, 5, 3, 1, 0}, {2, 3, 5, 5, 3, 1, 1}, {3, 2, 8, 6, 3, 2, 1}, {1, 4, 7, 7, 1, 1, 0},
                        {4, 2, 6, 6, 5, 1, 2}};
  std::uint64_t seed = 10;
  for (const auto& c : cases) {
    auto x = random_f32({c.ic, c.h, c.w}, seed++);
    auto w = random_f32({c.oc, c.ic, c.k, c.k}, seed++);
    auto b = random_f32({c.oc}, seed++);
    auto got = conv2d(x, w, b, c.stride, c.pad);
    auto want = reference_conv(x, w, b, c.stride, c.pad);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(std::abs(got.f32_data()[i] - want[i]) <= 1e-6 * std::max(1.0, std::abs(want[i])));
    }
  }
}

TEST_CASE("conv2d shape errors") {
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 3, 1, 1}), Tensor::zeros({1}), 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({2, 2, 1, 1}), Tensor::zeros({3}), 1, 0), ShapeError);
}

TEST_CASE("batch_norm examples") {
  auto x = random_f32({2, 3, 3}, 5);
  auto ones = Tensor::f32({2}, {1, 1}), zeros = Tensor::zeros({2});
  CHECK(batch_norm(x, ones, zeros, zeros, ones, 0.0).bit_equal(x));

  auto y = batch_norm(Tensor::f32({1, 1, 1}, {3.0f}), Tensor::f32({1}, {2}), Tensor::f32({1}, {1}),
                      Tensor::f32({1}, {0}), Tensor::f32({1}, {1}), 0.0);
  CHECK(y.f32_data()[0] == 7.0f);

  CHECK_THROWS_AS(batch_norm(x, ones, zeros, zeros, Tensor::f32({2}, {1, -1}), 0.0), ValidationError);
  auto loose = batch_norm(x, ones, zeros, zeros, Tensor::f32({2}, {1, -1}), 0.0, false);
  CHECK(std::isnan(loose.f32_data()[9]));
}

TEST_CASE("batch_norm matches scalar-loop oracle") {
  const std::size_t c = 4, h = 5, w = 3;
  auto x = random_f32({c, h, w}, 21);
  auto g = random_f32({c}, 22, 0.5, 2.0), be = random_f32({c}, 23), m = random_f32({c}, 24),
       v = random_f32({c}, 25, 0.1, 3.0);
  const double eps = 1e-3;
  auto y = batch_norm(x, g, be, m, v, eps);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) {
      const double want = g.f32_data()[ch] * (x.f32_data()[ch * h * w + i] - m.f32_data()[ch]) /
                              std::sqrt(static_cast<double>(v.f32_data()[ch]) + eps) +
                          be.f32_data()[ch];
      CHECK(std::abs(y.f32_data()[ch * h * w + i] - want) <= 1e-6 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("activation examples") {
  CHECK(hard_sigmoid(-3.0f) == 0.0f);
  CHECK(hard_sigmoid(3.0f) == 1.0f);
  CHECK(hard_sigmoid(0.0f) == 0.5f);
  CHECK(hard_sigmoid(1.5f) == 0.75f);
  CHECK(hard_sigmoid(-10.0f) == 0.0f);
  CHECK(sigmoid(0.0f) == 0.5f);
  CHECK(relu(-2.0f) == 0.0f);
  CHECK(relu(1e30f) == 1e30f);
  for (auto kind : {ActivationKind::ReLU, ActivationKind::Sigmoid, ActivationKind::HardSigmoid}) {
    CHECK(std::isnan(apply_activation(kNaN, kind)));
  }
  CHECK(parse_activation("hard_sigmoid") == ActivationKind::HardSigmoid);
  CHECK_THROWS(parse_activation("tanh"));
}

TEST_CASE("bounded activations stay in range for finite inputs") {
  Rng rng(7);
  for (int i = 0; i < 20000; ++i) {
    const float x = static_cast<float>(rng.uniform(-50.0, 50.0));
    const float hs = hard_sigmoid(x), s = sigmoid(x);
    CHECK(hs >= 0.0f);
    CHECK(hs <= 1.0f);
    CHECK(s >= 0.0f);
    CHECK(s <= 1.0f);
    if (std::abs(x) < 10.0f) {
      CHECK(s > 0.0f);
      CHECK(s < 1.0f);
    }
  }
  CHECK(hard_sigmoid(kInf) == 1.0f);
  CHECK(hard_sigmoid(-kInf) == 0.0f);
  CHECK(relu(kInf) == kInf);
}

TEST_CASE("pool, upsample and concat") {
  auto p = max_pool2(Tensor::f32({1, 2, 2}, {1, 2, 3, 4}));
  REQUIRE(p.shape() == Shape{1, 1, 1});
  CHECK(p.f32_data()[0] == 4.0f);
  CHECK(std::isnan(max_pool2(Tensor::f32({1, 2, 2}, {1, kNaN, 3, 4})).f32_data()[0]));
  CHECK_THROWS(max_pool2(Tensor::zeros({1, 3, 2})));

  auto u = upsample2(Tensor::f32({1, 1, 1}, {5}));
  REQUIRE(u.shape() == Shape{1, 2, 2});
  for (float v : u.f32_data()) CHECK(v == 5.0f);

  auto a = random_f32({2, 3, 3}, 1), b = random_f32({3, 3, 3}, 2);
  auto c = concat_channels(a, b);
  REQUIRE(c.shape() == Shape{5, 3, 3});
  for (std::size_t i = 0; i < 18; ++i) CHECK(c.f32_data()[i] == a.f32_data()[i]);
  for (std::size_t i = 0; i < 27; ++i) CHECK(c.f32_data()[18 + i] == b.f32_data()[i]);
  CHECK_THROWS_AS(concat_channels(a, random_f32({1, 2, 3}, 3)), ShapeError);
}

TEST_CASE("argmax rules") {
  CHECK(argmax_pixel({0.1f, 0.9f, 0.5f}).labels[0] == 1);
  CHECK(argmax_pixel({kNaN, -5.0f, -7.0f}).labels[0] == 1);
  CHECK(argmax_pixel({2.0f, 2.0f, 1.0f}).labels[0] == 0);
  CHECK(argmax_pixel({kNaN, kNaN, kNaN}).labels[0] == 0);
  CHECK(argmax_pixel({kNaN, -kInf, kNaN}).labels[0] == 1);
  CHECK(argmax_pixel({1.0f, kInf, kNaN}).labels[0] == 1);
  CHECK_THROWS(argmax_classes(Tensor::zeros({0, 2, 2})));
}

TEST_CASE("argmax agrees with a scalar oracle on random logits with NaNs") {
  Rng rng(99);
  const std::size_t c = 5, p = 400;
  std::vector<float> logits(c * p);
  for (auto& v : logits) {
    const double r = rng.uniform();
    v = r < 0.15 ? kNaN : static_cast<float>(std::floor(rng.uniform(-3, 3)));
  }
  auto map = argmax_classes(Tensor::f32({c, 20, 20}, logits));
  for (std::size_t i = 0; i < p; ++i) {
    std::size_t best = 0;
    bool found = false;
    for (std::size_t k = 0; k < c; ++k) {
      const float v = logits[k * p + i];
      if (std::isnan(v)) continue;
      if (!found || v > logits[best * p + i]) {
        best = k;
        found = true;
      }
    }
    CHECK(map.labels[i] == best);
  }
}

TEST_CASE("integer helpers round half to even and saturate") {
  CHECK(saturate_i8(2.5) == 2);
  CHECK(saturate_i8(3.5) == 4);
  CHECK(saturate_i8(-2.5) == -2);
  CHECK(saturate_i8(1000.0) == 127);
  CHECK(saturate_i8(-1000.0) == -128);
  CHECK(saturate_i8(std::numeric_limits<double>::quiet_NaN()) == 0);
  CHECK(saturate_i32(std::int64_t{1} << 40) == INT32_MAX);
  CHECK(saturate_i32(-(std::int64_t{1} << 40)) == INT32_MIN);
  CHECK(quantize_i8(1.0, QuantParams{0.5, 3}) == 5);
}

TEST_CASE("integer conv saturates instead of wrapping") {
  const QuantParams in_q{0.1, 0}, w_q{0.01, 0}, out_q{0.05, -10};
  auto x = quantize_tensor(random_f32({2, 6, 6}, 41, -12.0, 12.0), in_q);
  std::vector<std::int8_t> w(2 * 2 * 3 * 3);
  Rng rng(42);
  for (auto& v : w) v = static_cast<std::int8_t>(static_cast<int>(rng.below(256)) - 128);
  auto wt = Tensor::i8({2, 2, 3, 3}, w, w_q);
  for (std::int32_t bias : {0, INT32_MAX, INT32_MIN, 1 << 20}) {
    auto b = Tensor::i32({2}, {bias, -bias / 2}, QuantParams{in_q.scale * w_q.scale, 0});
    auto y = conv2d(x, wt, b, 1, 1, out_q);
    REQUIRE(y.dtype() == DType::I8);
    for (auto v : y.i8_data()) {
      CHECK(v >= -128);
      CHECK(v <= 127);
    }
    if (bias == INT32_MAX) {
      for (std::size_t i = 0; i < 36; ++i) CHECK(y.i8_data()[i] == 127);
    }
  }
}

TEST_CASE("integer conv tracks the float conv") {
  auto xf = random_f32({3, 6, 6}, 51);
  auto wf = random_f32({2, 3, 3, 3}, 52, -0.5, 0.5);
  auto bf = random_f32({2}, 53, -0.2, 0.2);
  const QuantParams in_q{2.0 / 255, 0}, w_q{0.5 / 127, 0}, out_q{8.0 / 255, 0};
  std::vector<std::int8_t> wq;
  for (float v : wf.f32_data()) wq.push_back(saturate_i8(v / w_q.scale));
  std::vector<std::int32_t> bq;
  for (float v : bf.f32_data()) bq.push_back(static_cast<std::int32_t>(std::nearbyint(v / (in_q.scale * w_q.scale))));
  auto yi = conv2d(quantize_tensor(xf, in_q), Tensor::i8({2, 3, 3, 3}, wq, w_q),
                   Tensor::i32({2}, bq, QuantParams{in_q.scale * w_q.scale, 0}), 1, 1, out_q);
  auto yf = conv2d(xf, wf, bf, 1, 1);
  auto yd = dequantize_tensor(yi);
  for (std::size_t i = 0; i < yf.size(); ++i) CHECK(std::abs(yd.f32_data()[i] - yf.f32_data()[i]) < 0.1);
}

TEST_CASE("integer activation lookup table") {
  auto at = [](const std::array<std::int8_t, 256>& t, int q) { return t[static_cast<std::size_t>(q + 128)]; };
  const QuantParams q{0.05, 0};
  auto table = activation_table(ActivationKind::ReLU, q, q);
  CHECK(at(table, -20) == 0);
  CHECK(at(table, 20) == 20);
  const QuantParams out{1.0 / 255, -128};
  auto hs = activation_table(ActivationKind::HardSigmoid, QuantParams{0.1, 0}, out);
  CHECK(at(hs, -128) == -128);
  CHECK(at(hs, 127) == 127);
  CHECK(at(hs, 0) == 0);  // 127.5 - 128 rounds to even

  auto x = Tensor::i8({1, 1, 3}, {-20, 0, 20}, q);
  auto y = activation(x, ActivationKind::ReLU);
  CHECK(y.i8_data()[0] == 0);
  CHECK(y.i8_data()[2] == 20);
}

TEST_CASE("quantize/dequantize round trip stays within half a step") {
  auto x = random_f32({2, 4, 4}, 61, -3.0, 3.0);
  const QuantParams q{6.0 / 255, 0};
  auto back = dequantize_tensor(quantize_tensor(x, q));
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(back.f32_data()[i] - x.f32_data()[i]) <= q.scale / 2 + 1e-6);
  }
}

TEST_CASE("tensor bits and equality") {
  auto t = Tensor::f32({2}, {1.0f, -0.0f});
  CHECK(t.raw_bits(0) == 0x3F800000u);
  CHECK(t.raw_bits(1) == 0x80000000u);
  auto u = t;
  u.set_raw_bits(1, 0);
  CHECK_FALSE(u.bit_equal(t));
  auto i = Tensor::i8({1}, {-1}, QuantParams{0.5, 0});
  CHECK(i.raw_bits(0) == 0xFFu);
  CHECK(i.real_at(0) == -0.5);
  CHECK_THROWS(Tensor::f32({3}, {1.0f}));
  CHECK(element_count({2, 3, 4}) == 24);
}

TEST_CASE("kernels are deterministic") {
  auto x = random_f32({3, 8, 8}, 71);
  auto w = random_f32({4, 3, 3, 3}, 72);
  auto b = random_f32({4}, 73);
  CHECK(conv2d(x, w, b, 1, 1).bit_equal(conv2d(x, w, b, 1, 1)));
  CHECK(random_f32({3}, 5).bit_equal(random_f32({3}, 5)));
  CHECK(synthetic_input(3, 16, 16, 9).bit_equal(synthetic_input(3, 16, 16, 9)));
  CHECK_FALSE(synthetic_input(3, 16, 16, 9).bit_equal(synthetic_input(3, 16, 16, 10)));
}
