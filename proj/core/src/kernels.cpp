#include "seufi/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "seufi/error.hpp"

namespace seufi {

std::string_view to_string(ActivationKind kind) noexcept {
  switch (kind) {
    case ActivationKind::ReLU:
      return "relu";
    case ActivationKind::Sigmoid:
      return "sigmoid";
    case ActivationKind::HardSigmoid:
      return "hard_sigmoid";
  }
  return "?";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "relu") return ActivationKind::ReLU;
  if (name == "sigmoid" || name == "sig") return ActivationKind::Sigmoid;
  if (name == "hard_sigmoid" || name == "hsig") return ActivationKind::HardSigmoid;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

float relu(float x) noexcept {
  if (std::isnan(x)) return x;
  return x > 0.0f ? x : 0.0f;
}

float sigmoid(float x) noexcept { return 1.0f / (1.0f + std::exp(-x)); }

float hard_sigmoid(float x) noexcept {
  if (x <= -3.0f) return 0.0f;
  if (x >= 3.0f) return 1.0f;
  return x / 6.0f + 0.5f;
}

float apply_activation(float x, ActivationKind kind) noexcept {
  switch (kind) {
    case ActivationKind::ReLU:
      return relu(x);
    case ActivationKind::Sigmoid:
      return sigmoid(x);
    case ActivationKind::HardSigmoid:
      return hard_sigmoid(x);
  }
  return x;
}

std::int8_t saturate_i8(double value) noexcept {
  if (std::isnan(value)) return 0;
  // nearbyint honours the default FE_TONEAREST mode: ties go to even.
  const double r = std::nearbyint(value);
  return static_cast<std::int8_t>(std::clamp(r, -128.0, 127.0));
}

std::int8_t quantize_i8(double real, const QuantParams& q) noexcept {
  return saturate_i8(real / q.scale + q.zero_point);
}

std::int32_t saturate_i32(std::int64_t value) noexcept {
  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  return static_cast<std::int32_t>(std::clamp(value, lo, hi));
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + " must be rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

std::size_t conv_out_dim(std::size_t in, std::size_t k, int stride, int padding) {
  const auto padded = static_cast<long long>(in) + 2LL * padding;
  if (padded < static_cast<long long>(k)) throw ShapeError("kernel larger than padded input");
  return static_cast<std::size_t>((padded - static_cast<long long>(k)) / stride + 1);
}

Tensor conv2d_f32(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                  int padding, std::size_t oh, std::size_t ow) {
  const auto ic_n = input.dim(0), ih = input.dim(1), iw = input.dim(2);
  const auto oc_n = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const auto x = input.f32_data();
  const auto w = weight.f32_data();
  const auto b = bias.f32_data();
  std::vector<float> out(oc_n * oh * ow);
  std::vector<double> acc(oh * ow);

  for (std::size_t oc = 0; oc < oc_n; ++oc) {
    std::fill(acc.begin(), acc.end(), static_cast<double>(b[oc]));
    for (std::size_t ic = 0; ic < ic_n; ++ic) {
      const float* in_plane = x.data() + ic * ih * iw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double wv = w[((oc * ic_n + ic) * kh + ky) * kw + kx];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long long iy = static_cast<long long>(oy) * stride + static_cast<long long>(ky) - padding;
            if (iy < 0 || iy >= static_cast<long long>(ih)) continue;
            const float* row = in_plane + static_cast<std::size_t>(iy) * iw;
            double* arow = acc.data() + oy * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long long ix = static_cast<long long>(ox) * stride + static_cast<long long>(kx) - padding;
              if (ix < 0 || ix >= static_cast<long long>(iw)) continue;
              arow[ox] += wv * row[ix];
            }
          }
        }
      }
    }
    float* plane = out.data() + oc * oh * ow;
    for (std::size_t i = 0; i < oh * ow; ++i) plane[i] = static_cast<float>(acc[i]);
  }
  return Tensor::f32({oc_n, oh, ow}, std::move(out));
}

Tensor conv2d_i8(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                 int padding, std::size_t oh, std::size_t ow, const QuantParams& out_q) {
  const auto ic_n = input.dim(0), ih = input.dim(1), iw = input.dim(2);
  const auto oc_n = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const auto& in_q = *input.quant();
  const auto& w_q = *weight.quant();
  if (w_q.zero_point != 0) throw ValidationError("i8 conv weights must be symmetric (zero point 0)");
  const double acc_scale = in_q.scale * w_q.scale;
  if (std::abs(bias.quant()->scale - acc_scale) > 1e-6 * acc_scale) {
    throw ValidationError("i32 bias scale must equal input_scale * weight_scale");
  }
  const auto x = input.i8_data();
  const auto w = weight.i8_data();
  const auto b = bias.i32_data();
  const double multiplier = acc_scale / out_q.scale;
  const std::int64_t zx = in_q.zero_point;

  std::vector<std::int64_t> acc(oh * ow);
  std::vector<std::int8_t> out(oc_n * oh * ow);
  for (std::size_t oc = 0; oc < oc_n; ++oc) {
    std::fill(acc.begin(), acc.end(), static_cast<std::int64_t>(b[oc]));
    for (std::size_t ic = 0; ic < ic_n; ++ic) {
      const std::int8_t* in_plane = x.data() + ic * ih * iw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::int64_t wv = w[((oc * ic_n + ic) * kh + ky) * kw + kx];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long long iy = static_cast<long long>(oy) * stride + static_cast<long long>(ky) - padding;
            if (iy < 0 || iy >= static_cast<long long>(ih)) continue;
            const std::int8_t* row = in_plane + static_cast<std::size_t>(iy) * iw;
            std::int64_t* arow = acc.data() + oy * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long long ix = static_cast<long long>(ox) * stride + static_cast<long long>(kx) - padding;
              if (ix < 0 || ix >= static_cast<long long>(iw)) continue;
              arow[ox] += wv * (static_cast<std::int64_t>(row[ix]) - zx);
            }
          }
        }
      }
    }
    std::int8_t* plane = out.data() + oc * oh * ow;
    for (std::size_t i = 0; i < oh * ow; ++i) {
      const double real = static_cast<double>(saturate_i32(acc[i])) * multiplier;
      plane[i] = saturate_i8(real + out_q.zero_point);
    }
  }
  return Tensor::i8({oc_n, oh, ow}, std::move(out), out_q);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding, std::optional<QuantParams> output_quant) {
  require_rank(input, 3, "conv input");
  require_rank(weight, 4, "conv weight");
  require_rank(bias, 1, "conv bias");
  if (stride < 1 || padding < 0) throw ValidationError("conv stride must be >= 1 and padding >= 0");
  if (weight.dim(1) != input.dim(0)) {
    throw ShapeError("conv weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(input.dim(0)));
  }
  if (bias.dim(0) != weight.dim(0)) throw ShapeError("conv bias length must equal output channels");
  const auto oh = conv_out_dim(input.dim(1), weight.dim(2), stride, padding);
  const auto ow = conv_out_dim(input.dim(2), weight.dim(3), stride, padding);

  if (input.dtype() == DType::F32 && weight.dtype() == DType::F32 && bias.dtype() == DType::F32) {
    return conv2d_f32(input, weight, bias, stride, padding, oh, ow);
  }
  if (input.dtype() == DType::I8 && weight.dtype() == DType::I8 && bias.dtype() == DType::I32) {
    if (!output_quant) throw ValidationError("integer conv requires output QuantParams");
    return conv2d_i8(input, weight, bias, stride, padding, oh, ow, *output_quant);
  }
  throw ValidationError("conv dtypes must be all f32, or i8 input/weight with i32 bias");
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  const Tensor& mean, const Tensor& var, double eps, bool strict) {
  require_rank(input, 3, "batch-norm input");
  const auto c_n = input.dim(0);
  for (const Tensor* p : {&gamma, &beta, &mean, &var}) {
    if (p->rank() != 1 || p->dim(0) != c_n) {
      throw ShapeError("batch-norm parameters must have one entry per channel");
    }
  }
  const auto x = input.f32_data();
  const auto g = gamma.f32_data(), bt = beta.f32_data(), mu = mean.f32_data(), v = var.f32_data();
  const auto plane = input.dim(1) * input.dim(2);
  std::vector<float> out(x.size());
  for (std::size_t c = 0; c < c_n; ++c) {
    const double denom = static_cast<double>(v[c]) + eps;
    if (strict && !(denom > 0.0)) throw ValidationError("batch-norm var + eps must be positive");
    const float inv_std = static_cast<float>(1.0 / std::sqrt(denom));
    for (std::size_t i = 0; i < plane; ++i) {
      const auto idx = c * plane + i;
      out[idx] = g[c] * ((x[idx] - mu[c]) * inv_std) + bt[c];
    }
  }
  return Tensor::f32(input.shape(), std::move(out));
}

std::array<std::int8_t, 256> activation_table(ActivationKind kind, const QuantParams& in,
                                              const QuantParams& out) {
  std::array<std::int8_t, 256> table{};
  for (int q = -128; q <= 127; ++q) {
    const double x = in.scale * (q - in.zero_point);
    double y = 0.0;
    switch (kind) {
      case ActivationKind::ReLU:
        y = x > 0.0 ? x : 0.0;
        break;
      case ActivationKind::Sigmoid:
        y = 1.0 / (1.0 + std::exp(-x));
        break;
      case ActivationKind::HardSigmoid:
        y = x <= -3.0 ? 0.0 : (x >= 3.0 ? 1.0 : x / 6.0 + 0.5);
        break;
    }
    table[static_cast<std::size_t>(q + 128)] = quantize_i8(y, out);
  }
  return table;
}

Tensor activation(const Tensor& input, ActivationKind kind, std::optional<QuantParams> output_quant) {
  if (input.dtype() == DType::F32) {
    const auto x = input.f32_data();
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = apply_activation(x[i], kind);
    return Tensor::f32(input.shape(), std::move(out));
  }
  if (input.dtype() != DType::I8) throw ValidationError("integer activation expects i8 input");
  const auto out_q = output_quant.value_or(*input.quant());
  const auto table = activation_table(kind, *input.quant(), out_q);
  const auto x = input.i8_data();
  std::vector<std::int8_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = table[static_cast<std::size_t>(x[i] + 128)];
  return Tensor::i8(input.shape(), std::move(out), out_q);
}

namespace {

template <typename T>
std::vector<T> pool_plane_data(std::span<const T> x, std::size_t c_n, std::size_t h, std::size_t w) {
  const auto oh = h / 2, ow = w / 2;
  std::vector<T> out(c_n * oh * ow);
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t base = c * h * w + 2 * oy * w + 2 * ox;
        const T v[4] = {x[base], x[base + 1], x[base + w], x[base + w + 1]};
        T m = v[0];
        for (int k = 1; k < 4; ++k) {
          if constexpr (std::is_floating_point_v<T>) {
            if (std::isnan(m)) break;
            if (std::isnan(v[k]) || v[k] > m) m = v[k];
          } else {
            m = std::max(m, v[k]);
          }
        }
        out[c * oh * ow + oy * ow + ox] = m;
      }
    }
  }
  return out;
}

template <typename T>
std::vector<T> upsample_plane_data(std::span<const T> x, std::size_t c_n, std::size_t h, std::size_t w) {
  const auto oh = h * 2, ow = w * 2;
  std::vector<T> out(c_n * oh * ow);
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        out[c * oh * ow + oy * ow + ox] = x[c * h * w + (oy / 2) * w + ox / 2];
      }
    }
  }
  return out;
}

}  // namespace

Tensor max_pool2(const Tensor& input) {
  require_rank(input, 3, "pool input");
  const auto c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 || w % 2) throw ShapeError("max_pool2 needs even spatial dims, got " + shape_string(input.shape()));
  if (input.dtype() == DType::F32) {
    return Tensor::f32({c, h / 2, w / 2}, pool_plane_data(input.f32_data(), c, h, w));
  }
  if (input.dtype() == DType::I8) {
    return Tensor::i8({c, h / 2, w / 2}, pool_plane_data(input.i8_data(), c, h, w), *input.quant());
  }
  throw ValidationError("max_pool2 supports f32 and i8");
}

Tensor upsample2(const Tensor& input) {
  require_rank(input, 3, "upsample input");
  const auto c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (input.dtype() == DType::F32) {
    return Tensor::f32({c, h * 2, w * 2}, upsample_plane_data(input.f32_data(), c, h, w));
  }
  if (input.dtype() == DType::I8) {
    return Tensor::i8({c, h * 2, w * 2}, upsample_plane_data(input.i8_data(), c, h, w), *input.quant());
  }
  throw ValidationError("upsample2 supports f32 and i8");
}

Tensor concat_channels(const Tensor& a, const Tensor& b, std::optional<QuantParams> output_quant) {
  require_rank(a, 3, "concat input");
  require_rank(b, 3, "concat input");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat spatial dims differ: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  if (a.dtype() != b.dtype()) throw ValidationError("concat inputs must share a dtype");
  Shape shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2)};
  if (a.dtype() == DType::F32) {
    std::vector<float> out(a.f32_data().begin(), a.f32_data().end());
    out.insert(out.end(), b.f32_data().begin(), b.f32_data().end());
    return Tensor::f32(std::move(shape), std::move(out));
  }
  if (a.dtype() != DType::I8) throw ValidationError("concat supports f32 and i8");
  const auto out_q = output_quant.value_or(*a.quant());
  std::vector<std::int8_t> out;
  out.reserve(a.size() + b.size());
  for (const Tensor* t : {&a, &b}) {
    const auto& q = *t->quant();
    if (q == out_q) {
      out.insert(out.end(), t->i8_data().begin(), t->i8_data().end());
    } else {
      for (auto v : t->i8_data()) out.push_back(quantize_i8(q.scale * (v - q.zero_point), out_q));
    }
  }
  return Tensor::i8(std::move(shape), std::move(out), out_q);
}

Tensor quantize_tensor(const Tensor& input, const QuantParams& q) {
  const auto x = input.f32_data();
  std::vector<std::int8_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = quantize_i8(x[i], q);
  return Tensor::i8(input.shape(), std::move(out), q);
}

Tensor dequantize_tensor(const Tensor& input) {
  if (input.dtype() == DType::F32) return input;
  std::vector<float> out(input.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(input.real_at(i));
  return Tensor::f32(input.shape(), std::move(out));
}

namespace {

// True when a should win over b in the argmax order (NaN lowest).
inline bool ranks_above(float a, float b) noexcept {
  if (std::isnan(a)) return false;
  if (std::isnan(b)) return true;
  return a > b;
}

}  // namespace

ClassMap argmax_classes(const Tensor& logits) {
  require_rank(logits, 3, "logits");
  const auto k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (k > 65535) throw ValidationError("too many classes");
  ClassMap map{h, w, std::vector<std::uint16_t>(h * w, 0)};
  const auto plane = h * w;
  if (logits.dtype() == DType::I8) {
    // Dequantization is monotone, so raw codes order the same as reals.
    const auto x = logits.i8_data();
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (x[c * plane + p] > x[best * plane + p]) best = c;
      }
      map.labels[p] = static_cast<std::uint16_t>(best);
    }
    return map;
  }
  const auto x = logits.f32_data();
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (ranks_above(x[c * plane + p], x[best * plane + p])) best = c;
    }
    map.labels[p] = static_cast<std::uint16_t>(best);
  }
  return map;
}

}  // namespace seufi
