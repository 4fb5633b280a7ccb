#include "seufi/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "seufi/error.hpp"
#include "seufi/random.hpp"

namespace seufi {

namespace {

Tensor truncated_normal_tensor(Shape shape, double sigma, Rng& rng) {
  std::vector<float> data(element_count(shape));
  for (auto& v : data) v = static_cast<float>(rng.truncated_normal(sigma));
  return Tensor::f32(std::move(shape), std::move(data));
}

Tensor filled(std::size_t n, float value) { return Tensor::f32({n}, std::vector<float>(n, value)); }

class UNetBuilder {
 public:
  UNetBuilder(std::uint32_t in_ch, std::uint32_t classes, ActivationKind act, std::uint64_t seed,
              const UNetOptions& options)
      : graph_(in_ch, classes, act), act_(act), rng_(derive_seed(seed, 0x0E7)), options_(options) {
    if (options_.calibrate_batch_norm) {
      calibration_ = synthetic_input(in_ch, options_.calibration_size, options_.calibration_size,
                                     derive_seed(seed, 0xCA11B));
    }
  }

  int conv(int src, std::size_t in_ch, std::size_t out_ch, std::size_t k, double gain) {
    const double fan_in = static_cast<double>(in_ch * k * k);
    auto w = truncated_normal_tensor({out_ch, in_ch, k, k}, std::sqrt(gain / fan_in), rng_);
    auto b = truncated_normal_tensor({out_ch}, 0.05, rng_);
    return graph_.conv(src, std::move(w), std::move(b), 1, static_cast<int>(k / 2));
  }

  int batch_norm(int src, std::size_t channels) {
    std::vector<float> gamma(channels), beta(channels), mean(channels), var(channels, 1.0f);
    for (std::size_t c = 0; c < channels; ++c) {
      gamma[c] = static_cast<float>(1.0 + rng_.truncated_normal(0.15));
      beta[c] = static_cast<float>(rng_.truncated_normal(0.1));
      mean[c] = static_cast<float>(rng_.truncated_normal(0.05));
    }
    if (options_.calibrate_batch_norm) {
      const auto acts = forward_all(graph_.peek(), calibration_);
      const auto x = acts[static_cast<std::size_t>(src)].f32_data();
      const auto plane = x.size() / channels;
      for (std::size_t c = 0; c < channels; ++c) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += x[c * plane + i];
        const double mu = s / static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = x[c * plane + i] - mu;
          s2 += d * d;
        }
        mean[c] = static_cast<float>(mu);
        var[c] = static_cast<float>(std::max(s2 / static_cast<double>(plane), 1e-4));
      }
    }
    const auto n = channels;
    return graph_.batch_norm(src, Tensor::f32({n}, std::move(gamma)), Tensor::f32({n}, std::move(beta)),
                             Tensor::f32({n}, std::move(mean)), Tensor::f32({n}, std::move(var)),
                             options_.bn_eps);
  }

  // conv3x3 -> BN -> activation, twice.
  int block(int src, std::size_t in_ch, std::size_t out_ch) {
    int x = src;
    for (int i = 0; i < 2; ++i) {
      x = conv(x, i == 0 ? in_ch : out_ch, out_ch, 3, 2.0);
      x = batch_norm(x, out_ch);
      x = graph_.activation(x, act_);
    }
    return x;
  }

  GraphBuilder& graph() { return graph_; }

 private:
  GraphBuilder graph_;
  ActivationKind act_;
  Rng rng_;
  UNetOptions options_;
  Tensor calibration_;
};

}  // namespace

ModelGraph build_unet(int depth, int base_channels, std::uint32_t n_input_channels, std::uint32_t n_classes,
                      ActivationKind activation, std::uint64_t seed, const UNetOptions& options) {
  if (depth < 1) throw ValidationError("U-Net depth must be >= 1");
  if (depth > 12) throw ValidationError("U-Net depth must be <= 12");
  if (base_channels < 1 || n_input_channels < 1 || n_classes < 1) {
    throw ValidationError("U-Net channel and class counts must be >= 1");
  }
  if (options.calibrate_batch_norm && options.calibration_size % (std::size_t{1} << depth) != 0) {
    throw ValidationError("calibration size must be divisible by 2^depth");
  }
  UNetBuilder b(n_input_channels, n_classes, activation, seed, options);
  std::vector<std::pair<int, std::size_t>> skips;
  int x = GraphBuilder::input();
  std::size_t in_ch = n_input_channels;
  std::size_t ch = static_cast<std::size_t>(base_channels);
  for (int s = 0; s < depth; ++s) {
    x = b.block(x, in_ch, ch);
    skips.emplace_back(x, ch);
    x = b.graph().max_pool(x);
    in_ch = ch;
    ch *= 2;
  }
  x = b.block(x, in_ch, ch);
  for (int s = depth - 1; s >= 0; --s) {
    const auto [skip, skip_ch] = skips[static_cast<std::size_t>(s)];
    x = b.graph().upsample(x);
    x = b.graph().concat(skip, x);
    x = b.block(x, skip_ch + ch, skip_ch);
    ch = skip_ch;
  }
  b.conv(x, ch, n_classes, 1, 1.0);
  return std::move(b.graph()).finish();
}

ProbeModel build_bias_probe_model(std::span<const float> bias_values, std::span<const double> class_freqs,
                                  std::uint64_t seed, std::size_t height, std::size_t width,
                                  ActivationKind activation) {
  const auto k = bias_values.size();
  if (k == 0 || class_freqs.size() != k) {
    throw ValidationError("probe model needs one bias and one frequency per class");
  }
  if (height == 0 || width == 0) throw ValidationError("probe image must be non-empty");
  double total = 0.0;
  for (double f : class_freqs) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ValidationError("class frequencies must be non-negative");
    total += f;
  }
  // Printed tables round each entry, so accept sums a hair away from 1 and renormalize.
  if (std::abs(total - 1.0) > 1e-3) {
    throw ValidationError("class frequencies must sum to 1 (got " + std::to_string(total) + ")");
  }
  for (float b : bias_values) {
    if (!std::isfinite(b)) throw ValidationError("probe biases must be finite");
  }

  // Largest-remainder apportionment of pixels to classes.
  const std::size_t pixels = height * width;
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = class_freqs[c] / total * static_cast<double>(pixels);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < pixels; ++i, ++assigned) ++counts[remainders[i % k].second];

  std::vector<std::uint16_t> labels;
  labels.reserve(pixels);
  for (std::size_t c = 0; c < k; ++c) labels.insert(labels.end(), counts[c], static_cast<std::uint16_t>(c));
  Rng rng(derive_seed(seed, 0x9B0BE));
  for (std::size_t i = pixels - 1; i > 0; --i) std::swap(labels[i], labels[rng.below(i + 1)]);

  std::vector<float> input(k * pixels, 0.0f);
  for (std::size_t p = 0; p < pixels; ++p) {
    input[labels[p] * pixels + p] = static_cast<float>(1.0 + rng.uniform(0.0, 0.1));
  }

  const auto [bmin, bmax] = std::minmax_element(bias_values.begin(), bias_values.end());
  const double spread = static_cast<double>(*bmax) - static_cast<double>(*bmin);
  // Hot-minus-cold activation gap for a unit one-hot input after BN.
  const double gap = static_cast<double>(apply_activation(0.99f, activation) - apply_activation(0.0f, activation));
  const auto margin = static_cast<float>(4.0 * (spread + 1.0) / gap);

  std::vector<float> identity(k * k, 0.0f), head(k * k, 0.0f);
  for (std::size_t c = 0; c < k; ++c) {
    identity[c * k + c] = 1.0f;
    head[c * k + c] = margin;
  }
  const auto kc = static_cast<std::uint32_t>(k);
  GraphBuilder g(kc, kc, activation);
  int x = g.conv(GraphBuilder::input(), Tensor::f32({k, k, 1, 1}, identity), filled(k, 0.0f));
  x = g.batch_norm(x, filled(k, 1.0f), filled(k, 0.0f), filled(k, 0.0f), filled(k, 1.0f));
  x = g.activation(x, activation);
  g.conv(x, Tensor::f32({k, k, 1, 1}, head),
         Tensor::f32({k}, std::vector<float>(bias_values.begin(), bias_values.end())));

  ProbeModel probe{std::move(g).finish(), Tensor::f32({k, height, width}, std::move(input)),
                   ClassMap{height, width, std::move(labels)}};
  if (argmax_classes(forward(probe.model, probe.input)) != probe.template_map) {
    throw ValidationError("probe model golden map does not reproduce its template");
  }
  return probe;
}

}  // namespace seufi
