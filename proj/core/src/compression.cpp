#include "seufi/compression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "seufi/error.hpp"

namespace seufi {

std::vector<std::size_t> l1_filter_ranking(const Tensor& weight) {
  if (weight.rank() != 4) throw ShapeError("filter ranking needs a 4-D weight, got " + shape_string(weight.shape()));
  const std::size_t filters = weight.dim(0);
  const std::size_t per = weight.size() / filters;
  std::vector<double> norm(filters, 0.0);
  for (std::size_t f = 0; f < filters; ++f) {
    for (std::size_t i = 0; i < per; ++i) norm[f] += std::abs(weight.real_at(f * per + i));
  }
  std::vector<std::size_t> order(filters);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norm[a] < norm[b]; });
  return order;
}

std::vector<int> prunable_layers(const ModelGraph& model) {
  std::vector<int> out;
  for (const auto& node : model.nodes) {
    if (node.kind == LayerKind::Conv && node.id != model.output_id()) out.push_back(node.id);
  }
  return out;
}

void PruningPlan::validate(const ModelGraph& model) const {
  for (const auto& [id, ratio] : ratios) {
    if (id <= 0 || id > model.output_id() || model.node(id).kind != LayerKind::Conv) {
      throw ValidationError("pruning target " + std::to_string(id) + " is not a conv layer");
    }
    if (!(ratio >= 0.0 && ratio <= 0.9 + 1e-12)) {
      throw ValidationError("pruning ratio for layer " + std::to_string(id) + " must lie in [0, 0.9]");
    }
    if (ratio > 0.0 && (id == model.output_id() || excluded.contains(id))) {
      throw ValidationError("layer " + std::to_string(id) + " is excluded from pruning");
    }
  }
}

std::size_t filters_to_remove(double ratio, std::size_t channels) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(channels) + 1e-9));
}

namespace {

std::vector<std::size_t> output_channels(const ModelGraph& model) {
  std::size_t pools = 0;
  for (const auto& node : model.nodes) pools += node.kind == LayerKind::MaxPool;
  const std::size_t side = std::size_t{1} << std::min<std::size_t>(pools + 1, 20);
  std::vector<std::size_t> out;
  for (const auto& s : infer_shapes(model, side, side)) out.push_back(s[0]);
  return out;
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

Tensor select_1d(const Tensor& t, const std::vector<std::size_t>& keep) {
  const auto src = t.f32_data();
  std::vector<float> data;
  data.reserve(keep.size());
  for (auto k : keep) data.push_back(src[k]);
  return Tensor::f32({keep.size()}, std::move(data));
}

Tensor select_filters(const Tensor& w, const std::vector<std::size_t>& out_keep,
                      const std::vector<std::size_t>& in_keep) {
  const auto src = w.f32_data();
  const std::size_t in_ch = w.dim(1), k = w.dim(2) * w.dim(3);
  std::vector<float> data;
  data.reserve(out_keep.size() * in_keep.size() * k);
  for (auto o : out_keep) {
    for (auto i : in_keep) {
      const auto base = (o * in_ch + i) * k;
      data.insert(data.end(), src.begin() + static_cast<std::ptrdiff_t>(base),
                  src.begin() + static_cast<std::ptrdiff_t>(base + k));
    }
  }
  return Tensor::f32({out_keep.size(), in_keep.size(), w.dim(2), w.dim(3)}, std::move(data));
}

}  // namespace

ModelGraph apply_prune(const ModelGraph& model, const PruningPlan& plan) {
  if (model.dtype_mode != DTypeMode::Float32) throw ValidationError("pruning works on float32 models");
  validate(model);
  plan.validate(model);
  const auto channels = output_channels(model);
  ModelGraph out = model;
  // Original channel indices that survive at each node's output.
  std::vector<std::vector<std::size_t>> kept(model.nodes.size());
  for (const auto& node : model.nodes) {
    const auto i = static_cast<std::size_t>(node.id);
    auto& dst = out.nodes[i];
    const auto* in = node.inputs.empty() ? nullptr : &kept[static_cast<std::size_t>(node.inputs[0])];
    switch (node.kind) {
      case LayerKind::Input:
        kept[i] = iota_n(channels[i]);
        break;
      case LayerKind::Conv: {
        const auto& w = node.param(ParamKind::ConvWeight);
        std::vector<std::size_t> keep = iota_n(channels[i]);
        if (auto it = plan.ratios.find(node.id); it != plan.ratios.end() && it->second > 0.0) {
          const auto drop = filters_to_remove(it->second, channels[i]);
          if (drop >= channels[i]) {
            throw ValidationError("pruning layer " + std::to_string(node.id) + " would leave zero filters");
          }
          const auto order = l1_filter_ranking(w);
          keep.assign(order.begin() + static_cast<std::ptrdiff_t>(drop), order.end());
          std::sort(keep.begin(), keep.end());
        }
        dst.params.at(ParamKind::ConvWeight) = select_filters(w, keep, *in);
        dst.params.at(ParamKind::ConvBias) = select_1d(node.param(ParamKind::ConvBias), keep);
        kept[i] = std::move(keep);
        break;
      }
      case LayerKind::BatchNorm:
        for (auto& [kind, t] : dst.params) t = select_1d(node.param(kind), *in);
        kept[i] = *in;
        break;
      case LayerKind::Activation:
      case LayerKind::MaxPool:
      case LayerKind::Upsample:
        kept[i] = *in;
        break;
      case LayerKind::Concat: {
        const auto b = static_cast<std::size_t>(node.inputs[1]);
        const auto offset = channels[static_cast<std::size_t>(node.inputs[0])];
        kept[i] = *in;
        for (auto c : kept[b]) kept[i].push_back(c + offset);
        break;
      }
    }
  }
  validate(out);
  return out;
}

std::vector<LabeledSample> self_labeled(const ModelGraph& model, std::span<const Tensor> inputs) {
  std::vector<LabeledSample> out;
  for (const auto& in : inputs) out.push_back({in, argmax_classes(forward(model, in))});
  return out;
}

IoUReport evaluate(const ModelGraph& model, std::span<const LabeledSample> samples) {
  if (samples.empty()) throw ValidationError("evaluation needs at least one labeled sample");
  ConfusionMatrix cm(model.n_classes);
  for (const auto& s : samples) cm.add(s.labels, argmax_classes(forward(model, s.input)));
  return cm.iou();
}

SensitivityCurve sensitivity_sweep(const ModelGraph& model, std::span<const LabeledSample> samples, int layer_id) {
  SensitivityCurve curve;
  curve.layer_id = layer_id;
  for (int k = 0; k < 10; ++k) {
    const double ratio = k / 10.0;
    PruningPlan plan;
    plan.ratios[layer_id] = ratio;
    const auto report = evaluate(apply_prune(model, plan), samples);
    curve.ratios.push_back(ratio);
    curve.giou.push_back(report.giou);
    curve.wiou.push_back(report.wiou);
  }
  return curve;
}

std::vector<SensitivityCurve> sensitivity_sweep_all(const ModelGraph& model,
                                                    std::span<const LabeledSample> samples) {
  std::vector<SensitivityCurve> out;
  for (int id : prunable_layers(model)) out.push_back(sensitivity_sweep(model, samples, id));
  return out;
}

std::string_view to_string(StopDecision d) noexcept { return d == StopDecision::Stop ? "stop" : "continue"; }

StopDecision stopping_check(MetricPair baseline, MetricPair current, double max_degradation) {
  for (double v : {baseline.giou, baseline.wiou, current.giou, current.wiou}) {
    if (!(v >= 0.0 && v <= 100.0)) throw ValidationError("metrics must lie in [0, 100]");
  }
  constexpr double kTol = 1e-9;
  const bool stop = baseline.giou - current.giou > max_degradation + kTol ||
                    baseline.wiou - current.wiou > max_degradation + kTol;
  return stop ? StopDecision::Stop : StopDecision::Continue;
}

ModelGraph fold_batch_norm(const ModelGraph& model) {
  if (model.dtype_mode != DTypeMode::Float32) throw ValidationError("folding works on float32 models");
  ModelGraph out;
  out.n_classes = model.n_classes;
  out.n_input_channels = model.n_input_channels;
  out.dtype_mode = model.dtype_mode;
  out.activation = model.activation;
  std::vector<int> remap(model.nodes.size(), -1);
  for (const auto& node : model.nodes) {
    if (node.kind == LayerKind::BatchNorm) {
      const int src = node.inputs.at(0);
      if (model.node(src).kind != LayerKind::Conv || consumers(model, src).size() != 1) {
        throw ValidationError("batch-norm layer " + std::to_string(node.id) +
                              " does not directly follow a conv it alone consumes");
      }
      auto& conv = out.node(remap[static_cast<std::size_t>(src)]);
      auto w = conv.param(ParamKind::ConvWeight).f32_data();
      auto b = conv.param(ParamKind::ConvBias).f32_data();
      const auto gamma = node.param(ParamKind::BNGamma).f32_data();
      const auto beta = node.param(ParamKind::BNBeta).f32_data();
      const auto mean = node.param(ParamKind::BNMean).f32_data();
      const auto var = node.param(ParamKind::BNVar).f32_data();
      const std::size_t per = w.size() / b.size();
      for (std::size_t c = 0; c < b.size(); ++c) {
        const double denom = static_cast<double>(var[c]) + node.eps;
        if (!(denom > 0.0)) throw ValidationError("cannot fold batch-norm with var + eps <= 0");
        const double s = gamma[c] / std::sqrt(denom);
        for (std::size_t k = 0; k < per; ++k) w[c * per + k] = static_cast<float>(w[c * per + k] * s);
        b[c] = static_cast<float>((static_cast<double>(b[c]) - mean[c]) * s + beta[c]);
      }
      remap[static_cast<std::size_t>(node.id)] = conv.id;
      continue;
    }
    LayerNode copy = node;
    copy.id = static_cast<int>(out.nodes.size());
    for (auto& src : copy.inputs) src = remap[static_cast<std::size_t>(src)];
    remap[static_cast<std::size_t>(node.id)] = copy.id;
    out.nodes.push_back(std::move(copy));
  }
  validate(out);
  return out;
}

QuantParams symmetric_weight_quant(std::span<const float> values) {
  double m = 0.0;
  for (float v : values) {
    if (!std::isfinite(v)) throw ValidationError("cannot quantize non-finite weights");
    m = std::max(m, static_cast<double>(std::abs(v)));
  }
  return {m > 0.0 ? m / 127.0 : 1.0, 0};
}

QuantParams affine_activation_quant(double min, double max) {
  if (!std::isfinite(min) || !std::isfinite(max) || min > max) {
    throw ValidationError("calibration range must be finite and ordered");
  }
  const double lo = std::min(min, 0.0), hi = std::max(max, 0.0);
  if (hi == lo) return {1.0, 0};
  const double scale = (hi - lo) / 255.0;
  const double zp = std::clamp(std::nearbyint(-128.0 - lo / scale), -128.0, 127.0);
  return {scale, static_cast<std::int32_t>(zp)};
}

ModelGraph quantize_model(const ModelGraph& model, std::span<const Tensor> calibration) {
  if (model.dtype_mode != DTypeMode::Float32) throw ValidationError("model is already quantized");
  if (calibration.empty()) throw ValidationError("quantization needs at least one calibration input");
  for (const auto& node : model.nodes) {
    if (node.kind == LayerKind::BatchNorm) throw ValidationError("fold batch-norm before quantizing");
  }
  validate(model);
  const auto n = model.nodes.size();
  std::vector<double> lo(n, std::numeric_limits<double>::infinity());
  std::vector<double> hi(n, -std::numeric_limits<double>::infinity());
  for (const auto& input : calibration) {
    const auto acts = forward_all(model, input);
    for (std::size_t i = 0; i < n; ++i) {
      for (float v : acts[i].f32_data()) {
        if (!std::isfinite(v)) throw ValidationError("non-finite activation during calibration");
        lo[i] = std::min(lo[i], static_cast<double>(v));
        hi[i] = std::max(hi[i], static_cast<double>(v));
      }
    }
  }

  ModelGraph out = model;
  out.dtype_mode = DTypeMode::Int8;
  for (auto& node : out.nodes) {
    const auto i = static_cast<std::size_t>(node.id);
    if (node.kind == LayerKind::MaxPool || node.kind == LayerKind::Upsample) {
      node.output_quant = out.node(node.inputs[0]).output_quant;
      continue;
    }
    node.output_quant = affine_activation_quant(lo[i], hi[i]);
    if (node.kind != LayerKind::Conv) continue;

    const auto& w = model.node(node.id).param(ParamKind::ConvWeight);
    const auto& b = model.node(node.id).param(ParamKind::ConvBias);
    const auto wq = symmetric_weight_quant(w.f32_data());
    std::vector<std::int8_t> wdata;
    wdata.reserve(w.size());
    for (float v : w.f32_data()) wdata.push_back(saturate_i8(v / wq.scale));
    const QuantParams bq{out.node(node.inputs[0]).output_quant->scale * wq.scale, 0};
    std::vector<std::int32_t> bdata;
    bdata.reserve(b.size());
    for (float v : b.f32_data()) {
      const double r = std::nearbyint(static_cast<double>(v) / bq.scale);
      bdata.push_back(saturate_i32(static_cast<std::int64_t>(std::clamp(r, -9.0e18, 9.0e18))));
    }
    node.params.at(ParamKind::ConvWeight) = Tensor::i8(w.shape(), std::move(wdata), wq);
    node.params.at(ParamKind::ConvBias) = Tensor::i32(b.shape(), std::move(bdata), bq);
  }
  validate(out);
  return out;
}

}  // namespace seufi
