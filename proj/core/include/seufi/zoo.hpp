#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seufi/model.hpp"

namespace seufi {

struct UNetOptions {
  /// Set BN running mean/var from the statistics of a seeded calibration image,
  /// so every BN sees roughly standardized inputs as it would after training.
  bool calibrate_batch_norm = true;
  std::size_t calibration_size = 32;
  double bn_eps = 1e-3;
};

/// Parametric U-Net: `depth` encoder stages of two conv-BN-activation blocks, each
/// followed by 2x2 pooling, a bottleneck block, a mirrored decoder that upsamples
/// and concatenates the matching encoder output, and a final 1x1 conv to classes.
///
/// Conv weights are drawn from a zero-mean normal truncated at two standard
/// deviations with He scaling, BN gammas sit near 1, and the result is bit-identical
/// for a given seed.
ModelGraph build_unet(int depth, int base_channels, std::uint32_t n_input_channels,
                      std::uint32_t n_classes, ActivationKind activation, std::uint64_t seed,
                      const UNetOptions& options = {});

struct ProbeModel {
  ModelGraph model;
  Tensor input;
  /// Spatial class template the golden prediction reproduces.
  ClassMap template_map;
};

/// Model and input whose golden class frequencies are `class_freqs` (to within one
/// pixel per class) and whose final conv biases are exactly `bias_values`.
///
/// The input is a one-hot class template; the final 1x1 conv maps it to logits with
/// a margin that dominates the bias spread, so a bias pushed to a huge magnitude
/// either erases its class or takes over every pixel.
ProbeModel build_bias_probe_model(std::span<const float> bias_values, std::span<const double> class_freqs,
                                  std::uint64_t seed, std::size_t height = 64, std::size_t width = 64,
                                  ActivationKind activation = ActivationKind::ReLU);

}  // namespace seufi
