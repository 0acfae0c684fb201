// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "torsd/dataset.hpp"

namespace torsd {

enum class SyntheticKind {
  /// Oriented colour gratings: each class owns an orientation and a hue,
  /// samples jitter both and add pixel noise and a random distractor disc.
  gratings,
  /// A bright disc whose quadrant identifies the class, on a noisy background.
  blobs,
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::gratings;
  std::size_t num_classes = 4;
  std::size_t per_class = 100;
  std::size_t size = 32;
  double noise = 0.35;        // pixel noise standard deviation
  double angle_jitter = 0.30; // radians, gratings only
  std::uint64_t seed = 0;
};

/// Deterministic 3-channel dataset with pixels in [0, 1], classes
/// interleaved (label = index mod num_classes).
LabeledDataset make_synthetic(const SyntheticSpec &spec);

} // namespace torsd
