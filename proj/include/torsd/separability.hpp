// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "torsd/backbone.hpp"
#include "torsd/dataset.hpp"

namespace torsd {

/// Globally average-pooled block-`depth` outputs, one row per sample.
struct DepthFeatureSet {
  std::size_t depth = 0;
  Tensor<double> features; // [N, C_depth]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Runs the backbone in eval mode and pools block `depth` for every sample.
/// Throws ArgumentError when depth is outside [1, k].
DepthFeatureSet extract_depth_features(TappedBackbone<float> &backbone,
                                       const LabeledDataset &dataset, std::size_t depth,
                                       const ChannelStats &stats);

/// Within-class (SSE) and count-weighted between-class (SSB) scatter.
struct Separability {
  std::size_t depth = 0;
  double sse = 0;
  double ssb = 0;
  double total = 0;            // sum of squared deviations from the grand mean
  std::optional<double> ratio; // SSE / SSB, only when SSB > 0
};

/// Throws DegenerateError when fewer than two classes are present, and
/// StateError when SSE + SSB misses the total scatter by more than 1e-6
/// relative.
Separability sse_ssb(const DepthFeatureSet &features);

} // namespace torsd
