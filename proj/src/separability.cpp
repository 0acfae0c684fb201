// SPDX-License-Identifier: Apache-2.0
#include "torsd/separability.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "torsd/errors.hpp"
#include "torsd/model.hpp"

namespace torsd {
namespace {

constexpr std::size_t kChunk = 256;
constexpr double kDecompositionTolerance = 1e-6;

} // namespace

DepthFeatureSet extract_depth_features(TappedBackbone<float> &backbone,
                                       const LabeledDataset &dataset, std::size_t depth,
                                       const ChannelStats &stats) {
  if (depth < 1 || depth > backbone.depth()) {
    throw ArgumentError("depth " + std::to_string(depth) + " outside [1, " +
                        std::to_string(backbone.depth()) + "]");
  }
  const std::size_t width = backbone.block_specs()[depth - 1].channels;
  DepthFeatureSet out;
  out.depth = depth;
  out.labels = dataset.labels;
  out.features = Tensor<double>({dataset.size(), width});
  for (std::size_t begin = 0; begin < dataset.size(); begin += kChunk) {
    const std::size_t end = std::min(dataset.size(), begin + kChunk);
    const Tensor<float> pooled =
        pool_features(backbone.forward_to(stack_images(dataset, begin, end, &stats), depth, false));
    std::copy(pooled.values().begin(), pooled.values().end(),
              out.features.data() + begin * width);
  }
  return out;
}

Separability sse_ssb(const DepthFeatureSet &fs) {
  const std::size_t n = fs.size();
  if (fs.features.rank() != 2 || fs.features.dim(0) != n) {
    throw ShapeError("sse_ssb: " + std::to_string(n) + " labels for features " +
                     shape_str(fs.features.shape()));
  }
  const std::size_t dim = fs.features.dim(1);
  std::map<int, std::pair<std::size_t, std::vector<double>>> classes;
  std::vector<double> grand(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto &[count, sum] = classes[fs.labels[i]];
    if (sum.empty()) sum.assign(dim, 0.0);
    ++count;
    const auto x = fs.features.row(i);
    for (std::size_t c = 0; c < dim; ++c) {
      if (!std::isfinite(x[c])) throw ArgumentError("sse_ssb: non-finite feature");
      sum[c] += x[c];
      grand[c] += x[c];
    }
  }
  if (classes.size() < 2) {
    throw DegenerateError("sse_ssb needs at least two classes, got " +
                          std::to_string(classes.size()));
  }
  for (double &g : grand) g /= static_cast<double>(n);
  for (auto &[label, entry] : classes) {
    for (double &s : entry.second) s /= static_cast<double>(entry.first);
  }

  Separability out;
  out.depth = fs.depth;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = fs.features.row(i);
    const auto &mu = classes.at(fs.labels[i]).second;
    for (std::size_t c = 0; c < dim; ++c) {
      out.sse += (x[c] - mu[c]) * (x[c] - mu[c]);
      out.total += (x[c] - grand[c]) * (x[c] - grand[c]);
    }
  }
  for (const auto &[label, entry] : classes) {
    double d2 = 0;
    for (std::size_t c = 0; c < dim; ++c) d2 += (entry.second[c] - grand[c]) * (entry.second[c] - grand[c]);
    out.ssb += static_cast<double>(entry.first) * d2;
  }
  const double gap = std::abs(out.sse + out.ssb - out.total);
  if (gap > kDecompositionTolerance * std::max(out.total, 1e-300) && gap > 1e-300) {
    throw StateError("scatter decomposition violated: SSE + SSB = " +
                     std::to_string(out.sse + out.ssb) + ", total = " + std::to_string(out.total));
  }
  if (out.ssb > 0) out.ratio = out.sse / out.ssb;
  return out;
}

} // namespace torsd
