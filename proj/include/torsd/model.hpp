// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "torsd/backbone.hpp"
#include "torsd/config.hpp"
#include "torsd/losses.hpp"
#include "torsd/relation_heads.hpp"

namespace torsd {

/// Global average pool of an [N, C, H, W] map to [N, C].
template <typename T>
Tensor<T> pool_features(const Tensor<T> &map);

/// Backbone plus every training-time module. Only the backbone survives
/// strip_for_inference.
template <typename T>
class TorsdModel {
public:
  /// Backbone weights come from `seed`, relation heads from a derived stream.
  TorsdModel(const BackboneSpec &spec, std::size_t embed_dim, std::uint64_t seed);
  TorsdModel(TappedBackbone<T> backbone, std::size_t embed_dim, std::uint64_t seed);

  TappedBackbone<T> &backbone() { return backbone_; }
  const TappedBackbone<T> &backbone() const { return backbone_; }
  RelationHeads<T> &heads() { return heads_; }
  std::size_t embed_dim() const { return embed_dim_; }

  /// Runs the backbone on `images` ([3T, C, H, W], triple-major) and every
  /// module the toggles in `cfg` enable.
  StepOutputs<T> forward(const Tensor<T> &images, const std::vector<int> &y_o,
                         const std::vector<int> &y_p, const std::vector<int> &y_n,
                         const TorsdConfig &cfg, bool training);
  StepOutputs<T> forward(const TripletBatch &batch, const TorsdConfig &cfg, bool training);

  /// Accumulates parameter gradients for the output gradients of the last
  /// forward call.
  void backward(const StepOutputs<T> &out, const OutputGrads<T> &grads);

  /// Backbone parameters first, then relation heads.
  ParamList<T> parameters();
  BufferList<T> buffers();
  void zero_grad();
  std::size_t parameter_count();

private:
  TappedBackbone<T> backbone_;
  std::size_t embed_dim_;
  RelationHeads<T> heads_;
};

/// The plain backbone of a trained bundle: same weights, same inference path.
template <typename T>
TappedBackbone<T> strip_for_inference(const TorsdModel<T> &model);

} // namespace torsd
