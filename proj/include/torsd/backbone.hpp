// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "torsd/layers.hpp"
#include "torsd/tensor.hpp"
#include "torsd/triplet.hpp"

namespace torsd {

/// Output geometry of block `index` (1-based) for the backbone's input size.
struct BlockSpec {
  std::size_t index;
  std::size_t channels;
  std::size_t height;
  std::size_t width;
  std::size_t downsample; // input height / block height
};

enum class BackboneKind { toy_cnn, resnet18 };

struct BackboneSpec {
  BackboneKind kind = BackboneKind::toy_cnn;
  std::size_t num_classes = 10;
  std::size_t base_width = 8; // toy CNN only: channels are base_width * [1, 2, 4, 8]
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  bool operator==(const BackboneSpec &) const = default;
};

/// "toy_cnn:width=8" / "resnet18".
std::string backbone_id(const BackboneSpec &spec);
/// Inverse of backbone_id; geometry and class count are filled by the caller.
BackboneSpec parse_backbone_id(const std::string &id);

/// Per-depth block outputs for every image of a batch plus the classifier
/// logits. For triplet batches rows follow the triple-major layout, so the
/// anchor/positive/negative views are strided row selections.
template <typename T>
struct TappedFeatures {
  std::vector<Tensor<T>> taps; // taps[i - 1]: [N, C_i, H_i, W_i]
  Tensor<T> logits;            // [N, num_classes]

  std::size_t depth() const { return taps.size(); }
  std::size_t triplets() const { return logits.empty() ? 0 : logits.dim(0) / 3; }
  /// f_role^depth for all triplets, depth in [1, k].
  Tensor<T> role(std::size_t depth, Role r) const;
  Tensor<T> role_logits(Role r) const;
};

/// A block-structured classifier: k blocks, then global average pooling and
/// a linear map to class logits. Block outputs double as distillation taps.
template <typename T>
class TappedBackbone {
public:
  TappedBackbone(BackboneSpec spec, std::vector<Sequential<T>> blocks);

  const BackboneSpec &spec() const { return spec_; }
  std::size_t depth() const { return blocks_.size(); }
  const std::vector<BlockSpec> &block_specs() const { return block_specs_; }

  /// Throws ShapeError if `images` is not [N, C, H, W] of the backbone's input.
  TappedFeatures<T> forward_tapped(const Tensor<T> &images, bool training);
  TappedFeatures<T> forward_tapped(const TripletBatch &batch, bool training);
  /// Inference path: the same computation as forward_tapped, logits only.
  Tensor<T> forward(const Tensor<T> &images, bool training);
  /// Output of blocks 1..depth only (the head is not evaluated).
  Tensor<T> forward_to(const Tensor<T> &images, std::size_t depth, bool training);

  /// Backpropagates the logits gradient together with extra gradients
  /// arriving at each tap (empty tensors for taps without one). Must follow
  /// a forward_tapped/forward call on the same instance.
  void backward(const std::vector<Tensor<T>> &tap_grads, const Tensor<T> &logits_grad);

  /// Parameters named `backbone.block{i}.*` and `backbone.head.fc.*`.
  void collect(ParamList<T> &params, BufferList<T> &buffers);
  std::size_t parameter_count();
  void init(std::uint64_t seed);

private:
  void check_input(const Shape &shape) const;

  BackboneSpec spec_;
  std::vector<Sequential<T>> blocks_;
  GlobalAvgPool<T> pool_;
  Linear<T> fc_;
  std::vector<BlockSpec> block_specs_;
};

/// Four blocks of stride-2 3x3 conv + ReLU; channels base_width * [1, 2, 4, 8].
template <typename T>
TappedBackbone<T> build_toy_cnn(std::size_t num_classes, std::uint64_t seed,
                                std::size_t base_width = 8, std::size_t height = 32,
                                std::size_t width = 32);

/// CIFAR-style ResNet18: 3x3 stem, four stages of two basic blocks with
/// widths [64, 128, 256, 512]; taps after each stage.
template <typename T>
TappedBackbone<T> build_resnet18_like(std::size_t num_classes, std::uint64_t seed);

template <typename T>
TappedBackbone<T> build_backbone(const BackboneSpec &spec, std::uint64_t seed);

} // namespace torsd
