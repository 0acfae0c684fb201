// SPDX-License-Identifier: Apache-2.0
#include "torsd/backbone.hpp"

#include "torsd/errors.hpp"

namespace torsd {

std::string backbone_id(const BackboneSpec &spec) {
  if (spec.kind == BackboneKind::resnet18) return "resnet18";
  return "toy_cnn:width=" + std::to_string(spec.base_width);
}

BackboneSpec parse_backbone_id(const std::string &id) {
  BackboneSpec spec;
  if (id == "resnet18") {
    spec.kind = BackboneKind::resnet18;
    return spec;
  }
  const std::string prefix = "toy_cnn:width=";
  if (id.rfind(prefix, 0) == 0) {
    spec.kind = BackboneKind::toy_cnn;
    try {
      spec.base_width = std::stoul(id.substr(prefix.size()));
    } catch (const std::exception &) {
      throw ArgumentError("bad backbone id '" + id + "'");
    }
    return spec;
  }
  if (id == "toy_cnn") return spec;
  throw ArgumentError("unknown backbone id '" + id + "'");
}

template <typename T>
Tensor<T> TappedFeatures<T>::role(std::size_t depth, Role r) const {
  if (depth < 1 || depth > taps.size()) {
    throw ArgumentError("tap depth " + std::to_string(depth) + " outside [1, " +
                        std::to_string(taps.size()) + "]");
  }
  const auto rows = role_rows(triplets(), r);
  return gather_rows(taps[depth - 1], std::span<const std::size_t>(rows));
}

template <typename T>
Tensor<T> TappedFeatures<T>::role_logits(Role r) const {
  const auto rows = role_rows(triplets(), r);
  return gather_rows(logits, std::span<const std::size_t>(rows));
}

template <typename T>
TappedBackbone<T>::TappedBackbone(BackboneSpec spec, std::vector<Sequential<T>> blocks)
    : spec_(spec), blocks_(std::move(blocks)), fc_(1, spec.num_classes) {
  if (blocks_.size() < 2) throw ArgumentError("a tapped backbone needs at least 2 blocks");
  if (spec_.num_classes < 2) throw ArgumentError("num_classes must be >= 2");
  Shape s{1, spec_.channels, spec_.height, spec_.width};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    s = blocks_[i].output_shape(s);
    block_specs_.push_back({i + 1, s[1], s[2], s[3], spec_.height / s[2]});
  }
  fc_ = Linear<T>(s[1], spec_.num_classes);
}

template <typename T>
void TappedBackbone<T>::check_input(const Shape &shape) const {
  if (shape.size() != 4 || shape[1] != spec_.channels || shape[2] != spec_.height ||
      shape[3] != spec_.width) {
    throw ShapeError("backbone expects input [N, " + std::to_string(spec_.channels) + ", " +
                     std::to_string(spec_.height) + ", " + std::to_string(spec_.width) +
                     "], got " + shape_str(shape));
  }
}

template <typename T>
TappedFeatures<T> TappedBackbone<T>::forward_tapped(const Tensor<T> &images, bool training) {
  check_input(images.shape());
  TappedFeatures<T> out;
  out.taps.reserve(blocks_.size());
  out.taps.push_back(blocks_[0].forward(images, training));
  for (std::size_t i = 1; i < blocks_.size(); ++i) {
    out.taps.push_back(blocks_[i].forward(out.taps.back(), training));
  }
  out.logits = fc_.forward(pool_.forward(out.taps.back(), training), training);
  return out;
}

template <typename T>
TappedFeatures<T> TappedBackbone<T>::forward_tapped(const TripletBatch &batch, bool training) {
  if constexpr (std::is_same_v<T, float>) {
    return forward_tapped(batch.images, training);
  } else {
    return forward_tapped(tensor_cast<T>(batch.images), training);
  }
}

template <typename T>
Tensor<T> TappedBackbone<T>::forward(const Tensor<T> &images, bool training) {
  check_input(images.shape());
  Tensor<T> h = blocks_[0].forward(images, training);
  for (std::size_t i = 1; i < blocks_.size(); ++i) h = blocks_[i].forward(h, training);
  return fc_.forward(pool_.forward(h, training), training);
}

template <typename T>
Tensor<T> TappedBackbone<T>::forward_to(const Tensor<T> &images, std::size_t depth,
                                        bool training) {
  check_input(images.shape());
  if (depth < 1 || depth > blocks_.size()) {
    throw ArgumentError("depth " + std::to_string(depth) + " outside [1, " +
                        std::to_string(blocks_.size()) + "]");
  }
  Tensor<T> h = blocks_[0].forward(images, training);
  for (std::size_t i = 1; i < depth; ++i) h = blocks_[i].forward(h, training);
  return h;
}

template <typename T>
void TappedBackbone<T>::backward(const std::vector<Tensor<T>> &tap_grads,
                                 const Tensor<T> &logits_grad) {
  if (!tap_grads.empty() && tap_grads.size() != blocks_.size()) {
    throw ShapeError("backbone backward: " + std::to_string(tap_grads.size()) +
                     " tap gradients for " + std::to_string(blocks_.size()) + " blocks");
  }
  Tensor<T> g = pool_.backward(fc_.backward(logits_grad));
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    if (!tap_grads.empty() && !tap_grads[i].empty()) g += tap_grads[i];
    g = blocks_[i].backward(g);
  }
}

template <typename T>
void TappedBackbone<T>::collect(ParamList<T> &params, BufferList<T> &buffers) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect("backbone.block" + std::to_string(i + 1), params, buffers);
  }
  fc_.collect("backbone.head.fc", params, buffers);
}

template <typename T>
std::size_t TappedBackbone<T>::parameter_count() {
  ParamList<T> params;
  BufferList<T> buffers;
  collect(params, buffers);
  std::size_t n = 0;
  for (const auto &p : params) n += p.param->value.numel();
  return n;
}

template <typename T>
void TappedBackbone<T>::init(std::uint64_t seed) {
  Rng rng(seed);
  for (auto &b : blocks_) b.init(rng);
  fc_.init(rng);
}

template <typename T>
TappedBackbone<T> build_toy_cnn(std::size_t num_classes, std::uint64_t seed,
                                std::size_t base_width, std::size_t height, std::size_t width) {
  if (num_classes < 2) throw ArgumentError("num_classes must be >= 2");
  std::vector<Sequential<T>> blocks;
  std::size_t in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t out = base_width << i;
    Sequential<T> block;
    block.template emplace<Conv2d<T>>("conv", in, out, 3, 2, 1, true);
    block.template emplace<ReLU<T>>("relu");
    blocks.push_back(std::move(block));
    in = out;
  }
  BackboneSpec spec{BackboneKind::toy_cnn, num_classes, base_width, 3, height, width};
  TappedBackbone<T> net(spec, std::move(blocks));
  net.init(seed);
  return net;
}

template <typename T>
TappedBackbone<T> build_resnet18_like(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ArgumentError("num_classes must be >= 2");
  const std::size_t widths[4] = {64, 128, 256, 512};
  std::vector<Sequential<T>> blocks;
  Sequential<T> first;
  first.template emplace<Conv2d<T>>("stem.conv", 3, 64, 3, 1, 1, false);
  first.template emplace<BatchNorm2d<T>>("stem.bn", 64);
  first.template emplace<ReLU<T>>("stem.relu");
  first.template emplace<BasicBlock<T>>("0", 64, 64, 1);
  first.template emplace<BasicBlock<T>>("1", 64, 64, 1);
  blocks.push_back(std::move(first));
  for (std::size_t s = 1; s < 4; ++s) {
    Sequential<T> stage;
    stage.template emplace<BasicBlock<T>>("0", widths[s - 1], widths[s], 2);
    stage.template emplace<BasicBlock<T>>("1", widths[s], widths[s], 1);
    blocks.push_back(std::move(stage));
  }
  BackboneSpec spec{BackboneKind::resnet18, num_classes, 64, 3, 32, 32};
  TappedBackbone<T> net(spec, std::move(blocks));
  net.init(seed);
  return net;
}

template <typename T>
TappedBackbone<T> build_backbone(const BackboneSpec &spec, std::uint64_t seed) {
  if (spec.kind == BackboneKind::resnet18) {
    if (spec.channels != 3 || spec.height != 32 || spec.width != 32) {
      throw ArgumentError("resnet18 backbone expects 3x32x32 inputs");
    }
    return build_resnet18_like<T>(spec.num_classes, seed);
  }
  if (spec.channels != 3) throw ArgumentError("toy CNN expects 3-channel inputs");
  return build_toy_cnn<T>(spec.num_classes, seed, spec.base_width, spec.height, spec.width);
}

#define TORSD_INSTANTIATE(T)                                                                  \
  template struct TappedFeatures<T>;                                                          \
  template class TappedBackbone<T>;                                                           \
  template TappedBackbone<T> build_toy_cnn<T>(std::size_t, std::uint64_t, std::size_t,        \
                                              std::size_t, std::size_t);                      \
  template TappedBackbone<T> build_resnet18_like<T>(std::size_t, std::uint64_t);              \
  template TappedBackbone<T> build_backbone<T>(const BackboneSpec &, std::uint64_t);

TORSD_INSTANTIATE(float)
TORSD_INSTANTIATE(double)

#undef TORSD_INSTANTIATE

} // namespace torsd
