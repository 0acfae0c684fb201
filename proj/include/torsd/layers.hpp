// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "torsd/tensor.hpp"

namespace torsd {

using Rng = std::mt19937_64;

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  explicit Param(Shape shape = {}) : value(shape), grad(shape) {}
  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
struct NamedParam {
  std::string name;
  Param<T> *param;
};

/// Non-trainable state that still belongs in a checkpoint (BN running stats).
template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T> *buffer;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;
template <typename T>
using BufferList = std::vector<NamedBuffer<T>>;

/// A differentiable building block. Each forward caches what its backward
/// needs, so a layer instance is evaluated at most once between backward
/// calls. Parameter gradients accumulate until zero_grad.
template <typename T>
class Layer {
public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T> &x, bool training) = 0;
  virtual Tensor<T> backward(const Tensor<T> &grad_out) = 0;
  /// Shape of forward(x) for an input of shape `input` (batch dim included).
  virtual Shape output_shape(const Shape &input) const = 0;

  virtual void collect(const std::string &prefix, ParamList<T> &params,
                       BufferList<T> &buffers) {
    (void)prefix;
    (void)params;
    (void)buffers;
  }
  virtual void init(Rng &rng) { (void)rng; }
  virtual std::unique_ptr<Layer<T>> clone() const = 0;
};

template <typename T>
class Conv2d final : public Layer<T> {
public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t padding, bool bias);

  Tensor<T> forward(const Tensor<T> &x, bool training) override;
  Tensor<T> backward(const Tensor<T> &grad_out) override;
  Shape output_shape(const Shape &input) const override;
  void collect(const std::string &prefix, ParamList<T> &params, BufferList<T> &buffers) override;
  void init(Rng &rng) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  Param<T> &weight() { return weight_; }
  Param<T> &bias() { return bias_; }
  bool has_bias() const { return has_bias_; }

private:
  std::size_t in_, out_, kernel_, stride_, padding_;
  bool has_bias_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class Linear final : public Layer<T> {
public:
  Linear(std::size_t in_features, std::size_t out_features);

  Tensor<T> forward(const Tensor<T> &x, bool training) override;
  Tensor<T> backward(const Tensor<T> &grad_out) override;
  Shape output_shape(const Shape &input) const override;
  void collect(const std::string &prefix, ParamList<T> &params, BufferList<T> &buffers) override;
  void init(Rng &rng) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Param<T> &weight() { return weight_; }
  Param<T> &bias() { return bias_; }

private:
  std::size_t in_, out_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class ReLU final : public Layer<T> {
public:
  Tensor<T> forward(const Tensor<T> &x, bool training) override;
  Tensor<T> backward(const Tensor<T> &grad_out) override;
  Shape output_shape(const Shape &input) const override { return input; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }

private:
  Tensor<T> output_;
};

template <typename T>
class Tanh final : public Layer<T> {
public:
  Tensor<T> forward(const Tensor<T> &x, bool training) override;
  Tensor<T> backward(const Tensor<T> &grad_out) override;
  Shape output_shape(const Shape &input) const override { return input; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Tanh>(*this); }

private:
  Tensor<T> output_;
};

/// [N, C, H, W] -> [N, C].
template <typename T>
class GlobalAvgPool final : public Layer<T> {
public:
  Tensor<T> forward(const Tensor<T> &x, bool training) override;
  Tensor<T> backward(const Tensor<T> &grad_out) override;
  Shape output_shape(const Shape &input) const override;
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<GlobalAvgPool>(*this);
  }

private:
  Shape input_shape_;
};

/// Per-channel batch normalization with running statistics for eval mode.
template <typename T>
class BatchNorm2d final : public Layer<T> {
public:
  explicit BatchNorm2d(std::size_t channels, T momentum = T(0.1), T eps = T(1e-5));

  Tensor<T> forward(const Tensor<T> &x, bool training) override;
  Tensor<T> backward(const Tensor<T> &grad_out) override;
  Shape output_shape(const Shape &input) const override { return input; }
  void collect(const std::string &prefix, ParamList<T> &params, BufferList<T> &buffers) override;
  void init(Rng &rng) override;
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<BatchNorm2d>(*this);
  }

private:
  std::size_t channels_;
  T momentum_, eps_;
  Param<T> gamma_;
  Param<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  // backward cache
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool cached_training_ = false;
};

/// Named children evaluated in order.
template <typename T>
class Sequential final : public Layer<T> {
public:
  Sequential() = default;
  Sequential(const Sequential &other);
  Sequential &operator=(const Sequential &other);
  Sequential(Sequential &&) noexcept = default;
  Sequential &operator=(Sequential &&) noexcept = default;

  Sequential &add(std::string name, std::unique_ptr<Layer<T>> layer);
  template <typename L, typename... Args>
  L &emplace(std::string name, Args &&...args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L &ref = *layer;
    add(std::move(name), std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T> &x, bool training) override;
  Tensor<T> backward(const Tensor<T> &grad_out) override;
  Shape output_shape(const Shape &input) const override;
  void collect(const std::string &prefix, ParamList<T> &params, BufferList<T> &buffers) override;
  void init(Rng &rng) override;
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<Sequential>(*this);
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T> &at(std::size_t i) { return *layers_.at(i).second; }

private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer<T>>>> layers_;
};

/// ResNet basic block: conv-bn-relu-conv-bn plus (projected) shortcut, relu.
template <typename T>
class BasicBlock final : public Layer<T> {
public:
  BasicBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride);

  Tensor<T> forward(const Tensor<T> &x, bool training) override;
  Tensor<T> backward(const Tensor<T> &grad_out) override;
  Shape output_shape(const Shape &input) const override;
  void collect(const std::string &prefix, ParamList<T> &params, BufferList<T> &buffers) override;
  void init(Rng &rng) override;
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<BasicBlock>(*this);
  }

private:
  Sequential<T> main_;
  Sequential<T> shortcut_; // empty for identity
  ReLU<T> out_relu_;
};

/// Parameter count of a layer tree.
template <typename T>
std::size_t count_parameters(Layer<T> &layer);

} // namespace torsd
