// SPDX-License-Identifier: Apache-2.0
#include "torsd/layers.hpp"

#include <Eigen/Core>
#include <cmath>

#include "torsd/errors.hpp"

namespace torsd {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t pixels() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T *img, const ConvGeometry &g, T *cols) {
  const std::size_t npix = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T *dst = cols + ((c * g.kernel + ky) * g.kernel + kx) * npix;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix =
                static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            dst[oy * g.out_w + ox] =
                inside ? img[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                             static_cast<std::size_t>(ix)]
                       : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T *cols, const ConvGeometry &g, T *img) {
  const std::size_t npix = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T *src = cols + ((c * g.kernel + ky) * g.kernel + kx) * npix;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix =
                static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            img[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                static_cast<std::size_t>(ix)] += src[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

template <typename T>
void he_normal(Tensor<T> &w, std::size_t fan_in, Rng &rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto &v : w.values()) v = static_cast<T>(dist(rng));
}

} // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t padding, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride),
      padding_(padding), has_bias_(bias), weight_({out_channels, in_channels, kernel, kernel}),
      bias_(bias ? Shape{out_channels} : Shape{}) {}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape &input) const {
  if (input.size() != 4 || input[1] != in_) {
    throw ShapeError("conv2d expects [N, " + std::to_string(in_) + ", H, W], got " +
                     shape_str(input));
  }
  if (input[2] + 2 * padding_ < kernel_ || input[3] + 2 * padding_ < kernel_) {
    throw ShapeError("conv2d input " + shape_str(input) + " smaller than kernel");
  }
  return {input[0], out_, (input[2] + 2 * padding_ - kernel_) / stride_ + 1,
          (input[3] + 2 * padding_ - kernel_) / stride_ + 1};
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T> &x, bool) {
  const Shape out_shape = output_shape(x.shape());
  input_ = x;
  const ConvGeometry g{in_, x.dim(2), x.dim(3), kernel_, stride_, padding_, out_shape[2],
                       out_shape[3]};
  Tensor<T> y(out_shape);
  std::vector<T> cols(g.patch() * g.pixels());
  CMapR<T> w(weight_.value.data(), static_cast<long>(out_), static_cast<long>(g.patch()));
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    im2col(x.row(n).data(), g, cols.data());
    CMapR<T> c(cols.data(), static_cast<long>(g.patch()), static_cast<long>(g.pixels()));
    MapR<T> out(y.row(n).data(), static_cast<long>(out_), static_cast<long>(g.pixels()));
    out.noalias() = w * c;
    if (has_bias_) {
      for (std::size_t o = 0; o < out_; ++o) out.row(static_cast<long>(o)).array() += bias_.value[o];
    }
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T> &grad_out) {
  const Shape out_shape = output_shape(input_.shape());
  require_shape(grad_out.shape(), out_shape, "conv2d backward");
  const ConvGeometry g{in_, input_.dim(2), input_.dim(3), kernel_, stride_, padding_,
                       out_shape[2], out_shape[3]};
  Tensor<T> dx(input_.shape());
  std::vector<T> cols(g.patch() * g.pixels());
  std::vector<T> dcols(cols.size());
  CMapR<T> w(weight_.value.data(), static_cast<long>(out_), static_cast<long>(g.patch()));
  MapR<T> dw(weight_.grad.data(), static_cast<long>(out_), static_cast<long>(g.patch()));
  for (std::size_t n = 0; n < input_.dim(0); ++n) {
    im2col(input_.row(n).data(), g, cols.data());
    CMapR<T> c(cols.data(), static_cast<long>(g.patch()), static_cast<long>(g.pixels()));
    CMapR<T> dy(grad_out.row(n).data(), static_cast<long>(out_), static_cast<long>(g.pixels()));
    dw.noalias() += dy * c.transpose();
    if (has_bias_) {
      for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dy.row(static_cast<long>(o)).sum();
    }
    MapR<T> dc(dcols.data(), static_cast<long>(g.patch()), static_cast<long>(g.pixels()));
    dc.noalias() = w.transpose() * dy;
    col2im(dcols.data(), g, dx.row(n).data());
  }
  return dx;
}

template <typename T>
void Conv2d<T>::collect(const std::string &prefix, ParamList<T> &params, BufferList<T> &) {
  params.push_back({prefix + ".weight", &weight_});
  if (has_bias_) params.push_back({prefix + ".bias", &bias_});
}

template <typename T>
void Conv2d<T>::init(Rng &rng) {
  he_normal(weight_.value, in_ * kernel_ * kernel_, rng);
  bias_.value.fill(T(0));
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features)
    : in_(in_features), out_(out_features), weight_({out_features, in_features}),
      bias_({out_features}) {}

template <typename T>
Shape Linear<T>::output_shape(const Shape &input) const {
  if (input.size() != 2 || input[1] != in_) {
    throw ShapeError("linear expects [N, " + std::to_string(in_) + "], got " +
                     shape_str(input));
  }
  return {input[0], out_};
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T> &x, bool) {
  Tensor<T> y(output_shape(x.shape()));
  input_ = x;
  const long n = static_cast<long>(x.dim(0));
  CMapR<T> xm(x.data(), n, static_cast<long>(in_));
  CMapR<T> w(weight_.value.data(), static_cast<long>(out_), static_cast<long>(in_));
  MapR<T> ym(y.data(), n, static_cast<long>(out_));
  ym.noalias() = xm * w.transpose();
  for (long r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out_; ++o) ym(r, static_cast<long>(o)) += bias_.value[o];
  }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T> &grad_out) {
  require_shape(grad_out.shape(), output_shape(input_.shape()), "linear backward");
  const long n = static_cast<long>(input_.dim(0));
  CMapR<T> xm(input_.data(), n, static_cast<long>(in_));
  CMapR<T> dy(grad_out.data(), n, static_cast<long>(out_));
  CMapR<T> w(weight_.value.data(), static_cast<long>(out_), static_cast<long>(in_));
  MapR<T> dw(weight_.grad.data(), static_cast<long>(out_), static_cast<long>(in_));
  dw.noalias() += dy.transpose() * xm;
  for (long r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dy(r, static_cast<long>(o));
  }
  Tensor<T> dx(input_.shape());
  MapR<T> dxm(dx.data(), n, static_cast<long>(in_));
  dxm.noalias() = dy * w;
  return dx;
}

template <typename T>
void Linear<T>::collect(const std::string &prefix, ParamList<T> &params, BufferList<T> &) {
  params.push_back({prefix + ".weight", &weight_});
  params.push_back({prefix + ".bias", &bias_});
}

template <typename T>
void Linear<T>::init(Rng &rng) {
  he_normal(weight_.value, in_, rng);
  bias_.value.fill(T(0));
}

// ---------------------------------------------------------------------------
// ReLU / GlobalAvgPool

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T> &x, bool) {
  output_ = x;
  // NaN passes through so divergence stays visible downstream.
  for (auto &v : output_.values()) v = v < T(0) ? T(0) : v;
  return output_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T> &grad_out) {
  require_shape(grad_out.shape(), output_.shape(), "relu backward");
  Tensor<T> dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.numel(); ++i) {
    dx[i] = output_[i] > T(0) ? grad_out[i] : T(0);
  }
  return dx;
}

template <typename T>
Tensor<T> Tanh<T>::forward(const Tensor<T> &x, bool) {
  output_ = x;
  for (auto &v : output_.values()) v = std::tanh(v);
  return output_;
}

template <typename T>
Tensor<T> Tanh<T>::backward(const Tensor<T> &grad_out) {
  require_shape(grad_out.shape(), output_.shape(), "tanh backward");
  Tensor<T> dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = grad_out[i] * (T(1) - output_[i] * output_[i]);
  return dx;
}

template <typename T>
Shape GlobalAvgPool<T>::output_shape(const Shape &input) const {
  if (input.size() != 4) throw ShapeError("global pool expects rank-4 input, got " + shape_str(input));
  return {input[0], input[1]};
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T> &x, bool) {
  Tensor<T> y(output_shape(x.shape()));
  input_shape_ = x.shape();
  const std::size_t area = x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const T *src = x.data() + i * area;
    T acc = T(0);
    for (std::size_t j = 0; j < area; ++j) acc += src[j];
    y[i] = acc / static_cast<T>(area);
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T> &grad_out) {
  require_shape(grad_out.shape(), output_shape(input_shape_), "global pool backward");
  Tensor<T> dx(input_shape_);
  const std::size_t area = input_shape_[2] * input_shape_[3];
  for (std::size_t i = 0; i < grad_out.numel(); ++i) {
    const T g = grad_out[i] / static_cast<T>(area);
    T *dst = dx.data() + i * area;
    for (std::size_t j = 0; j < area; ++j) dst[j] = g;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, T momentum, T eps)
    : channels_(channels), momentum_(momentum), eps_(eps), gamma_({channels}), beta_({channels}),
      running_mean_({channels}, T(0)), running_var_({channels}, T(1)) {
  gamma_.value.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T> &x, bool training) {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw ShapeError("batchnorm expects [N, " + std::to_string(channels_) + ", H, W], got " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), area = x.dim(2) * x.dim(3);
  const std::size_t count = n * area;
  Tensor<T> y(x.shape());
  xhat_ = Tensor<T>(x.shape());
  inv_std_.assign(channels_, T(0));
  cached_training_ = training;
  for (std::size_t c = 0; c < channels_; ++c) {
    T mean, var;
    if (training) {
      T sum = T(0);
      for (std::size_t s = 0; s < n; ++s) {
        const T *src = x.data() + (s * channels_ + c) * area;
        for (std::size_t j = 0; j < area; ++j) sum += src[j];
      }
      mean = sum / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t s = 0; s < n; ++s) {
        const T *src = x.data() + (s * channels_ + c) * area;
        for (std::size_t j = 0; j < area; ++j) sq += (src[j] - mean) * (src[j] - mean);
      }
      var = sq / static_cast<T>(count);
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      running_mean_[c] = (T(1) - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (T(1) - momentum_) * running_var_[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const T inv = T(1) / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * channels_ + c) * area;
      for (std::size_t j = 0; j < area; ++j) {
        const T xh = (x[off + j] - mean) * inv;
        xhat_[off + j] = xh;
        y[off + j] = gamma_.value[c] * xh + beta_.value[c];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T> &grad_out) {
  require_shape(grad_out.shape(), xhat_.shape(), "batchnorm backward");
  const std::size_t n = grad_out.dim(0), area = grad_out.dim(2) * grad_out.dim(3);
  const T count = static_cast<T>(n * area);
  Tensor<T> dx(grad_out.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * channels_ + c) * area;
      for (std::size_t j = 0; j < area; ++j) {
        sum_dy += grad_out[off + j];
        sum_dy_xhat += grad_out[off + j] * xhat_[off + j];
      }
    }
    gamma_.grad[c] += sum_dy_xhat;
    beta_.grad[c] += sum_dy;
    const T g = gamma_.value[c] * inv_std_[c];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * channels_ + c) * area;
      for (std::size_t j = 0; j < area; ++j) {
        dx[off + j] = cached_training_
                          ? g * (grad_out[off + j] - sum_dy / count -
                                 xhat_[off + j] * sum_dy_xhat / count)
                          : g * grad_out[off + j];
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string &prefix, ParamList<T> &params,
                             BufferList<T> &buffers) {
  params.push_back({prefix + ".weight", &gamma_});
  params.push_back({prefix + ".bias", &beta_});
  buffers.push_back({prefix + ".running_mean", &running_mean_});
  buffers.push_back({prefix + ".running_var", &running_var_});
}

template <typename T>
void BatchNorm2d<T>::init(Rng &) {
  gamma_.value.fill(T(1));
  beta_.value.fill(T(0));
  running_mean_.fill(T(0));
  running_var_.fill(T(1));
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
Sequential<T>::Sequential(const Sequential &other) {
  for (const auto &[name, layer] : other.layers_) layers_.emplace_back(name, layer->clone());
}

template <typename T>
Sequential<T> &Sequential<T>::operator=(const Sequential &other) {
  if (this != &other) {
    Sequential copy(other);
    layers_ = std::move(copy.layers_);
  }
  return *this;
}

template <typename T>
Sequential<T> &Sequential<T>::add(std::string name, std::unique_ptr<Layer<T>> layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
  return *this;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T> &x, bool training) {
  if (layers_.empty()) return x;
  Tensor<T> h = layers_.front().second->forward(x, training);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i].second->forward(h, training);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T> &grad_out) {
  if (layers_.empty()) return grad_out;
  Tensor<T> g = layers_.back().second->backward(grad_out);
  for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i].second->backward(g);
  return g;
}

template <typename T>
Shape Sequential<T>::output_shape(const Shape &input) const {
  Shape s = input;
  for (const auto &entry : layers_) s = entry.second->output_shape(s);
  return s;
}

template <typename T>
void Sequential<T>::collect(const std::string &prefix, ParamList<T> &params,
                            BufferList<T> &buffers) {
  for (auto &[name, layer] : layers_) {
    layer->collect(prefix.empty() ? name : prefix + "." + name, params, buffers);
  }
}

template <typename T>
void Sequential<T>::init(Rng &rng) {
  for (auto &entry : layers_) entry.second->init(rng);
}

// ---------------------------------------------------------------------------
// BasicBlock

template <typename T>
BasicBlock<T>::BasicBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride) {
  main_.template emplace<Conv2d<T>>("conv1", in_channels, out_channels, 3, stride, 1, false);
  main_.template emplace<BatchNorm2d<T>>("bn1", out_channels);
  main_.template emplace<ReLU<T>>("relu1");
  main_.template emplace<Conv2d<T>>("conv2", out_channels, out_channels, 3, 1, 1, false);
  main_.template emplace<BatchNorm2d<T>>("bn2", out_channels);
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.template emplace<Conv2d<T>>("conv", in_channels, out_channels, 1, stride, 0, false);
    shortcut_.template emplace<BatchNorm2d<T>>("bn", out_channels);
  }
}

template <typename T>
Tensor<T> BasicBlock<T>::forward(const Tensor<T> &x, bool training) {
  Tensor<T> h = main_.forward(x, training);
  h += shortcut_.forward(x, training);
  return out_relu_.forward(h, training);
}

template <typename T>
Tensor<T> BasicBlock<T>::backward(const Tensor<T> &grad_out) {
  Tensor<T> g = out_relu_.backward(grad_out);
  Tensor<T> dx = main_.backward(g);
  dx += shortcut_.backward(g);
  return dx;
}

template <typename T>
Shape BasicBlock<T>::output_shape(const Shape &input) const {
  return main_.output_shape(input);
}

template <typename T>
void BasicBlock<T>::collect(const std::string &prefix, ParamList<T> &params,
                            BufferList<T> &buffers) {
  main_.collect(prefix, params, buffers);
  if (shortcut_.size() > 0) shortcut_.collect(prefix + ".shortcut", params, buffers);
}

template <typename T>
void BasicBlock<T>::init(Rng &rng) {
  main_.init(rng);
  shortcut_.init(rng);
}

template <typename T>
std::size_t count_parameters(Layer<T> &layer) {
  ParamList<T> params;
  BufferList<T> buffers;
  layer.collect("", params, buffers);
  std::size_t n = 0;
  for (const auto &p : params) n += p.param->value.numel();
  return n;
}

#define TORSD_INSTANTIATE(T)                                                                  \
  template class Conv2d<T>;                                                                   \
  template class Linear<T>;                                                                   \
  template class ReLU<T>;                                                                     \
  template class Tanh<T>;                                                                     \
  template class GlobalAvgPool<T>;                                                            \
  template class BatchNorm2d<T>;                                                              \
  template class Sequential<T>;                                                               \
  template class BasicBlock<T>;                                                               \
  template std::size_t count_parameters(Layer<T> &);

TORSD_INSTANTIATE(float)
TORSD_INSTANTIATE(double)

#undef TORSD_INSTANTIATE

} // namespace torsd
