// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "torsd/dataset.hpp"
#include "torsd/layers.hpp"
#include "torsd/tensor.hpp"

namespace torsd::fixtures {

/// Uniform-noise images with the given labels.
inline LabeledDataset random_dataset(const std::vector<int> &labels, std::size_t num_classes,
                                     std::size_t side = 32, std::uint64_t seed = 1) {
  LabeledDataset ds;
  ds.channels = 3;
  ds.height = ds.width = side;
  ds.num_classes = num_classes;
  ds.labels = labels;
  ds.id = "random";
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::vector<float> img(ds.image_size());
    for (float &v : img) v = u(rng);
    ds.images.push_back(std::move(img));
  }
  return ds;
}

inline LabeledDataset balanced_dataset(std::size_t num_classes, std::size_t per_class,
                                       std::size_t side = 32, std::uint64_t seed = 1) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < num_classes * per_class; ++i) {
    labels.push_back(static_cast<int>(i % num_classes));
  }
  return random_dataset(labels, num_classes, side, seed);
}

template <typename T>
Tensor<T> random_tensor(const Shape &shape, std::uint64_t seed, T scale = T(1)) {
  Tensor<T> t(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<T> g(T(0), scale);
  for (T &v : t.values()) v = g(rng);
  return t;
}

/// Central difference of `f` with respect to `x[i]`.
inline double central_difference(double &x, const std::function<double()> &f, double h = 1e-6) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Max relative error between analytic and central-difference gradients of
/// L = sum(w * layer(x)) for a fixed random w, over the input and (a strided
/// sample of) every parameter.
inline double layer_gradcheck(Layer<double> &layer, Tensor<double> x, bool training,
                              std::uint64_t seed, std::size_t max_per_tensor = 40) {
  const Tensor<double> out = layer.forward(x, training);
  const Tensor<double> w = random_tensor<double>(out.shape(), seed);
  ParamList<double> params;
  BufferList<double> buffers;
  layer.collect("", params, buffers);
  for (auto &p : params) p.param->zero_grad();
  const Tensor<double> dx = layer.backward(w);
  auto loss = [&] {
    const Tensor<double> y = layer.forward(x, training);
    double acc = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += w[i] * y[i];
    return acc;
  };
  double worst = 0;
  auto sweep = [&](Tensor<double> &values, const Tensor<double> &grad) {
    const std::size_t stride = std::max<std::size_t>(1, values.numel() / max_per_tensor);
    for (std::size_t i = 0; i < values.numel(); i += stride) {
      const double fd = central_difference(values[i], loss);
      worst = std::max(worst, rel_err(grad[i], fd));
    }
  };
  for (auto &p : params) sweep(p.param->value, p.param->grad);
  sweep(x, dx);
  return worst;
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string &name) {
  auto dir = std::filesystem::temp_directory_path() / ("torsd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace torsd::fixtures
