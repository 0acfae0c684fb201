// SPDX-License-Identifier: Apache-2.0
#include "torsd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "torsd/errors.hpp"

namespace torsd {

std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

void require_shape(const Shape &actual, const Shape &expected, const std::string &what) {
  if (actual != expected) {
    throw ShapeError(what + ": expected shape " + shape_str(expected) + ", got " +
                     shape_str(actual));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_str(shape_) + " given " +
                     std::to_string(data_.size()) + " values");
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

template <typename T>
Tensor<T> &Tensor<T>::operator+=(const Tensor &other) {
  require_shape(other.shape(), shape_, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T> &src, std::span<const std::size_t> rows) {
  Shape shape = src.shape();
  shape.at(0) = rows.size();
  Tensor<T> out(shape);
  const std::size_t width = src.row_size();
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j] >= src.dim(0)) throw ShapeError("gather_rows: row index out of range");
    auto in = src.row(rows[j]);
    std::copy(in.begin(), in.end(), out.data() + j * width);
  }
  return out;
}

template <typename T>
void scatter_add_rows(Tensor<T> &dst, const Tensor<T> &src, std::span<const std::size_t> rows) {
  if (src.dim(0) != rows.size() || src.row_size() != dst.row_size()) {
    throw ShapeError("scatter_add_rows: " + shape_str(src.shape()) + " into " +
                     shape_str(dst.shape()));
  }
  for (std::size_t j = 0; j < rows.size(); ++j) {
    auto in = src.row(j);
    auto out = dst.row(rows[j]);
    for (std::size_t k = 0; k < in.size(); ++k) out[k] += in[k];
  }
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.rank() != b.rank() || a.row_size() != b.row_size()) {
    throw ShapeError("concat_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<T> values(a.values().begin(), a.values().end());
  values.insert(values.end(), b.values().begin(), b.values().end());
  return Tensor<T>(shape, std::move(values));
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.shape() != b.shape() || a.rank() < 2) {
    throw ShapeError("concat_pair: mismatched maps " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[1] *= 2;
  Tensor<T> out(shape);
  const std::size_t half = a.row_size();
  for (std::size_t n = 0; n < a.dim(0); ++n) {
    auto ra = a.row(n);
    auto rb = b.row(n);
    T *dst = out.data() + n * 2 * half;
    std::copy(ra.begin(), ra.end(), dst);
    std::copy(rb.begin(), rb.end(), dst + half);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T> &x) {
  if (x.rank() < 2 || x.dim(1) % 2 != 0) {
    throw ShapeError("split_channels: odd channel count in " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[1] /= 2;
  Tensor<T> a(shape), b(shape);
  const std::size_t half = a.row_size();
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const T *src = x.data() + n * 2 * half;
    std::copy(src, src + half, a.data() + n * half);
    std::copy(src + half, src + 2 * half, b.data() + n * half);
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
bool all_finite(const Tensor<T> &x) {
  return std::all_of(x.values().begin(), x.values().end(),
                     [](T v) { return std::isfinite(v); });
}

#define TORSD_INSTANTIATE(T)                                                                  \
  template class Tensor<T>;                                                                   \
  template Tensor<T> gather_rows(const Tensor<T> &, std::span<const std::size_t>);            \
  template void scatter_add_rows(Tensor<T> &, const Tensor<T> &,                              \
                                 std::span<const std::size_t>);                               \
  template Tensor<T> concat_rows(const Tensor<T> &, const Tensor<T> &);                       \
  template Tensor<T> concat_channels(const Tensor<T> &, const Tensor<T> &);                   \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T> &);                 \
  template bool all_finite(const Tensor<T> &);

TORSD_INSTANTIATE(float)
TORSD_INSTANTIATE(double)

#undef TORSD_INSTANTIATE

} // namespace torsd
