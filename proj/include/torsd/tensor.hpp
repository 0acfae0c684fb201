// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace torsd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape &shape);
std::size_t shape_numel(const Shape &shape);

/// Dense row-major tensor. Image batches use the [N, C, H, W] layout and
/// feature matrices [N, F].
template <typename T>
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> values);

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T> &storage() { return data_; }
  const std::vector<T> &storage() const { return data_; }

  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  /// Number of elements per leading-dimension row.
  std::size_t row_size() const { return shape_.empty() ? 0 : numel() / shape_[0]; }
  std::span<T> row(std::size_t n) { return {data_.data() + n * row_size(), row_size()}; }
  std::span<const T> row(std::size_t n) const {
    return {data_.data() + n * row_size(), row_size()};
  }

  void fill(T value);
  void reshape(Shape shape);
  Tensor &operator+=(const Tensor &other);

  bool operator==(const Tensor &other) const = default;

private:
  Shape shape_;
  std::vector<T> data_;
};

/// Throws ShapeError when `actual` differs from `expected`.
void require_shape(const Shape &actual, const Shape &expected, const std::string &what);

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From> &src) {
  std::vector<To> out(src.values().begin(), src.values().end());
  return Tensor<To>(src.shape(), std::move(out));
}

/// Rows `rows` of `src` (leading dimension) stacked in order.
template <typename T>
Tensor<T> gather_rows(const Tensor<T> &src, std::span<const std::size_t> rows);

/// dst[rows[j]] += src[j] for every j.
template <typename T>
void scatter_add_rows(Tensor<T> &dst, const Tensor<T> &src, std::span<const std::size_t> rows);

/// Stacks `a` over `b` along the leading dimension.
template <typename T>
Tensor<T> concat_rows(const Tensor<T> &a, const Tensor<T> &b);

/// [N, C, ...] x [N, C, ...] -> [N, 2C, ...] with `a`'s channels first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T> &a, const Tensor<T> &b);

/// Inverse of concat_channels: returns the first and second channel halves.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T> &x);

template <typename T>
bool all_finite(const Tensor<T> &x);

} // namespace torsd
