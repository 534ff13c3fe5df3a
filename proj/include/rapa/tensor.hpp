#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rapa {

/// Raised for violated preconditions (shape mismatches, invalid geometry,
/// malformed input files). The message always names the offending quantity.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

/// Dense row-major n-dimensional array owning its storage.
///
/// Reshape is metadata-only. Element access through `operator[]` is flat;
/// `at(i, j)` is a convenience for rank-2 tensors.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{});
  BasicTensor(Shape shape, std::vector<T> data);

  /// Rank-2 tensor from nested braces; all rows must have equal length.
  static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows);
  static BasicTensor vector(std::initializer_list<T> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  const T& at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * row_length(), row_length()}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * row_length(), row_length()};
  }

  /// Same storage reinterpreted with a new shape of equal volume.
  BasicTensor reshaped(Shape shape) const&;
  BasicTensor reshaped(Shape shape) &&;

  void fill(T value);
  bool all_finite() const noexcept;

  /// Elementwise conversion to another precision.
  template <typename U>
  BasicTensor<U> cast() const {
    if (shape_.empty() && data_.empty()) return {};
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  std::size_t row_length() const noexcept {
    return shape_.empty() ? 0 : data_.size() / (shape_[0] == 0 ? 1 : shape_[0]);
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

/// Plain product of rank-2 tensors; accumulates in double regardless of T.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Throws Error("<what>: expected shape [..], got [..]") on mismatch.
void require_shape(const Shape& actual, const Shape& expected, const std::string& what);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace rapa
