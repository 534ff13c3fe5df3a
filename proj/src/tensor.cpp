#include "rapa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rapa {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

void require_shape(const Shape& actual, const Shape& expected, const std::string& what) {
  if (actual != expected) {
    throw Error(what + ": expected shape " + shape_string(expected) + ", got " +
                shape_string(actual));
  }
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_volume(shape_)) {
    throw Error("tensor data length " + std::to_string(data_.size()) +
                " does not match shape " + shape_string(shape_));
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(n_rows * n_cols);
  for (const auto& r : rows) {
    if (r.size() != n_cols) throw Error("matrix literal has ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return BasicTensor({n_rows, n_cols}, std::move(data));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::vector(std::initializer_list<T> values) {
  return BasicTensor({values.size()}, std::vector<T>(values));
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw Error("axis " + std::to_string(axis) + " out of range for shape " +
                shape_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
  return BasicTensor(*this).reshaped(std::move(shape));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
  if (shape_volume(shape) != data_.size()) {
    throw Error("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> c({m, n});
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += aip * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < n; ++j) c.at(i, j) = static_cast<T>(acc[j]);
  }
  return c;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_shape(b.shape(), a.shape(), "add");
  BasicTensor<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> matmul(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> matmul(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> add(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> add(const BasicTensor<double>&, const BasicTensor<double>&);

}  // namespace rapa
