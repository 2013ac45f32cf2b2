#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dfdg/common.hpp"

namespace dfdg {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

std::string shape_string(const Shape& shape);

/// Dense row-major array. The leading dimension is the batch where one exists.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    require(data.size() == shape_size(shape), ErrorCode::Internal,
            "tensor data does not match shape " + shape_string(shape));
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  int batch() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t row_size() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / shape[0]; }

  T* row(int b) { return data.data() + static_cast<std::size_t>(b) * row_size(); }
  const T* row(int b) const { return data.data() + static_cast<std::size_t>(b) * row_size(); }

  T& operator()(int b, int j) { return data[static_cast<std::size_t>(b) * row_size() + j]; }
  T operator()(int b, int j) const { return data[static_cast<std::size_t>(b) * row_size() + j]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

/// Rows [begin, end) of a batched tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& t, int begin, int end) {
  Tensor<T> out;
  out.shape = t.shape;
  out.shape[0] = end - begin;
  out.data.assign(t.row(begin), t.row(begin) + static_cast<std::size_t>(end - begin) * t.row_size());
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& t, const std::vector<int>& rows) {
  Tensor<T> out;
  out.shape = t.shape;
  out.shape[0] = static_cast<int>(rows.size());
  const std::size_t rs = t.row_size();
  out.data.resize(rows.size() * rs);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(t.row(rows[i]), rs, out.data.data() + i * rs);
  }
  return out;
}

}  // namespace dfdg
