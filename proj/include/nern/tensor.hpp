#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "nern/error.hpp"

namespace nern {

// Dense row-major tensor. Rank >= 1, every extent >= 1.
template <typename T>
struct Tensor {
  std::vector<size_t> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
    data.assign(check_shape(shape), T(0));
  }

  Tensor(std::vector<size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (check_shape(shape) != data.size())
      fail(ErrorCode::ShapeMismatch, "tensor data length does not match shape");
  }

  static size_t check_shape(const std::vector<size_t>& s) {
    if (s.empty()) fail(ErrorCode::ShapeMismatch, "tensor rank must be >= 1");
    size_t n = 1;
    for (size_t e : s) {
      if (e < 1) fail(ErrorCode::ShapeMismatch, "tensor extent must be >= 1");
      n *= e;
    }
    return n;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  size_t numel() const { return data.size(); }
  size_t rank() const { return shape.size(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](size_t i) { return data[i]; }
  const T& operator[](size_t i) const { return data[i]; }

  // 2d access, row-major
  T& at2(size_t i, size_t j) { return data[i * shape[1] + j]; }
  const T& at2(size_t i, size_t j) const { return data[i * shape[1] + j]; }

  // 4d access
  T& at4(size_t a, size_t b, size_t c, size_t d) {
    return data[((a * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  const T& at4(size_t a, size_t b, size_t c, size_t d) const {
    return data[((a * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
struct dtype_code;
template <>
struct dtype_code<float> {
  static constexpr uint8_t value = 0;
};
template <>
struct dtype_code<double> {
  static constexpr uint8_t value = 1;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape);
  for (size_t i = 0; i < t.numel(); ++i) out.data[i] = static_cast<To>(t.data[i]);
  return out;
}

}  // namespace nern
