#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "pfedcr/errors.hpp"

namespace pfedcr {

/// Dense row-major n-dimensional array; the universal value carrier.
/// Training runs on TensorT<float>; gradient checks and test oracles use
/// the TensorT<double> shadow instantiation of the same code paths.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {}
  TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != data.size())
      throw config_error("tensor: shape does not match data length");
  }

  static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }
  static TensorT full(std::vector<int> s, T value) {
    TensorT t(std::move(s));
    for (auto& x : t.data) x = value;
    return t;
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // Indexing helpers for the ranks the model actually uses.
  T& at2(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  T at2(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  T& at3(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T at3(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T& at4(int i, int j, int k, int l) {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  T at4(int i, int j, int k, int l) const {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }

  static std::size_t checked_numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (const int d : s) {
      if (d <= 0) throw config_error("tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

template <typename From, typename To>
TensorT<To> cast_tensor(const TensorT<From>& t) {
  TensorT<To> out(t.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<To>(t.data[i]);
  return out;
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (const T v : t.data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

}  // namespace pfedcr
