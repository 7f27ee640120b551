#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pfedcr/tensor.hpp"

namespace pfedcr {

/// Parameter partition used by freezing and stage-2 fine-tuning.
enum class ParamGroup { body, head, eca };

std::string_view group_name(ParamGroup g);
ParamGroup group_from_name(std::string_view name);

/// One named parameter tensor with its gradient and Adadelta accumulators.
template <typename T>
struct ParamT {
  std::string name;
  ParamGroup group = ParamGroup::body;
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> acc_grad_sq;   // running average of squared gradients
  TensorT<T> acc_delta_sq;  // running average of squared updates

  ParamT() = default;
  ParamT(std::string n, ParamGroup g, TensorT<T> v)
      : name(std::move(n)),
        group(g),
        value(std::move(v)),
        grad(value.shape),
        acc_grad_sq(value.shape),
        acc_delta_sq(value.shape) {}
};

/// Ordered collection of parameters; ordering is fixed at model build time
/// and preserved by every aggregation or update.
template <typename T>
struct ParamSetT {
  std::vector<ParamT<T>> params;

  ParamT<T>& operator[](std::size_t i) { return params[i]; }
  const ParamT<T>& operator[](std::size_t i) const { return params[i]; }
  std::size_t size() const { return params.size(); }

  ParamT<T>* find(std::string_view name) {
    for (auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }
  const ParamT<T>* find(std::string_view name) const {
    for (const auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grads() {
    for (auto& p : params)
      for (auto& g : p.grad.data) g = T(0);
  }

  void reset_opt_state() {
    for (auto& p : params) {
      for (auto& a : p.acc_grad_sq.data) a = T(0);
      for (auto& a : p.acc_delta_sq.data) a = T(0);
    }
  }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
  }
};

using Param = ParamT<float>;
using ParamSet = ParamSetT<float>;

/// True when both sets share the same (name, group, shape) sequence.
template <typename T>
bool same_structure(const ParamSetT<T>& a, const ParamSetT<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].group != b[i].group ||
        a[i].value.shape != b[i].value.shape)
      return false;
  }
  return true;
}

/// True when every value byte matches (grads and opt state ignored).
bool values_bitwise_equal(const ParamSet& a, const ParamSet& b);

ParamSetT<double> to_double(const ParamSet& ps);
ParamSet to_float(const ParamSetT<double>& ps);

}  // namespace pfedcr
