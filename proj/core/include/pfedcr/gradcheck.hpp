#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>

#include "pfedcr/param.hpp"
#include "pfedcr/tensor.hpp"

namespace pfedcr {

/// |a - n| / max(|a| + |n|, floor); the floor keeps near-zero pairs from
/// inflating the ratio.
inline double rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max(std::abs(analytic) + std::abs(numeric), floor);
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckConfig {
  double step = 1e-5;
  double floor = 1e-6;
  int samples_per_tensor = 0;  // 0 checks every scalar
  std::uint64_t seed = 0;      // subset selection when sampling
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central-difference check of params.grad against the scalar loss closure.
/// The closure must recompute the loss from current parameter values; analytic
/// gradients must already be stored in params before the call. Parameter
/// values are restored bit-exactly.
GradCheckResult check_param_gradients(ParamSetT<double>& params,
                                      const std::function<double()>& loss,
                                      const GradCheckConfig& cfg);

/// Same, for the gradient of the loss with respect to one input tensor.
GradCheckResult check_tensor_gradient(TensorT<double>& x, const TensorT<double>& analytic,
                                      const std::function<double()>& loss,
                                      const GradCheckConfig& cfg);

}  // namespace pfedcr
