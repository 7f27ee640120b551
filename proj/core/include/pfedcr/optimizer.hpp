#pragma once

#include <vector>

#include "pfedcr/param.hpp"

namespace pfedcr {

/// Adadelta over every parameter whose group appears in `unfrozen`; frozen
/// parameters keep value, gradient, and accumulators untouched. Per element:
///   acc_g = rho*acc_g + (1-rho)*g^2
///   delta = -sqrt(acc_d + eps)/sqrt(acc_g + eps) * g
///   acc_d = rho*acc_d + (1-rho)*delta^2
///   value += lr_scale * delta
/// The accumulators track the unscaled delta.
template <typename T>
void adadelta_step(ParamSetT<T>& params, const std::vector<ParamGroup>& unfrozen,
                   T lr_scale, T rho, T eps);

/// Cosine decay across rounds: 0.5*(1+cos(pi*t/(T-1))), defined as 1 when
/// T == 1. Throws range_error for t outside [0, T).
double cosine_round_scale(int round_index, int total_rounds);

}  // namespace pfedcr
