#include "pfedcr/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pfedcr/errors.hpp"

namespace pfedcr {

template <typename T>
void adadelta_step(ParamSetT<T>& params, const std::vector<ParamGroup>& unfrozen,
                   T lr_scale, T rho, T eps) {
  for (ParamT<T>& p : params.params) {
    if (std::find(unfrozen.begin(), unfrozen.end(), p.group) == unfrozen.end()) continue;
    const std::size_t n = p.value.data.size();
    for (std::size_t i = 0; i < n; ++i) {
      const T g = p.grad.data[i];
      T& acc_g = p.acc_grad_sq.data[i];
      T& acc_d = p.acc_delta_sq.data[i];
      acc_g = rho * acc_g + (T(1) - rho) * g * g;
      const T delta = -std::sqrt(acc_d + eps) / std::sqrt(acc_g + eps) * g;
      acc_d = rho * acc_d + (T(1) - rho) * delta * delta;
      p.value.data[i] += lr_scale * delta;
    }
  }
}

template void adadelta_step<float>(ParamSetT<float>&, const std::vector<ParamGroup>&,
                                   float, float, float);
template void adadelta_step<double>(ParamSetT<double>&, const std::vector<ParamGroup>&,
                                    double, double, double);

double cosine_round_scale(int round_index, int total_rounds) {
  if (total_rounds < 1)
    throw config_error(fmt::format("cosine_round_scale: total_rounds {} < 1", total_rounds));
  if (round_index < 0 || round_index >= total_rounds)
    throw range_error(fmt::format("cosine_round_scale: round {} outside [0, {})",
                                  round_index, total_rounds));
  if (total_rounds == 1) return 1.0;
  constexpr double kPi = 3.14159265358979323846;
  return 0.5 * (1.0 + std::cos(kPi * static_cast<double>(round_index) /
                               static_cast<double>(total_rounds - 1)));
}

}  // namespace pfedcr
