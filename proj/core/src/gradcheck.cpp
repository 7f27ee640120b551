#include "pfedcr/gradcheck.hpp"

#include <numeric>
#include <vector>

#include "pfedcr/rng.hpp"

namespace pfedcr {
namespace {

std::vector<std::size_t> pick_indices(std::size_t count, int samples, RngStream& rng) {
  std::vector<std::size_t> all(count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (samples <= 0 || static_cast<std::size_t>(samples) >= count) return all;
  rng.shuffle(all);
  all.resize(static_cast<std::size_t>(samples));
  return all;
}

void check_scalar(double& slot, double analytic, const std::function<double()>& loss,
                  const GradCheckConfig& cfg, GradCheckResult& result) {
  const double saved = slot;
  slot = saved + cfg.step;
  const double up = loss();
  slot = saved - cfg.step;
  const double down = loss();
  slot = saved;
  const double numeric = (up - down) / (2.0 * cfg.step);
  result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic, numeric, cfg.floor));
  ++result.checked;
}

}  // namespace

GradCheckResult check_param_gradients(ParamSetT<double>& params,
                                      const std::function<double()>& loss,
                                      const GradCheckConfig& cfg) {
  GradCheckResult result;
  RngStream rng(rng_seed(cfg.seed, {rng_token("gradcheck")}));
  for (ParamT<double>& p : params.params) {
    const auto indices = pick_indices(p.value.data.size(), cfg.samples_per_tensor, rng);
    for (const std::size_t i : indices)
      check_scalar(p.value.data[i], p.grad.data[i], loss, cfg, result);
  }
  return result;
}

GradCheckResult check_tensor_gradient(TensorT<double>& x, const TensorT<double>& analytic,
                                      const std::function<double()>& loss,
                                      const GradCheckConfig& cfg) {
  GradCheckResult result;
  RngStream rng(rng_seed(cfg.seed, {rng_token("gradcheck-input")}));
  const auto indices = pick_indices(x.data.size(), cfg.samples_per_tensor, rng);
  for (const std::size_t i : indices)
    check_scalar(x.data[i], analytic.data[i], loss, cfg, result);
  return result;
}

}  // namespace pfedcr
