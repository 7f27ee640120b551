#include "pfedcr/optimizer.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include <doctest.h>

#include "pfedcr/errors.hpp"
#include "pfedcr/param.hpp"

using namespace pfedcr;

namespace {

ParamSetT<double> single_param(double value, double grad) {
  ParamSetT<double> ps;
  TensorT<double> v({1});
  v.data[0] = value;
  ps.params.emplace_back("w", ParamGroup::body, v);
  ps.params[0].grad.data[0] = grad;
  return ps;
}

}  // namespace

TEST_CASE("adadelta single step matches the scalar recurrence") {
  auto ps = single_param(0.0, 1.0);
  const double rho = 0.9, eps = 1e-6;
  adadelta_step(ps, {ParamGroup::body}, 1.0, rho, eps);

  const double acc_g = (1.0 - rho) * 1.0;
  const double delta = -std::sqrt(eps) / std::sqrt(acc_g + eps) * 1.0;
  const double acc_d = (1.0 - rho) * delta * delta;
  CHECK(ps[0].acc_grad_sq.data[0] == doctest::Approx(acc_g).epsilon(1e-14));
  CHECK(ps[0].value.data[0] == doctest::Approx(delta).epsilon(1e-14));
  CHECK(ps[0].acc_delta_sq.data[0] == doctest::Approx(acc_d).epsilon(1e-14));
}

TEST_CASE("adadelta multi step matches a loop oracle") {
  auto ps = single_param(0.5, 0.0);
  const double rho = 0.9, eps = 1e-6;
  const double grads[] = {1.0, -2.0, 0.25, 3.0};

  double value = 0.5, acc_g = 0.0, acc_d = 0.0;
  for (const double g : grads) {
    ps[0].grad.data[0] = g;
    adadelta_step(ps, {ParamGroup::body}, 1.0, rho, eps);

    acc_g = rho * acc_g + (1.0 - rho) * g * g;
    const double delta = -std::sqrt(acc_d + eps) / std::sqrt(acc_g + eps) * g;
    acc_d = rho * acc_d + (1.0 - rho) * delta * delta;
    value += delta;
    CHECK(ps[0].value.data[0] == doctest::Approx(value).epsilon(1e-13));
    CHECK(ps[0].acc_grad_sq.data[0] == doctest::Approx(acc_g).epsilon(1e-13));
    CHECK(ps[0].acc_delta_sq.data[0] == doctest::Approx(acc_d).epsilon(1e-13));
  }
}

TEST_CASE("frozen groups keep value and accumulators untouched") {
  ParamSetT<double> ps;
  TensorT<double> v({2});
  v.data = {1.0, 2.0};
  ps.params.emplace_back("head.weight", ParamGroup::head, v);
  ps.params.emplace_back("conv1.weight", ParamGroup::body, v);
  for (auto& p : ps.params) p.grad.data = {5.0, -5.0};

  adadelta_step(ps, {ParamGroup::body}, 1.0, 0.9, 1e-6);

  CHECK(ps[0].value.data == std::vector<double>{1.0, 2.0});
  CHECK(ps[0].acc_grad_sq.data == std::vector<double>{0.0, 0.0});
  CHECK(ps[0].acc_delta_sq.data == std::vector<double>{0.0, 0.0});
  CHECK(ps[1].value.data[0] != 1.0);
}

TEST_CASE("learning-rate scale shrinks the applied update but not the state") {
  auto full = single_param(0.0, 1.0);
  auto half = single_param(0.0, 1.0);
  adadelta_step(full, {ParamGroup::body}, 1.0, 0.9, 1e-6);
  adadelta_step(half, {ParamGroup::body}, 0.5, 0.9, 1e-6);

  CHECK(half[0].value.data[0] == doctest::Approx(0.5 * full[0].value.data[0]).epsilon(1e-14));
  // The accumulators track the unscaled delta, so they agree exactly.
  CHECK(half[0].acc_grad_sq.data[0] == full[0].acc_grad_sq.data[0]);
  CHECK(half[0].acc_delta_sq.data[0] == full[0].acc_delta_sq.data[0]);
}

TEST_CASE("zero learning-rate scale leaves the value in place") {
  auto ps = single_param(3.0, 1.0);
  adadelta_step(ps, {ParamGroup::body}, 0.0, 0.9, 1e-6);
  CHECK(ps[0].value.data[0] == 3.0);
  CHECK(ps[0].acc_grad_sq.data[0] > 0.0);  // state still advances
}

TEST_CASE("cosine schedule hits the documented endpoints") {
  CHECK(cosine_round_scale(0, 10) == 1.0);
  CHECK(cosine_round_scale(9, 10) == 0.0);
  CHECK(cosine_round_scale(1, 3) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(cosine_round_scale(0, 1) == 1.0);
  CHECK(cosine_round_scale(17, 35) ==
        doctest::Approx(0.5 * (1.0 + std::cos(M_PI * 17.0 / 34.0))).epsilon(1e-15));
}

TEST_CASE("cosine schedule rejects out-of-range rounds") {
  CHECK_THROWS_AS(cosine_round_scale(-1, 10), range_error);
  CHECK_THROWS_AS(cosine_round_scale(10, 10), range_error);
  CHECK_THROWS_AS(cosine_round_scale(0, 0), range_error);
}
