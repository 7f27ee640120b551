#include "pfedcr/gradcheck.hpp"

#include <cmath>

#include <doctest.h>

#include "pfedcr/param.hpp"
#include "pfedcr/tensor.hpp"

using namespace pfedcr;

TEST_CASE("rel_error basics") {
  CHECK(rel_error(1.0, 1.0, 1e-6) == 0.0);
  CHECK(rel_error(2.0, 1.0, 1e-6) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  // Both near zero: the floor keeps the ratio bounded.
  CHECK(rel_error(1e-12, -1e-12, 1e-6) == doctest::Approx(2e-6).epsilon(1e-9));
  CHECK(rel_error(0.0, 0.0, 1e-6) == 0.0);
}

namespace {

// Quadratic-with-coupling loss: L = sum_i a_i x_i^2 + x_0 * x_1.
// dL/dx_i = 2 a_i x_i (+ x_1 for i=0, + x_0 for i=1).
struct QuadLoss {
  std::vector<double> a;
  ParamSetT<double>* ps;
  double operator()() const {
    const auto& x = (*ps)[0].value.data;
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) loss += a[i] * x[i] * x[i];
    return loss + x[0] * x[1];
  }
};

ParamSetT<double> quad_params() {
  TensorT<double> v({4});
  v.data = {0.3, -1.2, 2.0, 0.05};
  ParamSetT<double> ps;
  ps.params.emplace_back("x", ParamGroup::body, v);
  return ps;
}

}  // namespace

TEST_CASE("check_param_gradients accepts a correct analytic gradient") {
  auto ps = quad_params();
  QuadLoss loss{{1.0, 0.5, -0.25, 2.0}, &ps};
  const auto& x = ps[0].value.data;
  ps[0].grad.data = {2.0 * loss.a[0] * x[0] + x[1], 2.0 * loss.a[1] * x[1] + x[0],
                     2.0 * loss.a[2] * x[2], 2.0 * loss.a[3] * x[3]};

  const auto before = ps[0].value.data;
  const auto res = check_param_gradients(ps, loss, {});
  CHECK(res.checked == 4);
  CHECK(res.max_rel_error < 1e-8);
  CHECK(ps[0].value.data == before);  // bit-exact restore
}

TEST_CASE("check_param_gradients flags a wrong analytic gradient") {
  auto ps = quad_params();
  QuadLoss loss{{1.0, 0.5, -0.25, 2.0}, &ps};
  const auto& x = ps[0].value.data;
  ps[0].grad.data = {2.0 * loss.a[0] * x[0] + x[1], 2.0 * loss.a[1] * x[1] + x[0],
                     2.0 * loss.a[2] * x[2], 2.0 * loss.a[3] * x[3]};
  ps[0].grad.data[2] *= 1.5;  // deliberate corruption

  const auto res = check_param_gradients(ps, loss, {});
  CHECK(res.max_rel_error > 0.1);
}

TEST_CASE("sampling bounds the number of probed scalars") {
  auto ps = quad_params();
  QuadLoss loss{{1.0, 1.0, 1.0, 1.0}, &ps};
  const auto& x = ps[0].value.data;
  ps[0].grad.data = {2.0 * x[0] + x[1], 2.0 * x[1] + x[0], 2.0 * x[2], 2.0 * x[3]};

  GradCheckConfig cfg;
  cfg.samples_per_tensor = 2;
  const auto res = check_param_gradients(ps, loss, cfg);
  CHECK(res.checked == 2);
  CHECK(res.max_rel_error < 1e-8);
}

TEST_CASE("check_tensor_gradient matches an elementwise cubic") {
  TensorT<double> x({3});
  x.data = {0.5, -0.75, 1.25};
  // L = sum x_i^3, dL/dx_i = 3 x_i^2.
  TensorT<double> analytic({3});
  for (int i = 0; i < 3; ++i) analytic.data[i] = 3.0 * x.data[i] * x.data[i];

  const auto loss = [&x]() {
    double s = 0.0;
    for (const double v : x.data) s += v * v * v;
    return s;
  };
  const auto res = check_tensor_gradient(x, analytic, loss, {});
  CHECK(res.checked == 3);
  CHECK(res.max_rel_error < 1e-8);

  analytic.data[1] = 0.0;
  const auto bad = check_tensor_gradient(x, analytic, loss, {});
  CHECK(bad.max_rel_error > 0.1);
}
