#include "pfedcr/ctc.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include "pfedcr/errors.hpp"
#include "pfedcr/gradcheck.hpp"
#include "pfedcr/rng.hpp"
#include "pfedcr/tensor.hpp"

using namespace pfedcr;

namespace {

std::vector<double> row_softmax(const std::vector<double>& row) {
  double sum = 0.0;
  for (const double v : row) sum += std::exp(v);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = std::exp(row[i]) / sum;
  return out;
}

}  // namespace

TEST_CASE("ctc_min_frames counts symbols plus separating blanks") {
  CHECK(ctc_min_frames({{}}) == 0);
  CHECK(ctc_min_frames({{1}}) == 1);
  CHECK(ctc_min_frames({{1, 2}}) == 2);
  CHECK(ctc_min_frames({{1, 1}}) == 3);
  CHECK(ctc_min_frames({{1, 1, 1}}) == 5);
  CHECK(ctc_min_frames({{2, 2, 3, 3}}) == 6);
}

TEST_CASE("single frame reduces to the softmax posterior") {
  TensorT<double> logits({1, 1, 3});
  logits.data = {0.2, 1.0, -0.5};
  const auto sm = row_softmax(logits.data);

  const auto res = ctc_loss(logits, {{{1}}});
  CHECK(res.loss == doctest::Approx(-std::log(sm[1])).epsilon(1e-14));
  // Only paths emitting symbol 1 at the single frame match the target.
  for (int a = 0; a < 3; ++a)
    CHECK(res.grad_logits.at3(0, 0, a) ==
          doctest::Approx(sm[a] - (a == 1 ? 1.0 : 0.0)).epsilon(1e-13));
}

TEST_CASE("two frames, one symbol: three alignments") {
  TensorT<double> logits({2, 1, 2});
  logits.data = {0.3, -0.2, -1.0, 0.7};
  const auto p0 = row_softmax({0.3, -0.2});
  const auto p1 = row_softmax({-1.0, 0.7});
  // Paths collapsing to [1]: (1,blank), (blank,1), (1,1).
  const double p = p0[1] * p1[0] + p0[0] * p1[1] + p0[1] * p1[1];

  const auto res = ctc_loss(logits, {{{1}}}, false);
  CHECK(res.loss == doctest::Approx(-std::log(p)).epsilon(1e-14));
}

TEST_CASE("repeated symbol forces the separating blank") {
  TensorT<double> logits({3, 1, 2});
  logits.data = {0.1, 0.4, 0.9, -0.3, -0.6, 0.2};
  const auto p0 = row_softmax({0.1, 0.4});
  const auto p1 = row_softmax({0.9, -0.3});
  const auto p2 = row_softmax({-0.6, 0.2});
  // The only path collapsing to [1,1] in three frames is (1, blank, 1).
  const double p = p0[1] * p1[0] * p2[1];

  const auto res = ctc_loss(logits, {{{1, 1}}}, false);
  CHECK(res.loss == doctest::Approx(-std::log(p)).epsilon(1e-14));
}

TEST_CASE("empty target scores the all-blank path") {
  TensorT<double> logits({3, 1, 3});
  logits.data = {0.4, -0.1, 0.3, 1.2, 0.0, -0.7, -0.2, 0.5, 0.1};
  double want = 0.0;
  for (int t = 0; t < 3; ++t) {
    std::vector<double> row(3);
    for (int a = 0; a < 3; ++a) row[a] = logits.at3(t, 0, a);
    want += -std::log(row_softmax(row)[0]);
  }
  const auto res = ctc_loss(logits, {LabelSeq{}}, false);
  CHECK(res.loss == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("batch loss is the mean and grads carry the 1/B factor") {
  RngStream rng(rng_seed(11, {rng_token("ctc-batch")}));
  TensorT<double> both({4, 2, 3});
  for (auto& v : both.data) v = rng.next_normal();
  const std::vector<LabelSeq> targets = {{{1, 2}}, {{2}}};

  double mean = 0.0;
  std::vector<TensorT<double>> singles;
  for (int b = 0; b < 2; ++b) {
    TensorT<double> one({4, 1, 3});
    for (int t = 0; t < 4; ++t)
      for (int a = 0; a < 3; ++a) one.at3(t, 0, a) = both.at3(t, b, a);
    const auto res = ctc_loss(one, {targets[b]});
    mean += res.loss / 2.0;
    singles.push_back(res.grad_logits);
  }

  const auto batched = ctc_loss(both, targets);
  CHECK(batched.loss == doctest::Approx(mean).epsilon(1e-13));
  for (int b = 0; b < 2; ++b)
    for (int t = 0; t < 4; ++t)
      for (int a = 0; a < 3; ++a)
        CHECK(batched.grad_logits.at3(t, b, a) ==
              doctest::Approx(singles[b].at3(t, 0, a) / 2.0).epsilon(1e-12));
}

TEST_CASE("loss matches exhaustive path enumeration on 150 random cases") {
  RngStream rng(rng_seed(23, {rng_token("ctc-brute")}));
  int cases = 0;
  while (cases < 150) {
    const int frames = static_cast<int>(rng.next_int(1, 6));
    const int alphabet = static_cast<int>(rng.next_int(1, 3));
    LabelSeq target;
    const int len = static_cast<int>(rng.next_int(0, frames));
    for (int i = 0; i < len; ++i)
      target.symbols.push_back(static_cast<int>(rng.next_int(1, alphabet)));
    if (ctc_min_frames(target) > frames) continue;

    TensorT<double> flat({frames, alphabet + 1});
    for (auto& v : flat.data) v = 2.0 * rng.next_normal();
    TensorT<double> batched({frames, 1, alphabet + 1});
    batched.data = flat.data;

    const double want = brute_force_ctc(flat, target);
    const double got = ctc_loss(batched, {target}, false).loss;
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
    CHECK(got >= 0.0);
    ++cases;
  }
}

TEST_CASE("float logits reproduce the double loss exactly") {
  // The dynamic program always runs in 64-bit; float input values are exactly
  // representable in double, so the loss must agree bit for bit.
  RngStream rng(rng_seed(31, {rng_token("ctc-float")}));
  TensorT<float> f({5, 2, 4});
  TensorT<double> d({5, 2, 4});
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    f.data[i] = static_cast<float>(rng.next_normal());
    d.data[i] = f.data[i];
  }
  const std::vector<LabelSeq> targets = {{{1, 3}}, {{2, 2}}};
  CHECK(ctc_loss(f, targets, false).loss == ctc_loss(d, targets, false).loss);
}

TEST_CASE("analytic gradient agrees with central differences") {
  RngStream rng(rng_seed(47, {rng_token("ctc-fd")}));
  for (const auto& target : std::vector<LabelSeq>{{{1, 2, 1}}, {{2, 2}}, {{3, 1, 3, 2}}}) {
    TensorT<double> logits({6, 1, 4});
    for (auto& v : logits.data) v = rng.next_normal();
    auto res = ctc_loss(logits, {target});
    const auto loss = [&]() { return ctc_loss(logits, {target}, false).loss; };
    const auto fd = check_tensor_gradient(logits, res.grad_logits, loss, {});
    CHECK(fd.checked == logits.data.size());
    CHECK(fd.max_rel_error < 1e-6);
  }
}

TEST_CASE("infeasible targets are rejected") {
  TensorT<double> logits({2, 1, 2});
  logits.data = {0.0, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(ctc_loss(logits, {{{1, 1}}}, false), infeasible_error);
  CHECK_THROWS_AS(ctc_loss(logits, {{{1, 1, 1}}}, false), infeasible_error);
}

TEST_CASE("target symbols outside [1, A] are config errors") {
  TensorT<double> logits({3, 1, 3});
  for (auto& v : logits.data) v = 0.0;
  CHECK_THROWS_AS(ctc_loss(logits, {{{0}}}, false), config_error);
  CHECK_THROWS_AS(ctc_loss(logits, {{{3}}}, false), config_error);
  CHECK_THROWS_AS(ctc_loss(logits, {{{-1}}}, false), config_error);
  CHECK_NOTHROW(ctc_loss(logits, {{{2}}}, false));
}

TEST_CASE("shape and finiteness violations") {
  TensorT<double> flat({3, 3});
  CHECK_THROWS_AS(ctc_loss(flat, {{{1}}}, false), config_error);

  TensorT<double> blank_only({3, 1, 1});
  CHECK_THROWS_AS(ctc_loss(blank_only, {LabelSeq{}}, false), config_error);

  TensorT<double> logits({3, 1, 3});
  CHECK_THROWS_AS(ctc_loss(logits, {{{1}}, {{2}}}, false), config_error);

  logits.data[4] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ctc_loss(logits, {{{1}}}, false), numeric_error);
  logits.data[4] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ctc_loss(logits, {{{1}}}, false), numeric_error);
}

TEST_CASE("brute force guards its enumeration budget") {
  TensorT<double> logits({11, 4});
  for (auto& v : logits.data) v = 0.0;
  CHECK_THROWS_AS(brute_force_ctc(logits, {{1}}), range_error);
}

TEST_CASE("greedy decode collapses runs and drops blanks") {
  // Column 0 is the blank. Build frames whose argmax spells 1,1,0,1,2,2,0,0,3.
  const std::vector<int> argmax = {1, 1, 0, 1, 2, 2, 0, 0, 3};
  TensorT<float> logits({static_cast<int>(argmax.size()), 4});
  for (std::size_t t = 0; t < argmax.size(); ++t)
    for (int a = 0; a < 4; ++a) logits.at2(static_cast<int>(t), a) = (a == argmax[t]) ? 1.0f : 0.0f;
  CHECK(greedy_decode(logits).symbols == std::vector<int>{1, 1, 2, 3});
}

TEST_CASE("greedy decode breaks ties toward the lowest class") {
  TensorT<float> logits({2, 3});
  logits.data = {0.5f, 0.5f, 0.2f,   // blank ties symbol 1: blank wins
                 0.1f, 0.9f, 0.9f};  // symbol 1 ties symbol 2: 1 wins
  CHECK(greedy_decode(logits).symbols == std::vector<int>{1});

  TensorT<float> all_blank({4, 3});
  for (auto& v : all_blank.data) v = 0.0f;
  CHECK(greedy_decode(all_blank).symbols.empty());
}
