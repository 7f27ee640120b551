#include "pfedcr/rng.hpp"

#include <algorithm>
#include <cmath>

#include "pfedcr/errors.hpp"

namespace pfedcr {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::next_u64() { return splitmix64(state_); }

double RngStream::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::int64_t RngStream::next_int(std::int64_t lo, std::int64_t hi) {
  if (lo > hi) throw range_error("next_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 2^64 range
  // Rejection sampling over the largest multiple of span, bias-free.
  const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % span);
}

double RngStream::next_normal() {
  if (have_spare_normal_) {
    have_spare_normal_ = false;
    return spare_normal_;
  }
  double u1 = next_unit();
  const double u2 = next_unit();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_normal_ = radius * std::sin(angle);
  have_spare_normal_ = true;
  return radius * std::cos(angle);
}

std::size_t RngStream::next_weighted(const std::vector<double>& cumulative) {
  const double u = next_unit();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  const auto idx = static_cast<std::size_t>(it - cumulative.begin());
  return std::min(idx, cumulative.size() - 1);
}

std::uint64_t rng_token(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t rng_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tokens) {
  std::uint64_t state = base;
  std::uint64_t mixed = splitmix64(state);
  for (const std::uint64_t t : tokens) {
    state = mixed ^ t;
    mixed = splitmix64(state);
  }
  return mixed;
}

std::vector<double> cumulative_weights(const std::vector<double>& weights) {
  if (weights.empty()) throw config_error("cumulative_weights: empty weight vector");
  std::vector<double> cum(weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw config_error("cumulative_weights: negative weight");
    total += weights[i];
    cum[i] = total;
  }
  if (total <= 0.0) throw config_error("cumulative_weights: weights sum to zero");
  for (double& c : cum) c /= total;
  cum.back() = 1.0;
  return cum;
}

}  // namespace pfedcr
