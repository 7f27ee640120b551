#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace pfedcr {

/// Deterministic 64-bit generator (splitmix64) with hand-rolled
/// distributions, so streams are bit-reproducible independent of the
/// standard library implementation.
///
/// Streams are derived, never split: every consumer builds its seed from
/// the global seed plus a tag path, e.g.
///   RngStream(rng_seed(seed, {rng_token("data"), client_id, rng_token("train")}))
/// Changing one stream's inputs leaves every other stream untouched.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double next_unit();

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi);

  /// Standard normal via Box-Muller; draws two uniforms per pair.
  double next_normal();

  /// Index in [0, weights.size()) with probability proportional to weights.
  std::size_t next_weighted(const std::vector<double>& cumulative);

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(next_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool have_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// FNV-1a hash of a tag string, for use as a derivation token.
std::uint64_t rng_token(std::string_view tag);

/// Mixes a base seed with a token path into an independent stream seed.
std::uint64_t rng_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tokens);

/// Cumulative sums of a weight vector, normalized to end at 1.
std::vector<double> cumulative_weights(const std::vector<double>& weights);

}  // namespace pfedcr
