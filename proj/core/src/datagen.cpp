#include "pfedcr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "pfedcr/errors.hpp"

namespace pfedcr {
namespace {

constexpr int kGlyphH = 16;
constexpr int kGlyphW = 12;
constexpr int kLineH = 32;
constexpr int kSpacing = 2;
constexpr int kMinLen = 3;
constexpr int kMaxLen = 10;
constexpr double kSupportEpsilon = 1e-12;

Tensor draw_glyph(RngStream& rng) {
  Tensor g({kGlyphH, kGlyphW});
  const auto set = [&](int y, int x) {
    if (y >= 0 && y < kGlyphH && x >= 0 && x < kGlyphW) g.at2(y, x) = 1.0f;
  };
  const int strokes = static_cast<int>(rng.next_int(3, 6));
  for (int s = 0; s < strokes; ++s) {
    const int kind = static_cast<int>(rng.next_int(0, 3));
    int y = static_cast<int>(rng.next_int(0, kGlyphH - 1));
    int x = static_cast<int>(rng.next_int(0, kGlyphW - 1));
    const int len = static_cast<int>(rng.next_int(4, 10));
    const bool thick = rng.next_int(0, 1) == 1;
    const int dy = kind == 0 ? 0 : (kind == 3 ? -1 : 1);
    const int dx = kind == 1 ? 0 : 1;
    for (int step = 0; step < len; ++step) {
      set(y, x);
      if (thick) set(y + (dx != 0 ? 1 : 0), x + (dx != 0 ? 0 : 1));
      y += dy;
      x += dx;
    }
  }
  return g;
}

int set_pixels(const Tensor& g) {
  int n = 0;
  for (const float v : g.data) n += v != 0.0f ? 1 : 0;
  return n;
}

std::vector<double> zipf_client_weights(int alphabet, double exponent,
                                        double support_fraction,
                                        const std::vector<int>& permutation) {
  const int support =
      std::max(1, static_cast<int>(std::lround(support_fraction * alphabet)));
  std::vector<double> weights(alphabet, 0.0);
  for (int rank = 0; rank < alphabet; ++rank) {
    const double w = rank < support
                         ? 1.0 / std::pow(static_cast<double>(rank + 1), exponent)
                         : kSupportEpsilon;
    weights[permutation[rank]] = w;
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= total;
  return weights;
}

LabelSeq draw_label(const std::vector<double>& cumulative, RngStream& rng) {
  LabelSeq label;
  const int len = static_cast<int>(rng.next_int(kMinLen, kMaxLen));
  label.symbols.reserve(len);
  for (int i = 0; i < len; ++i)
    label.symbols.push_back(static_cast<int>(rng.next_weighted(cumulative)) + 1);
  return label;
}

Dataset sample_split(const GlyphAtlas& atlas, const std::vector<double>& cumulative,
                     const StyleParams& style, int n_lines, std::uint64_t stream_seed,
                     bool fill_freq) {
  RngStream rng(stream_seed);
  Dataset out;
  out.samples.reserve(n_lines);
  out.freq.assign(atlas.alphabet_size, 0);
  for (int i = 0; i < n_lines; ++i) {
    LabelSeq label = draw_label(cumulative, rng);
    Tensor image = render_line(atlas, label, style, rng);
    if (fill_freq)
      for (const int s : label.symbols) ++out.freq[s - 1];
    out.samples.push_back({std::move(image), std::move(label)});
  }
  return out;
}

}  // namespace

GlyphAtlas generate_atlas(int alphabet_size, std::uint64_t seed) {
  if (alphabet_size < 1)
    throw config_error(fmt::format("atlas: alphabet_size {} < 1", alphabet_size));
  GlyphAtlas atlas;
  atlas.alphabet_size = alphabet_size;
  atlas.glyphs.reserve(alphabet_size);
  for (int c = 0; c < alphabet_size; ++c) {
    RngStream rng(rng_seed(seed, {rng_token("atlas"), static_cast<std::uint64_t>(c)}));
    Tensor g;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      g = draw_glyph(rng);
      ok = set_pixels(g) >= 8;
      for (const Tensor& other : atlas.glyphs)
        if (ok && other.data == g.data) ok = false;
    }
    if (!ok) throw protocol_error(fmt::format("atlas: could not draw distinct glyph {}", c));
    atlas.glyphs.push_back(std::move(g));
  }
  return atlas;
}

std::vector<int> count_chars(const Dataset& data, int alphabet_size) {
  std::vector<int> freq(alphabet_size, 0);
  for (const Sample& s : data.samples)
    for (const int sym : s.label.symbols) {
      if (sym < 1 || sym > alphabet_size)
        throw protocol_error(fmt::format("dataset: symbol {} outside [1,{}]", sym,
                                         alphabet_size));
      ++freq[sym - 1];
    }
  return freq;
}

void validate_dataset(const Dataset& data, int alphabet_size) {
  if (data.freq != count_chars(data, alphabet_size))
    throw protocol_error("dataset: freq table does not match recount");
}

Tensor render_line(const GlyphAtlas& atlas, const LabelSeq& label, const StyleParams& style,
                   RngStream& rng) {
  const int n = static_cast<int>(label.symbols.size());
  if (n < 1 || n > 12)
    throw range_error(fmt::format("render_line: label length {} outside [1,12]", n));
  const int glyph_w = 2 * kGlyphW;
  const int raw_w = n * glyph_w + (n - 1) * kSpacing;
  const int width = (raw_w + 3) / 4 * 4;
  Tensor image({1, kLineH, width});
  for (int i = 0; i < n; ++i) {
    const int sym = label.symbols[i];
    if (sym < 1 || sym > atlas.alphabet_size)
      throw range_error(fmt::format("render_line: symbol {} outside [1,{}]", sym,
                                    atlas.alphabet_size));
    const Tensor& g = atlas.glyphs[sym - 1];
    const int x0 = i * (glyph_w + kSpacing);
    for (int y = 0; y < kGlyphH; ++y)
      for (int x = 0; x < kGlyphW; ++x) {
        const float v = g.at2(y, x);
        image.at3(0, 2 * y, x0 + 2 * x) = v;
        image.at3(0, 2 * y, x0 + 2 * x + 1) = v;
        image.at3(0, 2 * y + 1, x0 + 2 * x) = v;
        image.at3(0, 2 * y + 1, x0 + 2 * x + 1) = v;
      }
  }
  const float bg = static_cast<float>(style.background_level);
  const float sigma = static_cast<float>(style.noise_sigma);
  const float contrast = static_cast<float>(style.contrast);
  for (float& v : image.data) {
    v += bg * (1.0f - v);
    v += sigma * static_cast<float>(rng.next_normal());
    v = 0.5f + contrast * (v - 0.5f);
    v = std::clamp(v, 0.0f, 1.0f);
  }
  return image;
}

ClientData sample_client_dataset(const ClientSpec& spec, const GlyphAtlas& atlas,
                                 std::uint64_t seed) {
  if (spec.n_train < 1 || spec.n_test < 1)
    throw config_error(fmt::format("client {}: n_train/n_test must be >= 1", spec.client_id));
  if (static_cast<int>(spec.char_weights.size()) != atlas.alphabet_size)
    throw config_error(fmt::format("client {}: weight table length {} != alphabet {}",
                                   spec.client_id, spec.char_weights.size(),
                                   atlas.alphabet_size));
  const auto cumulative = cumulative_weights(spec.char_weights);
  const std::uint64_t cid = static_cast<std::uint64_t>(spec.client_id);
  ClientData data;
  data.train = sample_split(atlas, cumulative, spec.style, spec.n_train,
                            rng_seed(seed, {rng_token("data"), cid, rng_token("train")}),
                            true);
  data.test = sample_split(atlas, cumulative, spec.style, spec.n_test,
                           rng_seed(seed, {rng_token("data"), cid, rng_token("test")}),
                           false);
  validate_dataset(data.train, atlas.alphabet_size);
  return data;
}

Dataset build_virtual_balanced(const GlyphAtlas& atlas, int n_lines, std::uint64_t seed) {
  if (n_lines < atlas.alphabet_size)
    throw config_error(fmt::format("virtual data: n_lines {} < alphabet {}", n_lines,
                                   atlas.alphabet_size));
  const std::vector<double> uniform(atlas.alphabet_size,
                                    1.0 / static_cast<double>(atlas.alphabet_size));
  Dataset out = sample_split(atlas, cumulative_weights(uniform), StyleParams{}, n_lines,
                             rng_seed(seed, {rng_token("data"), rng_token("virtual")}),
                             true);
  validate_dataset(out, atlas.alphabet_size);
  return out;
}

Dataset build_probe_dataset(const ClientSpec& spec, const GlyphAtlas& atlas, int n_lines,
                            std::uint64_t seed) {
  if (n_lines < 1) throw config_error("probe data: n_lines < 1");
  const std::vector<double> uniform(atlas.alphabet_size,
                                    1.0 / static_cast<double>(atlas.alphabet_size));
  const std::uint64_t cid = static_cast<std::uint64_t>(spec.client_id);
  return sample_split(atlas, cumulative_weights(uniform), spec.style, n_lines,
                      rng_seed(seed, {rng_token("data"), cid, rng_token("probe")}), true);
}

std::optional<std::size_t> bucket_of(int count,
                                     const std::vector<std::pair<int, int>>& buckets) {
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    if (buckets[i].first > buckets[i].second)
      throw config_error(fmt::format("buckets: interval [{},{}] is inverted",
                                     buckets[i].first, buckets[i].second));
    for (std::size_t j = i + 1; j < buckets.size(); ++j)
      if (buckets[i].first <= buckets[j].second && buckets[j].first <= buckets[i].second)
        throw config_error(fmt::format("buckets: [{},{}] overlaps [{},{}]",
                                       buckets[i].first, buckets[i].second,
                                       buckets[j].first, buckets[j].second));
  }
  for (std::size_t i = 0; i < buckets.size(); ++i)
    if (count >= buckets[i].first && count <= buckets[i].second) return i;
  return std::nullopt;
}

std::vector<ClientSpec> make_client_specs(const CorpusConfig& cfg, std::uint64_t seed) {
  if (cfg.alphabet_size < 1 || cfg.base_clients < 1 || cfg.clones_per_client < 1)
    throw config_error("corpus: alphabet_size, base_clients, clones_per_client must be >= 1");
  if (cfg.support_fraction <= 0.0 || cfg.support_fraction > 1.0)
    throw config_error(fmt::format("corpus: support_fraction {} outside (0,1]",
                                   cfg.support_fraction));
  const int support = std::max(
      1, static_cast<int>(std::lround(cfg.support_fraction * cfg.alphabet_size)));

  // Redraw all permutations until every symbol is inside some client's
  // supported ranks; each attempt uses fresh derived streams.
  std::vector<std::vector<int>> perms;
  std::vector<StyleParams> styles;
  bool covered = false;
  for (std::uint64_t attempt = 0; attempt < 1000 && !covered; ++attempt) {
    perms.assign(cfg.base_clients, {});
    styles.assign(cfg.base_clients, {});
    std::vector<bool> seen(cfg.alphabet_size, false);
    for (int k = 0; k < cfg.base_clients; ++k) {
      RngStream rng(rng_seed(seed, {rng_token("spec"), static_cast<std::uint64_t>(k),
                                    attempt}));
      std::vector<int> perm(cfg.alphabet_size);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      for (int rank = 0; rank < support; ++rank) seen[perm[rank]] = true;
      perms[k] = std::move(perm);
      styles[k].background_level = 0.3 * rng.next_unit();
      styles[k].noise_sigma = 0.15 * rng.next_unit();
      styles[k].contrast = 0.6 + 0.4 * rng.next_unit();
    }
    covered = std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
  }
  if (!covered)
    throw protocol_error("corpus: could not cover the alphabet across client supports");

  std::vector<ClientSpec> specs;
  specs.reserve(static_cast<std::size_t>(cfg.base_clients) * cfg.clones_per_client);
  for (int k = 0; k < cfg.base_clients; ++k) {
    const auto weights = zipf_client_weights(cfg.alphabet_size, cfg.zipf_exponent,
                                             cfg.support_fraction, perms[k]);
    for (int j = 0; j < cfg.clones_per_client; ++j) {
      ClientSpec spec;
      spec.client_id = k * cfg.clones_per_client + j;
      spec.char_weights = weights;
      spec.style = styles[k];
      spec.n_train = cfg.n_train;
      spec.n_test = cfg.n_test;
      specs.push_back(std::move(spec));
    }
  }
  return specs;
}

}  // namespace pfedcr
