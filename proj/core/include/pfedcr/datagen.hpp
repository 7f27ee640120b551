#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "pfedcr/ctc.hpp"
#include "pfedcr/rng.hpp"
#include "pfedcr/tensor.hpp"

namespace pfedcr {

/// Procedurally generated binary glyph bitmaps, one 16x12 matrix per symbol.
struct GlyphAtlas {
  int alphabet_size = 0;
  std::vector<Tensor> glyphs;  // each [16,12], values 0/1, pairwise distinct
};

GlyphAtlas generate_atlas(int alphabet_size, std::uint64_t seed);

struct StyleParams {
  double background_level = 0.0;  // [0, 0.3]
  double noise_sigma = 0.0;       // [0, 0.15]
  double contrast = 1.0;          // [0.6, 1.0]
};

struct ClientSpec {
  int client_id = 0;
  std::vector<double> char_weights;  // length A, strictly positive, sums to 1
  StyleParams style;
  int n_train = 0;
  int n_test = 0;
};

struct Sample {
  Tensor image;  // [1,32,W]
  LabelSeq label;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<int> freq;  // length A, train-split character counts; index = symbol-1
};

/// Recount character occurrences over the samples.
std::vector<int> count_chars(const Dataset& data, int alphabet_size);

/// Asserts the stored freq table equals the recount; throws protocol_error.
void validate_dataset(const Dataset& data, int alphabet_size);

/// Renders glyphs at height 32 (2x upscale) with 2-px spacing, width padded
/// to a multiple of 4, then applies background shading, Gaussian noise, and
/// contrast, clamping to [0,1]. Neutral style reproduces the bitmaps exactly.
Tensor render_line(const GlyphAtlas& atlas, const LabelSeq& label, const StyleParams& style,
                   RngStream& rng);

/// Long-tailed client corpus: i.i.d. characters from spec.char_weights,
/// lengths uniform in [3,10], disjoint train/test streams derived from
/// (seed, client_id, split). The freq table covers the train split.
struct ClientData {
  Dataset train;
  Dataset test;
};

ClientData sample_client_dataset(const ClientSpec& spec, const GlyphAtlas& atlas,
                                 std::uint64_t seed);

/// Server-side balanced set: uniform characters, neutral style.
Dataset build_virtual_balanced(const GlyphAtlas& atlas, int n_lines, std::uint64_t seed);

/// Uniform-character probe in the client's own style, for per-bucket accuracy
/// on characters the client's train split lacks. Stream (seed, client_id, "probe").
Dataset build_probe_dataset(const ClientSpec& spec, const GlyphAtlas& atlas, int n_lines,
                            std::uint64_t seed);

/// Index of the [lo,hi] interval containing count, or nullopt when uncovered.
/// Overlapping intervals are a config_error.
std::optional<std::size_t> bucket_of(int count,
                                     const std::vector<std::pair<int, int>>& buckets);

struct CorpusConfig {
  int alphabet_size = 40;
  int base_clients = 3;
  int clones_per_client = 1;  // 3 reproduces the nine-client split
  int n_train = 2000;
  int n_test = 200;
  double zipf_exponent = 1.2;
  double support_fraction = 0.75;  // leading permutation ranks carrying real mass
};

/// Builds K = base_clients * clones_per_client specs. Each base client gets a
/// private symbol permutation with Zipf mass on the leading ranks and a
/// vanishing epsilon elsewhere, plus a random style; permutations are redrawn
/// until every symbol is in some client's supported ranks. Clones share
/// weights and style but sample distinct corpora through their client_id.
std::vector<ClientSpec> make_client_specs(const CorpusConfig& cfg, std::uint64_t seed);

}  // namespace pfedcr
