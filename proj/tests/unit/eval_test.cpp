#include "pfedcr/eval.hpp"

#include <array>
#include <climits>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <doctest.h>

#include "pfedcr/ctc.hpp"
#include "pfedcr/errors.hpp"

using namespace pfedcr;

namespace {

struct EvalBench {
  GlyphAtlas atlas;
  std::vector<ClientData> clients;
  Dataset virtual_data;
  ModelConfig mcfg;

  EvalBench() {
    CorpusConfig ccfg;
    ccfg.alphabet_size = 6;
    ccfg.base_clients = 2;
    ccfg.n_train = 10;
    ccfg.n_test = 6;
    atlas = generate_atlas(ccfg.alphabet_size, 21);
    for (const auto& spec : make_client_specs(ccfg, 21))
      clients.push_back(sample_client_dataset(spec, atlas, 21));
    virtual_data = build_virtual_balanced(atlas, 8, 21);
    mcfg.conv_channels = {3, 4, 6};
    mcfg.recurrent_hidden = 6;
    mcfg.alphabet_size = ccfg.alphabet_size;
  }
};

/// Single-sample reference decode, bypassing the batched evaluation path.
LabelSeq decode_one(const ParamSet& params, const ModelConfig& cfg, const Tensor& image) {
  Tensor batch({1, 1, image.shape[1], image.shape[2]});
  batch.data = image.data;
  const Tensor logits =
      model_forward(params, cfg, batch, static_cast<ForwardCache*>(nullptr));
  Tensor single({logits.shape[0], logits.shape[2]});
  for (int t = 0; t < logits.shape[0]; ++t)
    for (int a = 0; a < logits.shape[2]; ++a) single.at2(t, a) = logits.at3(t, 0, a);
  return greedy_decode(single);
}

}  // namespace

TEST_CASE("alignment marks surviving characters after a deletion") {
  const auto flags = align_correct({1, 2}, {2});
  CHECK(flags == std::vector<bool>{false, true});
}

TEST_CASE("alignment covers exact, empty, substituted, and inserted cases") {
  CHECK(align_correct({1, 2, 3}, {1, 2, 3}) == std::vector<bool>{true, true, true});
  CHECK(align_correct({1, 2}, {}) == std::vector<bool>{false, false});
  CHECK(align_correct({}, {1, 2}).empty());
  CHECK(align_correct({1, 2, 3}, {1, 5, 3}) == std::vector<bool>{true, false, true});
  CHECK(align_correct({1, 3}, {1, 2, 3}) == std::vector<bool>{true, true});
}

TEST_CASE("alignment ties prefer the diagonal, keeping matches") {
  // Both a (1<->2 substitution, insert 1) and a (insert 2, 1<->1 match)
  // alignment cost 1; the diagonal preference keeps the match.
  CHECK(align_correct({1}, {2, 1}) == std::vector<bool>{true});
  CHECK(align_correct({1}, {1, 2}) == std::vector<bool>{true});
  CHECK(align_correct({1}, {2}) == std::vector<bool>{false});
}

TEST_CASE("bucket presets expose their edges and labels") {
  const BucketSpec desk = bucket_preset("desk");
  CHECK(desk.ranges == std::vector<std::pair<int, int>>{{0, 0},
                                                        {1, 10},
                                                        {11, 20},
                                                        {21, 30},
                                                        {31, 100},
                                                        {101, INT_MAX}});
  CHECK(desk.labels == std::vector<std::string>{"0-0", "1-10", "11-20", "21-30", "31-100",
                                                "101+"});

  const BucketSpec t4 = bucket_preset("table4");
  CHECK(t4.ranges == std::vector<std::pair<int, int>>{{0, 0},
                                                      {1, 10},
                                                      {11, 20},
                                                      {21, 30},
                                                      {200, 400},
                                                      {401, 800}});
  CHECK(t4.labels == std::vector<std::string>{"0-0", "1-10", "11-20", "21-30", "200-400",
                                              "400-800"});

  CHECK_THROWS_AS(bucket_preset("table5"), config_error);
}

TEST_CASE("sequence accuracy agrees with per-sample greedy decoding") {
  EvalBench eb;
  const ParamSet model = build_model(eb.mcfg, 9);
  const Dataset& data = eb.clients[0].test;

  std::size_t correct = 0;
  for (const Sample& s : data.samples)
    if (decode_one(model, eb.mcfg, s.image) == s.label) ++correct;
  const double expected = static_cast<double>(correct) / data.samples.size();

  CHECK(sequence_accuracy(model, eb.mcfg, data) == expected);

  Dataset empty;
  CHECK_THROWS_AS(sequence_accuracy(model, eb.mcfg, empty), config_error);
}

TEST_CASE("bucket accuracy matches a per-character alignment recount") {
  EvalBench eb;
  const ParamSet model = build_model(eb.mcfg, 9);
  const Dataset& data = eb.clients[0].test;
  const std::vector<int>& freq = eb.clients[0].train.freq;
  const BucketSpec buckets = bucket_preset("desk");

  const auto reported = char_bucket_accuracy(model, eb.mcfg, data, freq, buckets);

  std::vector<std::size_t> total(buckets.ranges.size(), 0);
  std::vector<std::size_t> hit(buckets.ranges.size(), 0);
  for (const Sample& s : data.samples) {
    const LabelSeq decoded = decode_one(model, eb.mcfg, s.image);
    const auto ok = align_correct(s.label.symbols, decoded.symbols);
    for (std::size_t c = 0; c < s.label.symbols.size(); ++c) {
      const auto b = bucket_of(freq[s.label.symbols[c] - 1], buckets.ranges);
      REQUIRE(b.has_value());
      ++total[*b];
      if (ok[c]) ++hit[*b];
    }
  }
  REQUIRE(reported.size() == buckets.ranges.size());
  for (std::size_t b = 0; b < reported.size(); ++b) {
    if (total[b] == 0) {
      CHECK_FALSE(reported[b].has_value());
    } else {
      REQUIRE(reported[b].has_value());
      CHECK(*reported[b] == static_cast<double>(hit[b]) / total[b]);
    }
  }
}

TEST_CASE("bucket accuracy skips uncovered counts and rejects alien symbols") {
  EvalBench eb;
  const ParamSet model = build_model(eb.mcfg, 9);
  const Dataset& data = eb.clients[0].test;

  // No interval covers any plausible count: every character is skipped and
  // every bucket comes back absent.
  const BucketSpec none = {{{100000, 200000}}, {"unreachable"}};
  const auto out = char_bucket_accuracy(model, eb.mcfg, data, eb.clients[0].train.freq,
                                        none);
  REQUIRE(out.size() == 1);
  CHECK_FALSE(out[0].has_value());

  const std::vector<int> short_freq(3, 1);  // symbols up to 6 appear in the data
  CHECK_THROWS_AS(char_bucket_accuracy(model, eb.mcfg, data, short_freq,
                                       bucket_preset("desk")),
                  config_error);

  const BucketSpec ragged = {{{0, 0}, {1, 10}}, {"0-0"}};
  CHECK_THROWS_AS(char_bucket_accuracy(model, eb.mcfg, data, eb.clients[0].train.freq,
                                       ragged),
                  config_error);
}

TEST_CASE("cross-client matrix pairs every model with every test split") {
  EvalBench eb;
  const std::vector<ParamSet> models = {build_model(eb.mcfg, 9), build_model(eb.mcfg, 10)};
  const std::vector<const Dataset*> tests = {&eb.clients[0].test, &eb.clients[1].test};

  const auto matrix = cross_client_matrix(models, eb.mcfg, tests);
  REQUIRE(matrix.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(matrix[i].size() == 2);
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(matrix[i][j] == sequence_accuracy(models[i], eb.mcfg, *tests[j]));
  }

  CHECK_THROWS_AS(cross_client_matrix(models, eb.mcfg, {&eb.clients[0].test}),
                  config_error);
}

TEST_CASE("the ablation grid runs five fixed rows") {
  EvalBench eb;
  TrainConfig cfg;
  cfg.clients = 2;
  cfg.rounds = 1;
  cfg.batch_size = 4;
  cfg.seed = 21;

  const auto rows = run_ablation(cfg, eb.mcfg, eb.clients, eb.virtual_data);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].label == "fedavg-equivalent");
  CHECK(rows[1].label == "virtual");
  CHECK(rows[2].label == "virtual+eca");
  CHECK(rows[3].label == "virtual+eca+freeze");
  CHECK(rows[4].label == "full");

  const std::vector<std::array<bool, 4>> expected_flags = {
      {false, false, false, false},
      {true, false, false, false},
      {true, true, false, false},
      {true, true, true, false},
      {true, true, true, true},
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    CHECK(rows[r].flags.use_virtual_data == expected_flags[r][0]);
    CHECK(rows[r].flags.use_eca == expected_flags[r][1]);
    CHECK(rows[r].flags.freeze_head == expected_flags[r][2]);
    CHECK(rows[r].flags.stage2 == expected_flags[r][3]);

    REQUIRE(rows[r].client_acc.size() == 2);
    const double mean = (rows[r].client_acc[0] + rows[r].client_acc[1]) / 2.0;
    CHECK(rows[r].mean_acc == doctest::Approx(mean).epsilon(1e-15));
    CHECK(std::isfinite(rows[r].mean_acc));
  }

  TrainConfig bad = cfg;
  bad.algorithm = Algorithm::fedavg;
  CHECK_THROWS_AS(run_ablation(bad, eb.mcfg, eb.clients, eb.virtual_data), config_error);
}
