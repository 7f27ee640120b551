#include "pfedcr/config.hpp"

#include <string>

#include <doctest.h>

#include "pfedcr/errors.hpp"

using namespace pfedcr;

TEST_CASE("defaults survive an empty object") {
  const auto cfg = parse_experiment_config("{}", "test");
  CHECK(cfg.model.input_height == 32);
  CHECK(cfg.model.conv_channels == std::vector<int>{16, 32, 64});
  CHECK(cfg.model.recurrent_hidden == 64);
  CHECK(cfg.train.algorithm == Algorithm::pfedcr);
  CHECK(cfg.train.rounds == 35);
  CHECK(cfg.train.local_epochs == 1);
  CHECK(cfg.train.server_epochs == 1);
  CHECK(cfg.train.batch_size == 128);
  CHECK(cfg.train.adadelta_rho == 0.9);
  CHECK(cfg.train.adadelta_eps == 1e-6);
  CHECK(cfg.train.flags.use_virtual_data);
  CHECK(cfg.train.flags.use_eca);
  CHECK(cfg.train.flags.freeze_head);
  CHECK(cfg.train.flags.stage2);
  CHECK(cfg.corpus.alphabet_size == 40);
  CHECK(cfg.corpus.base_clients == 3);
  CHECK(cfg.corpus.n_train == 2000);
  CHECK(cfg.corpus.zipf_exponent == 1.2);
  CHECK(cfg.corpus.support_fraction == 0.75);
  CHECK(cfg.n_virtual == 0);
  CHECK(cfg.n_probe == 300);
  CHECK(cfg.buckets == "desk");
  CHECK(cfg.seed == 1);
  CHECK_FALSE(cfg.auto_generate);
}

TEST_CASE("nested values are parsed and strict keys enforced") {
  const std::string text = R"({
    "seed": 9,
    "model": {"input_height": 16, "pools": [[2,2],[2,1]], "conv_channels": [8,16]},
    "train": {"algorithm": "fedprox", "fedprox_mu": 0.05, "batch_size": 16},
    "corpus": {"alphabet_size": 12, "n_train": 50}
  })";
  const auto cfg = parse_experiment_config(text, "test");
  CHECK(cfg.seed == 9);
  CHECK(cfg.model.input_height == 16);
  CHECK(cfg.model.pools == std::vector<std::pair<int, int>>{{2, 2}, {2, 1}});
  CHECK(cfg.train.algorithm == Algorithm::fedprox);
  CHECK(cfg.train.fedprox_mu == 0.05);
  CHECK(cfg.corpus.alphabet_size == 12);

  CHECK_THROWS_AS(parse_experiment_config(R"({"sede": 1})", "test"), config_error);
  CHECK_THROWS_AS(parse_experiment_config(R"({"train": {"epochs": 3}})", "test"),
                  config_error);
  CHECK_THROWS_AS(parse_experiment_config(R"({"model": {"use_eca": true}})", "test"),
                  config_error);
  CHECK_THROWS_AS(parse_experiment_config("[1,2]", "test"), config_error);
  CHECK_THROWS_AS(parse_experiment_config("{not json", "test"), config_error);
  CHECK_THROWS_AS(parse_experiment_config(R"({"train": {"algorithm": "sgd"}})", "test"),
                  config_error);
  CHECK_THROWS_AS(parse_experiment_config(R"({"model": {"pools": [[2]]}})", "test"),
                  config_error);
}

TEST_CASE("serialize then parse is lossless") {
  auto cfg = parse_experiment_config("{}", "test");
  cfg.seed = 1234;
  cfg.train.algorithm = Algorithm::local_attention;
  cfg.train.batch_size = 9;
  cfg.corpus.zipf_exponent = 1.7;
  cfg.n_virtual = 42;
  const auto text = experiment_config_to_json(cfg);
  const auto back = parse_experiment_config(text, "round-trip");
  CHECK(back.seed == 1234);
  CHECK(back.train.algorithm == Algorithm::local_attention);
  CHECK(back.train.batch_size == 9);
  CHECK(back.corpus.zipf_exponent == 1.7);
  CHECK(back.n_virtual == 42);
  CHECK(experiment_config_to_json(back) == text);
}

TEST_CASE("finalize ties alphabet, client count, and seed together") {
  auto cfg = parse_experiment_config(
      R"({"corpus": {"alphabet_size": 14, "base_clients": 2, "clones_per_client": 3}})",
      "test");
  cfg.seed = 55;
  finalize_experiment_config(cfg);
  CHECK(cfg.model.alphabet_size == 14);
  CHECK(cfg.train.clients == 6);
  CHECK(cfg.train.seed == 55);

  auto bad = parse_experiment_config(R"({"n_probe": 0})", "test");
  CHECK_THROWS_AS(finalize_experiment_config(bad), config_error);
  bad = parse_experiment_config(R"({"model": {"input_height": 30}})", "test");
  CHECK_THROWS_AS(finalize_experiment_config(bad), config_error);
  bad = parse_experiment_config(R"({"train": {"rounds": 0}})", "test");
  CHECK_THROWS_AS(finalize_experiment_config(bad), config_error);
}

TEST_CASE("virtual line count derives from the corpus when unset") {
  auto cfg = parse_experiment_config("{}", "test");
  CHECK(effective_virtual_lines(cfg) == 5 * 2000 / 3);
  cfg.n_virtual = 777;
  CHECK(effective_virtual_lines(cfg) == 777);
  cfg = parse_experiment_config(R"({"corpus": {"n_train": 60, "base_clients": 4}})", "test");
  CHECK(effective_virtual_lines(cfg) == 75);
}

TEST_CASE("missing config files raise io errors") {
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/cfg.json"), io_error);
}
