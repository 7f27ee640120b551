#include "pfedcr/config.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "pfedcr/errors.hpp"

namespace pfedcr {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& scope,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok)
      throw config_error(fmt::format("config: unknown key '{}{}'", scope, key));
  }
}

template <typename T>
void read_into(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(fmt::format("config: bad value for '{}': {}", key, e.what()));
  }
}

void parse_model(const json& obj, ModelConfig& m) {
  check_keys(obj, "model.",
             {"input_height", "conv_channels", "pools", "recurrent_hidden", "eca_gamma",
              "eca_b"});
  read_into(obj, "input_height", m.input_height);
  read_into(obj, "conv_channels", m.conv_channels);
  if (obj.contains("pools")) {
    m.pools.clear();
    for (const auto& p : obj.at("pools")) {
      if (!p.is_array() || p.size() != 2)
        throw config_error("config: each pool must be a [ph, pw] pair");
      m.pools.emplace_back(p[0].get<int>(), p[1].get<int>());
    }
  }
  read_into(obj, "recurrent_hidden", m.recurrent_hidden);
  read_into(obj, "eca_gamma", m.eca_gamma);
  read_into(obj, "eca_b", m.eca_b);
}

void parse_train(const json& obj, TrainConfig& t) {
  check_keys(obj, "train.",
             {"algorithm", "rounds", "local_epochs", "server_epochs", "batch_size",
              "fedprox_mu", "use_virtual_data", "use_eca", "freeze_head", "stage2",
              "adadelta_rho", "adadelta_eps", "pretrain_epochs",
              "aggregate_averaged_models"});
  if (obj.contains("algorithm"))
    t.algorithm = algorithm_from_name(obj.at("algorithm").get<std::string>());
  read_into(obj, "rounds", t.rounds);
  read_into(obj, "local_epochs", t.local_epochs);
  read_into(obj, "server_epochs", t.server_epochs);
  read_into(obj, "batch_size", t.batch_size);
  read_into(obj, "fedprox_mu", t.fedprox_mu);
  read_into(obj, "use_virtual_data", t.flags.use_virtual_data);
  read_into(obj, "use_eca", t.flags.use_eca);
  read_into(obj, "freeze_head", t.flags.freeze_head);
  read_into(obj, "stage2", t.flags.stage2);
  read_into(obj, "adadelta_rho", t.adadelta_rho);
  read_into(obj, "adadelta_eps", t.adadelta_eps);
  read_into(obj, "pretrain_epochs", t.pretrain_epochs);
  read_into(obj, "aggregate_averaged_models", t.aggregate_averaged_models);
}

void parse_corpus(const json& obj, CorpusConfig& c) {
  check_keys(obj, "corpus.",
             {"alphabet_size", "base_clients", "clones_per_client", "n_train", "n_test",
              "zipf_exponent", "support_fraction"});
  read_into(obj, "alphabet_size", c.alphabet_size);
  read_into(obj, "base_clients", c.base_clients);
  read_into(obj, "clones_per_client", c.clones_per_client);
  read_into(obj, "n_train", c.n_train);
  read_into(obj, "n_test", c.n_test);
  read_into(obj, "zipf_exponent", c.zipf_exponent);
  read_into(obj, "support_fraction", c.support_fraction);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw config_error(fmt::format("config '{}': {}", origin, e.what()));
  }
  if (!root.is_object())
    throw config_error(fmt::format("config '{}': top level must be an object", origin));
  check_keys(root, "",
             {"model", "train", "corpus", "n_virtual", "n_probe", "buckets", "out_dir",
              "auto_generate", "seed"});
  ExperimentConfig cfg;
  if (root.contains("model")) parse_model(root.at("model"), cfg.model);
  if (root.contains("train")) parse_train(root.at("train"), cfg.train);
  if (root.contains("corpus")) parse_corpus(root.at("corpus"), cfg.corpus);
  read_into(root, "n_virtual", cfg.n_virtual);
  read_into(root, "n_probe", cfg.n_probe);
  read_into(root, "buckets", cfg.buckets);
  read_into(root, "out_dir", cfg.out_dir);
  read_into(root, "auto_generate", cfg.auto_generate);
  read_into(root, "seed", cfg.seed);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(fmt::format("cannot open config '{}'", path));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), path);
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json pools = json::array();
  for (const auto& [ph, pw] : cfg.model.pools) pools.push_back({ph, pw});
  json root = {
      {"model",
       {{"input_height", cfg.model.input_height},
        {"conv_channels", cfg.model.conv_channels},
        {"pools", pools},
        {"recurrent_hidden", cfg.model.recurrent_hidden},
        {"eca_gamma", cfg.model.eca_gamma},
        {"eca_b", cfg.model.eca_b}}},
      {"train",
       {{"algorithm", std::string(algorithm_name(cfg.train.algorithm))},
        {"rounds", cfg.train.rounds},
        {"local_epochs", cfg.train.local_epochs},
        {"server_epochs", cfg.train.server_epochs},
        {"batch_size", cfg.train.batch_size},
        {"fedprox_mu", cfg.train.fedprox_mu},
        {"use_virtual_data", cfg.train.flags.use_virtual_data},
        {"use_eca", cfg.train.flags.use_eca},
        {"freeze_head", cfg.train.flags.freeze_head},
        {"stage2", cfg.train.flags.stage2},
        {"adadelta_rho", cfg.train.adadelta_rho},
        {"adadelta_eps", cfg.train.adadelta_eps},
        {"pretrain_epochs", cfg.train.pretrain_epochs},
        {"aggregate_averaged_models", cfg.train.aggregate_averaged_models}}},
      {"corpus",
       {{"alphabet_size", cfg.corpus.alphabet_size},
        {"base_clients", cfg.corpus.base_clients},
        {"clones_per_client", cfg.corpus.clones_per_client},
        {"n_train", cfg.corpus.n_train},
        {"n_test", cfg.corpus.n_test},
        {"zipf_exponent", cfg.corpus.zipf_exponent},
        {"support_fraction", cfg.corpus.support_fraction}}},
      {"n_virtual", cfg.n_virtual},
      {"n_probe", cfg.n_probe},
      {"buckets", cfg.buckets},
      {"out_dir", cfg.out_dir},
      {"auto_generate", cfg.auto_generate},
      {"seed", cfg.seed},
  };
  return root.dump(2) + "\n";
}

void finalize_experiment_config(ExperimentConfig& cfg) {
  cfg.model.alphabet_size = cfg.corpus.alphabet_size;
  cfg.train.clients = cfg.corpus.base_clients * cfg.corpus.clones_per_client;
  cfg.train.seed = cfg.seed;
  if (cfg.n_virtual < 0 || cfg.n_probe < 1)
    throw config_error("config: n_virtual must be >= 0 and n_probe >= 1");
  validate_model_config(effective_model_config(cfg.model, cfg.train));
  validate_train_config(cfg.train);
}

int effective_virtual_lines(const ExperimentConfig& cfg) {
  if (cfg.n_virtual > 0) return cfg.n_virtual;
  return 5 * cfg.corpus.n_train / cfg.corpus.base_clients;
}

}  // namespace pfedcr
