#include "pfedcr/commands.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "pfedcr/checkpoint.hpp"
#include "pfedcr/errors.hpp"
#include "pfedcr/eval.hpp"
#include "pfedcr/metrics.hpp"

namespace pfedcr {
namespace fs = std::filesystem;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error(fmt::format("cannot create directory '{}': {}", dir, ec.message()));
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(fmt::format("cannot open '{}' for writing", path));
  out << text;
  if (!out.flush()) throw io_error(fmt::format("failed writing '{}'", path));
}

void write_effective_config(const ExperimentConfig& cfg) {
  write_text(join(cfg.out_dir, "effective_config.json"), experiment_config_to_json(cfg));
}

bool standalone_algorithm(Algorithm a) {
  return a == Algorithm::local || a == Algorithm::local_attention ||
         a == Algorithm::local_pretrain;
}

std::string client_part_path(const std::string& dir, int k, const char* part) {
  return join(dir, fmt::format("client{}_{}.pfcr", k, part));
}

struct Corpus {
  std::vector<ClientData> clients;
  std::vector<Dataset> probes;
  Dataset virtual_data;
};

Corpus generate_corpus(const ExperimentConfig& cfg) {
  Corpus c;
  GlyphAtlas atlas = generate_atlas(cfg.corpus.alphabet_size, cfg.seed);
  std::vector<ClientSpec> specs = make_client_specs(cfg.corpus, cfg.seed);
  for (const ClientSpec& spec : specs) {
    c.clients.push_back(sample_client_dataset(spec, atlas, cfg.seed));
    c.probes.push_back(build_probe_dataset(spec, atlas, cfg.n_probe, cfg.seed));
  }
  c.virtual_data = build_virtual_balanced(atlas, effective_virtual_lines(cfg), cfg.seed);
  return c;
}

void save_corpus(const std::string& dir, const Corpus& c, int alphabet) {
  for (std::size_t k = 0; k < c.clients.size(); ++k) {
    int ki = static_cast<int>(k);
    save_dataset(client_part_path(dir, ki, "train"), c.clients[k].train, alphabet);
    save_dataset(client_part_path(dir, ki, "test"), c.clients[k].test, alphabet);
    save_dataset(client_part_path(dir, ki, "probe"), c.probes[k], alphabet);
  }
  save_dataset(join(dir, "virtual.pfcr"), c.virtual_data, alphabet);
}

bool corpus_present(const std::string& dir, int clients) {
  if (!fs::exists(join(dir, "virtual.pfcr"))) return false;
  for (int k = 0; k < clients; ++k)
    for (const char* part : {"train", "test", "probe"})
      if (!fs::exists(client_part_path(dir, k, part))) return false;
  return true;
}

Corpus load_corpus(const std::string& dir, const ExperimentConfig& cfg) {
  Corpus c;
  int alphabet = cfg.corpus.alphabet_size;
  for (int k = 0; k < cfg.train.clients; ++k) {
    ClientData cd;
    cd.train = load_dataset(client_part_path(dir, k, "train"), alphabet);
    cd.test = load_dataset(client_part_path(dir, k, "test"), alphabet);
    c.clients.push_back(std::move(cd));
    c.probes.push_back(load_dataset(client_part_path(dir, k, "probe"), alphabet));
  }
  c.virtual_data = load_dataset(join(dir, "virtual.pfcr"), alphabet);
  return c;
}

Corpus obtain_corpus(const ExperimentConfig& cfg, bool allow_generate) {
  if (corpus_present(cfg.out_dir, cfg.train.clients)) return load_corpus(cfg.out_dir, cfg);
  if (!allow_generate)
    throw config_error(
        fmt::format("no corpus in '{}'; run the gen command for this config first, or set "
                    "auto_generate",
                    cfg.out_dir));
  Corpus c = generate_corpus(cfg);
  ensure_dir(cfg.out_dir);
  save_corpus(cfg.out_dir, c, cfg.corpus.alphabet_size);
  return c;
}

std::string checkpoint_path(const ExperimentConfig& cfg, int k) {
  const char* stem = cfg.train.algorithm == Algorithm::pfedcr ? "personalized" : "client";
  return join(cfg.out_dir, fmt::format("{}{}.ckpt", stem, k));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

void cmd_gen(ExperimentConfig cfg) {
  finalize_experiment_config(cfg);
  ensure_dir(cfg.out_dir);
  Corpus c = generate_corpus(cfg);
  save_corpus(cfg.out_dir, c, cfg.corpus.alphabet_size);
  write_effective_config(cfg);
  fmt::print(
      "wrote corpus for {} clients to '{}' ({} train / {} test / {} probe lines per client, "
      "{} virtual)\n",
      cfg.train.clients, cfg.out_dir, cfg.corpus.n_train, cfg.corpus.n_test, cfg.n_probe,
      effective_virtual_lines(cfg));
}

void cmd_train(ExperimentConfig cfg) {
  finalize_experiment_config(cfg);
  ensure_dir(cfg.out_dir);
  Corpus corpus = obtain_corpus(cfg, cfg.auto_generate);

  RunHooks hooks;
  hooks.on_round = [](const RoundReport& rep) {
    double acc = 0.0;
    double loss = 0.0;
    for (const ClientRoundMetrics& c : rep.clients) {
      acc += c.seq_acc_local_test;
      loss += c.mean_ctc_loss;
    }
    double n = static_cast<double>(rep.clients.size());
    fmt::print("round {:3d}: mean client accuracy {:.4f}, mean train loss {:.4f}\n", rep.round,
               acc / n, loss / n);
  };

  RunResult run;
  if (cfg.train.algorithm == Algorithm::pfedcr)
    run = run_pfedcr(cfg.train, cfg.model, corpus.clients, corpus.virtual_data, &hooks);
  else
    run = run_baseline(cfg.train, cfg.model, corpus.clients, &corpus.virtual_data, &hooks);

  MetricsSink sink;
  for (const RoundReport& rep : run.reports) sink.add_report(rep);
  sink.write_csv(join(cfg.out_dir, "metrics.csv"));
  sink.write_json(join(cfg.out_dir, "metrics.json"));

  if (!standalone_algorithm(cfg.train.algorithm))
    save_checkpoint(join(cfg.out_dir, "global.ckpt"), run.state.global);
  for (int k = 0; k < cfg.train.clients; ++k)
    save_checkpoint(checkpoint_path(cfg, k), run.state.personalized[static_cast<std::size_t>(k)]);
  write_effective_config(cfg);

  const RoundReport& last = run.reports.back();
  double acc = 0.0;
  for (const ClientRoundMetrics& c : last.clients) acc += c.seq_acc_local_test;
  fmt::print("final mean client accuracy: {:.4f}\n",
             acc / static_cast<double>(last.clients.size()));
}

void cmd_eval(ExperimentConfig cfg) {
  finalize_experiment_config(cfg);
  Corpus corpus = obtain_corpus(cfg, false);

  ModelConfig mcfg = effective_model_config(cfg.model, cfg.train);
  ParamSet reference = build_model(mcfg, cfg.seed);

  std::vector<ParamSet> models;
  for (int k = 0; k < cfg.train.clients; ++k) {
    std::string path = checkpoint_path(cfg, k);
    ParamSet m = load_checkpoint(path);
    if (!same_structure(m, reference))
      throw checkpoint_error(fmt::format("'{}' does not match the configured model", path));
    models.push_back(std::move(m));
  }

  std::vector<const Dataset*> tests;
  tests.reserve(corpus.clients.size());
  for (const ClientData& c : corpus.clients) tests.push_back(&c.test);
  std::vector<std::vector<double>> matrix = cross_client_matrix(models, mcfg, tests);

  std::vector<double> own_acc;
  for (std::size_t k = 0; k < models.size(); ++k) own_acc.push_back(matrix[k][k]);

  std::vector<double> global_acc;
  bool have_global = fs::exists(join(cfg.out_dir, "global.ckpt"));
  if (have_global) {
    ParamSet global = load_checkpoint(join(cfg.out_dir, "global.ckpt"));
    if (!same_structure(global, reference))
      throw checkpoint_error(
          fmt::format("'{}' does not match the configured model", join(cfg.out_dir, "global.ckpt")));
    for (const Dataset* test : tests) global_acc.push_back(sequence_accuracy(global, mcfg, *test));
  }

  BucketSpec buckets = bucket_preset(cfg.buckets);
  std::vector<std::vector<std::optional<double>>> bucket_rows;
  for (std::size_t k = 0; k < models.size(); ++k)
    bucket_rows.push_back(char_bucket_accuracy(models[k], mcfg, corpus.probes[k],
                                               corpus.clients[k].train.freq, buckets));

  std::string algo(algorithm_name(cfg.train.algorithm));

  // accuracy.csv: one row per client, own-test accuracy plus global where it exists.
  {
    std::string csv = "client,algorithm,seq_acc,global_seq_acc\n";
    for (std::size_t k = 0; k < own_acc.size(); ++k)
      csv += fmt::format("{},{},{},{}\n", k, algo, own_acc[k],
                         have_global ? fmt::format("{}", global_acc[k]) : std::string("nan"));
    write_text(join(cfg.out_dir, "accuracy.csv"), csv);
  }

  // cross_matrix.csv: row = model, column = test split.
  {
    std::string csv = "model";
    for (std::size_t j = 0; j < models.size(); ++j) csv += fmt::format(",client{}", j);
    csv += "\n";
    for (std::size_t i = 0; i < models.size(); ++i) {
      csv += fmt::format("{}", i);
      for (std::size_t j = 0; j < models.size(); ++j) csv += fmt::format(",{}", matrix[i][j]);
      csv += "\n";
    }
    write_text(join(cfg.out_dir, "cross_matrix.csv"), csv);
  }

  // buckets.csv: per-client character accuracy by train-frequency bucket;
  // empty cells mark buckets with no characters.
  {
    std::string csv = "client";
    for (const std::string& label : buckets.labels) csv += fmt::format(",{}", label);
    csv += "\n";
    for (std::size_t k = 0; k < bucket_rows.size(); ++k) {
      csv += fmt::format("{}", k);
      for (const std::optional<double>& v : bucket_rows[k])
        csv += v.has_value() ? fmt::format(",{}", *v) : std::string(",");
      csv += "\n";
    }
    write_text(join(cfg.out_dir, "buckets.csv"), csv);
  }

  {
    nlohmann::json j;
    j["algorithm"] = algo;
    j["clients"] = cfg.train.clients;
    j["seq_acc"] = own_acc;
    if (have_global)
      j["global_seq_acc"] = global_acc;
    else
      j["global_seq_acc"] = nullptr;
    j["cross_matrix"] = matrix;
    nlohmann::json jb;
    jb["labels"] = buckets.labels;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : bucket_rows) {
      nlohmann::json r = nlohmann::json::array();
      for (const std::optional<double>& v : row)
        r.push_back(v.has_value() ? nlohmann::json(*v) : nlohmann::json(nullptr));
      rows.push_back(std::move(r));
    }
    jb["per_client"] = std::move(rows);
    j["buckets"] = std::move(jb);
    write_text(join(cfg.out_dir, "eval_report.json"), j.dump(2) + "\n");
  }

  fmt::print("algorithm {}: mean client accuracy {:.4f}\n", algo, mean_of(own_acc));
  for (std::size_t k = 0; k < own_acc.size(); ++k) {
    if (have_global)
      fmt::print("  client {}: acc {:.4f} (global {:.4f})\n", k, own_acc[k], global_acc[k]);
    else
      fmt::print("  client {}: acc {:.4f}\n", k, own_acc[k]);
  }
  double off_sum = 0.0;
  int off_n = 0;
  for (std::size_t i = 0; i < matrix.size(); ++i)
    for (std::size_t j = 0; j < matrix.size(); ++j)
      if (i != j) {
        off_sum += matrix[i][j];
        ++off_n;
      }
  if (off_n > 0) fmt::print("mean off-diagonal accuracy: {:.4f}\n", off_sum / off_n);
}

void cmd_ablate(ExperimentConfig cfg, int seeds) {
  if (seeds < 1) throw config_error("ablation needs at least one seed");
  cfg.train.algorithm = Algorithm::pfedcr;
  finalize_experiment_config(cfg);
  ensure_dir(cfg.out_dir);

  std::vector<std::uint64_t> seed_list;
  std::vector<std::vector<AblationRow>> per_seed;
  for (int s = 0; s < seeds; ++s) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(s);
    finalize_experiment_config(run_cfg);
    Corpus corpus = generate_corpus(run_cfg);
    per_seed.push_back(
        run_ablation(run_cfg.train, run_cfg.model, corpus.clients, corpus.virtual_data));
    seed_list.push_back(run_cfg.seed);
    fmt::print("seed {}:", run_cfg.seed);
    for (const AblationRow& row : per_seed.back())
      fmt::print(" {}={:.4f}", row.label, row.mean_acc);
    fmt::print("\n");
  }

  std::size_t n_rows = per_seed.front().size();
  std::size_t n_clients = per_seed.front().front().client_acc.size();

  // ablation.csv: flag grid with per-client and mean accuracies averaged over
  // seeds; multi-seed runs append the max-min spread of the per-seed means.
  std::string csv = "label,virtual,eca,freeze,stage2";
  for (std::size_t k = 0; k < n_clients; ++k) csv += fmt::format(",client{}", k);
  csv += ",mean";
  if (seeds > 1) csv += ",spread";
  csv += "\n";

  nlohmann::json jrows = nlohmann::json::array();
  for (std::size_t r = 0; r < n_rows; ++r) {
    const AblationRow& first = per_seed.front()[r];
    std::vector<double> client_mean(n_clients, 0.0);
    double mean_sum = 0.0;
    double mean_lo = per_seed.front()[r].mean_acc;
    double mean_hi = mean_lo;
    nlohmann::json jseeds = nlohmann::json::array();
    for (int s = 0; s < seeds; ++s) {
      const AblationRow& row = per_seed[static_cast<std::size_t>(s)][r];
      for (std::size_t k = 0; k < n_clients; ++k) client_mean[k] += row.client_acc[k];
      mean_sum += row.mean_acc;
      mean_lo = std::min(mean_lo, row.mean_acc);
      mean_hi = std::max(mean_hi, row.mean_acc);
      nlohmann::json js;
      js["seed"] = seed_list[static_cast<std::size_t>(s)];
      js["client_acc"] = row.client_acc;
      js["mean_acc"] = row.mean_acc;
      jseeds.push_back(std::move(js));
    }
    for (double& v : client_mean) v /= seeds;
    double mean = mean_sum / seeds;
    double spread = mean_hi - mean_lo;

    csv += fmt::format("{},{},{},{},{}", first.label, int(first.flags.use_virtual_data),
                       int(first.flags.use_eca), int(first.flags.freeze_head),
                       int(first.flags.stage2));
    for (double v : client_mean) csv += fmt::format(",{}", v);
    csv += fmt::format(",{}", mean);
    if (seeds > 1) csv += fmt::format(",{}", spread);
    csv += "\n";

    nlohmann::json jr;
    jr["label"] = first.label;
    jr["flags"] = {{"use_virtual_data", first.flags.use_virtual_data},
                   {"use_eca", first.flags.use_eca},
                   {"freeze_head", first.flags.freeze_head},
                   {"stage2", first.flags.stage2}};
    jr["client_acc"] = client_mean;
    jr["mean_acc"] = mean;
    jr["spread"] = spread;
    jr["per_seed"] = std::move(jseeds);
    jrows.push_back(std::move(jr));
  }
  write_text(join(cfg.out_dir, "ablation.csv"), csv);

  nlohmann::json j;
  j["seeds"] = seed_list;
  j["rows"] = std::move(jrows);
  write_text(join(cfg.out_dir, "ablation.json"), j.dump(2) + "\n");
  write_effective_config(cfg);
}

}  // namespace pfedcr
