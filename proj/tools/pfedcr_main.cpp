#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdint>
#include <exception>
#include <string>

#include "pfedcr/commands.hpp"

namespace {

struct Options {
  std::string config_path;
  std::string out_dir;
  std::string algorithm;
  std::string buckets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool auto_generate = false;
  int seeds = 1;
};

pfedcr::ExperimentConfig build_config(const Options& o) {
  pfedcr::ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = pfedcr::load_experiment_config(o.config_path);
  if (o.seed_given) cfg.seed = o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.algorithm.empty()) cfg.train.algorithm = pfedcr::algorithm_from_name(o.algorithm);
  if (!o.buckets.empty()) cfg.buckets = o.buckets;
  if (o.auto_generate) cfg.auto_generate = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"personalized federated text-line recognition simulator"};
  app.require_subcommand(1);

  Options o;
  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "experiment config JSON file");
    sub->add_option("--out", o.out_dir, "output directory override");
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&o](std::uint64_t v) {
          o.seed = v;
          o.seed_given = true;
        },
        "seed override");
    sub->add_option("--buckets", o.buckets, "frequency bucket preset (desk, table4)");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a corpus into the output directory");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "run an algorithm and write checkpoints");
  add_common(train);
  train->add_option("--algorithm", o.algorithm,
                    "local, local_attention, local_pretrain, fedavg, fedavg_ft, fedprox, pfedcr");
  train->add_flag("--auto-generate", o.auto_generate, "generate the corpus if missing");

  CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints against the corpus");
  add_common(eval);
  eval->add_option("--algorithm", o.algorithm, "algorithm whose checkpoints to load");

  CLI::App* ablate = app.add_subcommand("ablate", "run the component grid");
  add_common(ablate);
  ablate->add_option("--seeds", o.seeds, "number of consecutive seeds")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    pfedcr::ExperimentConfig cfg = build_config(o);
    if (gen->parsed())
      pfedcr::cmd_gen(cfg);
    else if (train->parsed())
      pfedcr::cmd_train(cfg);
    else if (eval->parsed())
      pfedcr::cmd_eval(cfg);
    else if (ablate->parsed())
      pfedcr::cmd_ablate(cfg, o.seeds);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
