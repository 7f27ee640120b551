#pragma once

#include <cstdint>
#include <string>

#include "pfedcr/datagen.hpp"
#include "pfedcr/fedsim.hpp"
#include "pfedcr/model.hpp"

namespace pfedcr {

/// Everything a run needs; serialized alongside every output directory so a
/// run is reconstructible from its artifacts.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  CorpusConfig corpus;
  int n_virtual = 0;  // 0 derives 5 * n_train / base_clients
  int n_probe = 300;
  std::string buckets = "desk";
  std::string out_dir = "out";
  bool auto_generate = false;
  std::uint64_t seed = 1;
};

/// Strict JSON parse: unknown keys are config errors. `origin` names the
/// source in diagnostics.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& origin);
ExperimentConfig load_experiment_config(const std::string& path);

std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// Ties the pieces together: copies the corpus alphabet into the model,
/// derives the client count and the training seed, then validates.
void finalize_experiment_config(ExperimentConfig& cfg);

int effective_virtual_lines(const ExperimentConfig& cfg);

}  // namespace pfedcr
