#pragma once

#include "pfedcr/config.hpp"

namespace pfedcr {

/// Generates the corpus (client splits, probe sets, balanced virtual set) and
/// writes it with the effective config under cfg.out_dir.
void cmd_gen(ExperimentConfig cfg);

/// Runs the configured algorithm and writes metrics.csv, metrics.json, and
/// the final checkpoints under cfg.out_dir. Uses the corpus found there,
/// generating one first when cfg.auto_generate is set.
void cmd_train(ExperimentConfig cfg);

/// Loads the trained checkpoints and writes the accuracy table, the KxK
/// cross-client matrix, and the per-bucket character accuracy table.
void cmd_eval(ExperimentConfig cfg);

/// Runs the component grid over `seeds` consecutive seeds starting at
/// cfg.seed; writes ablation.csv and ablation.json.
void cmd_ablate(ExperimentConfig cfg, int seeds);

}  // namespace pfedcr
