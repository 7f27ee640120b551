#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pfedcr/datagen.hpp"
#include "pfedcr/fedsim.hpp"
#include "pfedcr/model.hpp"
#include "pfedcr/param.hpp"

namespace pfedcr {

/// Fraction of samples whose greedy decode matches the label exactly.
/// Samples are forwarded in equal-width groups; results are order-invariant.
double sequence_accuracy(const ParamSet& params, const ModelConfig& cfg,
                         const Dataset& data);

/// Alignment flags per ground-truth character: true when the minimum-edit
/// alignment pairs it with an identical prediction. Backtrace ties prefer
/// match, then substitution, then deletion, then insertion.
std::vector<bool> align_correct(const std::vector<int>& truth,
                                const std::vector<int>& pred);

/// Named bucket edges for the frequency analysis.
struct BucketSpec {
  std::vector<std::pair<int, int>> ranges;
  std::vector<std::string> labels;
};

/// "desk" (default working edges) or "table4" (the paper-style preset).
BucketSpec bucket_preset(std::string_view name);

/// Per-bucket character accuracy. Each decode is aligned to its label by
/// minimum edit distance (unit costs; ties prefer match, then substitution,
/// then deletion, then insertion); a ground-truth character is correct iff
/// aligned to an identical prediction. Characters are bucketed by their count
/// in `train_freq`, which may come from a different split than `data`.
/// Buckets containing no characters are reported absent.
std::vector<std::optional<double>> char_bucket_accuracy(const ParamSet& params,
                                                        const ModelConfig& cfg,
                                                        const Dataset& data,
                                                        const std::vector<int>& train_freq,
                                                        const BucketSpec& buckets);

/// Entry (i,j) = accuracy of model i on client j's test split.
std::vector<std::vector<double>> cross_client_matrix(
    const std::vector<ParamSet>& models, const ModelConfig& cfg,
    const std::vector<const Dataset*>& test_sets);

/// One ablation row: the flag vector, per-client accuracies, and their mean.
struct AblationRow {
  std::string label;
  AblationFlags flags;
  std::vector<double> client_acc;
  double mean_acc = 0.0;
};

/// Runs the five-row flag grid (none; V; V+E; V+E+F; all) under the given
/// config; row order is fixed. cfg.algorithm must be pfedcr.
std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const ModelConfig& base_mcfg,
                                      const std::vector<ClientData>& clients,
                                      const Dataset& virtual_data);

}  // namespace pfedcr
