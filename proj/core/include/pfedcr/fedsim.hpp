#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "pfedcr/datagen.hpp"
#include "pfedcr/model.hpp"
#include "pfedcr/param.hpp"

namespace pfedcr {

enum class Algorithm {
  local,
  local_attention,
  local_pretrain,
  fedavg,
  fedavg_ft,
  fedprox,
  pfedcr,
};

std::string_view algorithm_name(Algorithm a);
Algorithm algorithm_from_name(std::string_view name);

/// Component switches studied in the ablation grid; they alter pfedcr only.
struct AblationFlags {
  bool use_virtual_data = true;
  bool use_eca = true;
  bool freeze_head = true;
  bool stage2 = true;
};

struct TrainConfig {
  Algorithm algorithm = Algorithm::pfedcr;
  int clients = 3;
  int rounds = 35;
  int local_epochs = 1;
  int server_epochs = 1;
  int batch_size = 128;
  double fedprox_mu = 0.01;
  AblationFlags flags;
  double adadelta_rho = 0.9;
  double adadelta_eps = 1e-6;
  int pretrain_epochs = 20;  // local_pretrain warmup on the virtual data
  /// Study switch: aggregate the clients' post-averaging models (Algorithm 1
  /// line 9 state) instead of the stage-1 uploads.
  bool aggregate_averaged_models = false;
  std::uint64_t seed = 0;
};

void validate_train_config(const TrainConfig& cfg);

/// The model actually trained under this algorithm: attention layers exist
/// for pfedcr (when its flag is on) and for the local_attention baseline.
ModelConfig effective_model_config(const ModelConfig& base, const TrainConfig& cfg);

struct RoundState {
  ParamSet global;
  std::vector<ParamSet> locals;
  std::vector<ParamSet> personalized;
  int round = 0;
};

struct ClientRoundMetrics {
  /// Accuracy of the model this algorithm hands the client: personalized for
  /// pfedcr, the round's aggregated global for fedavg/fedprox, the local
  /// model for the standalone baselines.
  double seq_acc_local_test = 0.0;
  /// Mean CTC loss over the client's local training batches this round.
  double mean_ctc_loss = 0.0;
  /// End-of-round global evaluated on this client's test split; NaN for the
  /// standalone baselines, which have no global.
  double seq_acc_global_test = 0.0;
};

struct RoundReport {
  int round = 0;
  Algorithm algorithm = Algorithm::pfedcr;
  std::vector<ClientRoundMetrics> clients;
};

/// Test hooks observing the simulated channel; uploads carry ParamSets only,
/// which is the privacy boundary. on_round fires after each round's report.
struct RunHooks {
  std::function<void(int round, int client, const ParamSet&)> on_upload;
  std::function<void(int round, const ParamSet&)> on_broadcast;
  std::function<void(const RoundReport&)> on_round;
};

struct RunResult {
  RoundState state;
  std::vector<RoundReport> reports;
};

/// One local training pass: equal-width batches in seeded order, CTC loss,
/// Adadelta over `unfrozen` groups scaled by lr_scale. When prox_mu > 0 the
/// gradient gains mu*(value - anchor) on unfrozen parameters. lr_scale == 0
/// computes the loss metric without touching any state.
struct EpochResult {
  double mean_loss = 0.0;
  int batches = 0;
};

EpochResult train_epoch(ParamSet& params, const ModelConfig& mcfg, const Dataset& data,
                        const std::vector<ParamGroup>& unfrozen, const TrainConfig& cfg,
                        double lr_scale, RngStream& order_rng,
                        const ParamSet* prox_anchor = nullptr, double prox_mu = 0.0);

/// Unweighted elementwise mean in client order, accumulated in 64-bit.
ParamSet aggregate(const std::vector<ParamSet>& locals);

/// Elementwise (a+b)*0.5 in 32-bit; the stage-2 initialization.
ParamSet average_pair(const ParamSet& a, const ParamSet& b);

/// Copies `global` and trains every group on the balanced set.
ParamSet server_finetune(const ParamSet& global, const ModelConfig& mcfg,
                         const Dataset& virtual_data, const TrainConfig& cfg, int epochs,
                         double lr_scale, int round);

/// Stage 1: copies `start`, trains with the head frozen when the flag says so.
ParamSet local_train_stage1(const ParamSet& start, const ModelConfig& mcfg,
                            const Dataset& data, const TrainConfig& cfg, double lr_scale,
                            int round, int client, double* mean_loss);

/// Stage 2: averages local with the round's broadcast global, then fine-tunes
/// only the attention kernels; with stage2 off, returns the average unchanged.
ParamSet personalize_stage2(const ParamSet& local, const ParamSet& global,
                            const ModelConfig& mcfg, const Dataset& data,
                            const TrainConfig& cfg, double lr_scale, int round, int client);

/// Shared round loop for every algorithm. `virtual_data` may be null when
/// unused. Standalone baselines treat a round as one more local_epochs block.
RunResult run_federated(const TrainConfig& cfg, const ModelConfig& base_mcfg,
                        const std::vector<ClientData>& clients, const Dataset* virtual_data,
                        const RunHooks* hooks = nullptr);

/// Algorithm 1 end to end; requires cfg.algorithm == pfedcr.
RunResult run_pfedcr(const TrainConfig& cfg, const ModelConfig& base_mcfg,
                     const std::vector<ClientData>& clients, const Dataset& virtual_data,
                     const RunHooks* hooks = nullptr);

/// Any of the non-pfedcr algorithms.
RunResult run_baseline(const TrainConfig& cfg, const ModelConfig& base_mcfg,
                       const std::vector<ClientData>& clients, const Dataset* virtual_data,
                       const RunHooks* hooks = nullptr);

}  // namespace pfedcr
