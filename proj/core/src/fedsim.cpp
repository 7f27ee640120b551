#include "pfedcr/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "pfedcr/ctc.hpp"
#include "pfedcr/errors.hpp"
#include "pfedcr/eval.hpp"
#include "pfedcr/optimizer.hpp"

namespace pfedcr {
namespace {

const std::vector<ParamGroup> kAllGroups = {ParamGroup::body, ParamGroup::head,
                                            ParamGroup::eca};

bool has_group(const ParamSet& ps, ParamGroup g) {
  for (const Param& p : ps.params)
    if (p.group == g) return true;
  return false;
}

bool is_standalone(Algorithm a) {
  return a == Algorithm::local || a == Algorithm::local_attention ||
         a == Algorithm::local_pretrain;
}

/// Equal-width batches: shuffle, stable-sort by width, cut runs of one width
/// into chunks, then shuffle the chunk order. Equal widths keep every sample
/// in a batch on the same CTC frame count.
std::vector<std::vector<std::size_t>> build_batches(const Dataset& data, int batch_size,
                                                    RngStream& rng) {
  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data.samples[a].image.shape[2] < data.samples[b].image.shape[2];
  });
  std::vector<std::vector<std::size_t>> batches;
  std::size_t i = 0;
  while (i < order.size()) {
    const int width = data.samples[order[i]].image.shape[2];
    std::vector<std::size_t> batch;
    while (i < order.size() && data.samples[order[i]].image.shape[2] == width &&
           static_cast<int>(batch.size()) < batch_size)
      batch.push_back(order[i++]);
    batches.push_back(std::move(batch));
  }
  rng.shuffle(batches);
  return batches;
}

struct Batch {
  Tensor images;
  std::vector<LabelSeq> labels;
};

Batch assemble_batch(const Dataset& data, const std::vector<std::size_t>& idx) {
  const Tensor& first = data.samples[idx[0]].image;
  const int height = first.shape[1], width = first.shape[2];
  Batch b;
  b.images = Tensor({static_cast<int>(idx.size()), 1, height, width});
  b.labels.reserve(idx.size());
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t s = 0; s < idx.size(); ++s) {
    const Sample& sample = data.samples[idx[s]];
    std::copy(sample.image.data.begin(), sample.image.data.end(),
              b.images.data.begin() + s * plane);
    b.labels.push_back(sample.label);
  }
  return b;
}

}  // namespace

std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::local: return "local";
    case Algorithm::local_attention: return "local_attention";
    case Algorithm::local_pretrain: return "local_pretrain";
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedavg_ft: return "fedavg_ft";
    case Algorithm::fedprox: return "fedprox";
    case Algorithm::pfedcr: return "pfedcr";
  }
  throw config_error("algorithm_name: unknown algorithm");
}

Algorithm algorithm_from_name(std::string_view name) {
  for (const Algorithm a :
       {Algorithm::local, Algorithm::local_attention, Algorithm::local_pretrain,
        Algorithm::fedavg, Algorithm::fedavg_ft, Algorithm::fedprox, Algorithm::pfedcr}) {
    if (algorithm_name(a) == name) return a;
  }
  throw config_error(fmt::format("unknown algorithm '{}'", name));
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.clients < 1) throw config_error(fmt::format("clients {} < 1", cfg.clients));
  if (cfg.rounds < 1) throw config_error(fmt::format("rounds {} < 1", cfg.rounds));
  if (cfg.batch_size < 1) throw config_error(fmt::format("batch_size {} < 1", cfg.batch_size));
  if (cfg.local_epochs < 0 || cfg.server_epochs < 0 || cfg.pretrain_epochs < 0)
    throw config_error("epoch counts must be >= 0");
  if (cfg.algorithm == Algorithm::fedprox && cfg.fedprox_mu < 0.0)
    throw config_error(fmt::format("fedprox mu {} < 0", cfg.fedprox_mu));
  if (cfg.adadelta_rho < 0.0 || cfg.adadelta_rho >= 1.0 || cfg.adadelta_eps <= 0.0)
    throw config_error("adadelta parameters out of range");
}

ModelConfig effective_model_config(const ModelConfig& base, const TrainConfig& cfg) {
  ModelConfig mcfg = base;
  mcfg.use_eca = (cfg.algorithm == Algorithm::pfedcr && cfg.flags.use_eca) ||
                 cfg.algorithm == Algorithm::local_attention;
  return mcfg;
}

EpochResult train_epoch(ParamSet& params, const ModelConfig& mcfg, const Dataset& data,
                        const std::vector<ParamGroup>& unfrozen, const TrainConfig& cfg,
                        double lr_scale, RngStream& order_rng, const ParamSet* prox_anchor,
                        double prox_mu) {
  if (data.samples.empty()) throw config_error("train_epoch: empty dataset");
  const auto batches = build_batches(data, cfg.batch_size, order_rng);
  EpochResult result;
  double loss_sum = 0.0;
  for (const auto& idx : batches) {
    Batch batch = assemble_batch(data, idx);
    if (lr_scale == 0.0) {
      const Tensor logits =
          model_forward(params, mcfg, batch.images, static_cast<ForwardCache*>(nullptr));
      loss_sum += ctc_loss(logits, batch.labels, false).loss;
    } else {
      ForwardCache cache;
      const Tensor logits = model_forward(params, mcfg, batch.images, &cache);
      CtcResult<float> ctc = ctc_loss(logits, batch.labels, true);
      loss_sum += ctc.loss;
      params.zero_grads();
      model_backward(params, mcfg, cache, ctc.grad_logits, unfrozen);
      if (prox_anchor != nullptr && prox_mu > 0.0) {
        for (std::size_t p = 0; p < params.size(); ++p) {
          if (std::find(unfrozen.begin(), unfrozen.end(), params[p].group) ==
              unfrozen.end())
            continue;
          const Tensor& anchor = (*prox_anchor)[p].value;
          for (std::size_t i = 0; i < anchor.data.size(); ++i)
            params[p].grad.data[i] +=
                static_cast<float>(prox_mu) * (params[p].value.data[i] - anchor.data[i]);
        }
      }
      adadelta_step(params, unfrozen, static_cast<float>(lr_scale),
                    static_cast<float>(cfg.adadelta_rho),
                    static_cast<float>(cfg.adadelta_eps));
    }
    ++result.batches;
  }
  result.mean_loss = loss_sum / static_cast<double>(result.batches);
  return result;
}

ParamSet aggregate(const std::vector<ParamSet>& locals) {
  if (locals.empty()) throw protocol_error("aggregate: no client models");
  for (std::size_t k = 1; k < locals.size(); ++k) {
    if (locals[k].size() != locals[0].size())
      throw protocol_error("aggregate: client models differ in parameter count");
    for (std::size_t p = 0; p < locals[0].size(); ++p)
      if (locals[k][p].name != locals[0][p].name ||
          locals[k][p].value.shape != locals[0][p].value.shape)
        throw protocol_error(
            fmt::format("aggregate: parameter '{}' diverges across clients",
                        locals[0][p].name));
  }
  ParamSet out;
  out.params.reserve(locals[0].size());
  const double inv_k = 1.0 / static_cast<double>(locals.size());
  for (std::size_t p = 0; p < locals[0].size(); ++p) {
    Tensor value(locals[0][p].value.shape);
    for (std::size_t i = 0; i < value.data.size(); ++i) {
      double acc = 0.0;
      for (const ParamSet& ps : locals) acc += static_cast<double>(ps[p].value.data[i]);
      value.data[i] = static_cast<float>(acc * inv_k);
    }
    out.params.emplace_back(locals[0][p].name, locals[0][p].group, std::move(value));
  }
  return out;
}

ParamSet average_pair(const ParamSet& a, const ParamSet& b) {
  if (!same_structure(a, b)) throw protocol_error("average_pair: structure mismatch");
  ParamSet out;
  out.params.reserve(a.size());
  for (std::size_t p = 0; p < a.size(); ++p) {
    Tensor value(a[p].value.shape);
    for (std::size_t i = 0; i < value.data.size(); ++i)
      value.data[i] = (a[p].value.data[i] + b[p].value.data[i]) * 0.5f;
    out.params.emplace_back(a[p].name, a[p].group, std::move(value));
  }
  return out;
}

ParamSet server_finetune(const ParamSet& global, const ModelConfig& mcfg,
                         const Dataset& virtual_data, const TrainConfig& cfg, int epochs,
                         double lr_scale, int round) {
  if (virtual_data.samples.empty()) throw config_error("server_finetune: empty virtual data");
  ParamSet model = global;
  model.reset_opt_state();
  RngStream rng(rng_seed(cfg.seed, {rng_token("server"), static_cast<std::uint64_t>(round)}));
  for (int e = 0; e < epochs; ++e)
    train_epoch(model, mcfg, virtual_data, kAllGroups, cfg, lr_scale, rng);
  return model;
}

ParamSet local_train_stage1(const ParamSet& start, const ModelConfig& mcfg,
                            const Dataset& data, const TrainConfig& cfg, double lr_scale,
                            int round, int client, double* mean_loss) {
  ParamSet model = start;
  model.reset_opt_state();
  const bool freeze = cfg.algorithm == Algorithm::pfedcr && cfg.flags.freeze_head;
  const std::vector<ParamGroup> unfrozen =
      freeze ? std::vector<ParamGroup>{ParamGroup::body, ParamGroup::eca} : kAllGroups;
  const ParamSet* anchor =
      cfg.algorithm == Algorithm::fedprox && cfg.fedprox_mu > 0.0 ? &start : nullptr;
  RngStream rng(rng_seed(cfg.seed, {rng_token("stage1"), static_cast<std::uint64_t>(round),
                                    static_cast<std::uint64_t>(client)}));
  double loss_sum = 0.0;
  for (int e = 0; e < cfg.local_epochs; ++e)
    loss_sum +=
        train_epoch(model, mcfg, data, unfrozen, cfg, lr_scale, rng, anchor, cfg.fedprox_mu)
            .mean_loss;
  if (mean_loss != nullptr)
    *mean_loss = cfg.local_epochs > 0 ? loss_sum / cfg.local_epochs
                                      : std::numeric_limits<double>::quiet_NaN();
  return model;
}

ParamSet personalize_stage2(const ParamSet& local, const ParamSet& global,
                            const ModelConfig& mcfg, const Dataset& data,
                            const TrainConfig& cfg, double lr_scale, int round,
                            int client) {
  ParamSet model = average_pair(local, global);
  const bool trainable = cfg.flags.stage2 && cfg.local_epochs > 0 && lr_scale != 0.0 &&
                         has_group(model, ParamGroup::eca);
  if (!trainable) return model;
  model.reset_opt_state();
  RngStream rng(rng_seed(cfg.seed, {rng_token("stage2"), static_cast<std::uint64_t>(round),
                                    static_cast<std::uint64_t>(client)}));
  for (int e = 0; e < cfg.local_epochs; ++e)
    train_epoch(model, mcfg, data, {ParamGroup::eca}, cfg, lr_scale, rng);
  return model;
}

RunResult run_federated(const TrainConfig& cfg, const ModelConfig& base_mcfg,
                        const std::vector<ClientData>& clients, const Dataset* virtual_data,
                        const RunHooks* hooks) {
  validate_train_config(cfg);
  const ModelConfig mcfg = effective_model_config(base_mcfg, cfg);
  validate_model_config(mcfg);
  const int n_clients = cfg.clients;
  if (static_cast<int>(clients.size()) != n_clients)
    throw config_error(fmt::format("run: {} datasets for {} clients", clients.size(),
                                   n_clients));
  for (int k = 0; k < n_clients; ++k)
    if (clients[k].train.samples.empty() || clients[k].test.samples.empty())
      throw config_error(fmt::format("run: client {} has an empty split", k));

  const bool needs_virtual =
      (cfg.algorithm == Algorithm::pfedcr && cfg.flags.use_virtual_data) ||
      cfg.algorithm == Algorithm::local_pretrain;
  if (needs_virtual && (virtual_data == nullptr || virtual_data->samples.empty()))
    throw config_error(
        fmt::format("run: algorithm {} requires non-empty virtual data",
                    algorithm_name(cfg.algorithm)));

  const bool standalone = is_standalone(cfg.algorithm);
  RunResult run;
  RoundState& st = run.state;
  st.global = build_model(mcfg, cfg.seed);
  st.locals.assign(n_clients, st.global);
  st.personalized.assign(n_clients, st.global);

  if (cfg.algorithm == Algorithm::local_pretrain && cfg.pretrain_epochs > 0) {
    // Every client would follow the identical warmup trajectory, so run it once.
    ParamSet warm = st.global;
    warm.reset_opt_state();
    RngStream rng(rng_seed(cfg.seed, {rng_token("pretrain")}));
    for (int e = 0; e < cfg.pretrain_epochs; ++e)
      train_epoch(warm, mcfg, *virtual_data, kAllGroups, cfg, 1.0, rng);
    for (int k = 0; k < n_clients; ++k) st.locals[k] = warm;
  }

  std::vector<ParamSet> ft_models;  // fedavg_ft final-round client models
  for (int t = 0; t < cfg.rounds; ++t) {
    const double scale = cosine_round_scale(t, cfg.rounds);
    RoundReport rep;
    rep.round = t;
    rep.algorithm = cfg.algorithm;
    rep.clients.assign(n_clients, {});

    try {
      if (standalone) {
        // No communication: rounds chunk one continuous training run, so the
        // optimizer accumulators persist across them.
        for (int k = 0; k < n_clients; ++k) {
          ParamSet& model = st.locals[k];
          RngStream rng(rng_seed(cfg.seed, {rng_token("stage1"),
                                            static_cast<std::uint64_t>(t),
                                            static_cast<std::uint64_t>(k)}));
          double loss_sum = 0.0;
          for (int e = 0; e < cfg.local_epochs; ++e)
            loss_sum += train_epoch(model, mcfg, clients[k].train, kAllGroups, cfg, scale,
                                    rng)
                            .mean_loss;
          rep.clients[k].mean_ctc_loss =
              cfg.local_epochs > 0 ? loss_sum / cfg.local_epochs
                                   : std::numeric_limits<double>::quiet_NaN();
          rep.clients[k].seq_acc_local_test =
              sequence_accuracy(model, mcfg, clients[k].test);
          rep.clients[k].seq_acc_global_test = std::numeric_limits<double>::quiet_NaN();
        }
      } else {
        if (cfg.algorithm == Algorithm::pfedcr && cfg.flags.use_virtual_data &&
            cfg.server_epochs > 0 && scale != 0.0)
          st.global = server_finetune(st.global, mcfg, *virtual_data, cfg,
                                      cfg.server_epochs, scale, t);
        if (hooks != nullptr && hooks->on_broadcast) hooks->on_broadcast(t, st.global);

        for (int k = 0; k < n_clients; ++k) {
          double mean_loss = 0.0;
          st.locals[k] = local_train_stage1(st.global, mcfg, clients[k].train, cfg, scale,
                                            t, k, &mean_loss);
          rep.clients[k].mean_ctc_loss = mean_loss;
          if (hooks != nullptr && hooks->on_upload) hooks->on_upload(t, k, st.locals[k]);
        }

        if (cfg.algorithm == Algorithm::pfedcr)
          for (int k = 0; k < n_clients; ++k)
            st.personalized[k] = personalize_stage2(st.locals[k], st.global, mcfg,
                                                    clients[k].train, cfg, scale, t, k);

        if (cfg.algorithm == Algorithm::pfedcr && cfg.aggregate_averaged_models) {
          std::vector<ParamSet> averaged;
          averaged.reserve(n_clients);
          for (int k = 0; k < n_clients; ++k)
            averaged.push_back(average_pair(st.locals[k], st.global));
          st.global = aggregate(averaged);
        } else {
          st.global = aggregate(st.locals);
        }

        if (cfg.algorithm == Algorithm::fedavg_ft && t == cfg.rounds - 1) {
          ft_models.reserve(n_clients);
          for (int k = 0; k < n_clients; ++k) {
            ParamSet model = st.global;
            model.reset_opt_state();
            RngStream rng(
                rng_seed(cfg.seed, {rng_token("ft"), static_cast<std::uint64_t>(k)}));
            train_epoch(model, mcfg, clients[k].train, kAllGroups, cfg, 1.0, rng);
            ft_models.push_back(std::move(model));
          }
        }

        for (int k = 0; k < n_clients; ++k) {
          const double global_acc = sequence_accuracy(st.global, mcfg, clients[k].test);
          rep.clients[k].seq_acc_global_test = global_acc;
          switch (cfg.algorithm) {
            case Algorithm::pfedcr:
              rep.clients[k].seq_acc_local_test =
                  sequence_accuracy(st.personalized[k], mcfg, clients[k].test);
              break;
            case Algorithm::fedavg_ft:
              rep.clients[k].seq_acc_local_test =
                  t == cfg.rounds - 1 ? sequence_accuracy(ft_models[k], mcfg,
                                                          clients[k].test)
                                      : global_acc;
              break;
            default:
              rep.clients[k].seq_acc_local_test = global_acc;
              break;
          }
        }
      }
    } catch (const error& e) {
      throw protocol_error(fmt::format("round {}: {}", t, e.what()));
    }
    run.reports.push_back(std::move(rep));
    if (hooks != nullptr && hooks->on_round) hooks->on_round(run.reports.back());
  }

  if (standalone) {
    st.personalized = st.locals;
  } else if (cfg.algorithm == Algorithm::fedavg_ft) {
    st.personalized = ft_models;
    st.locals = ft_models;
  } else if (cfg.algorithm != Algorithm::pfedcr) {
    for (int k = 0; k < n_clients; ++k) st.personalized[k] = st.global;
  }
  st.round = cfg.rounds;
  return run;
}

RunResult run_pfedcr(const TrainConfig& cfg, const ModelConfig& base_mcfg,
                     const std::vector<ClientData>& clients, const Dataset& virtual_data,
                     const RunHooks* hooks) {
  if (cfg.algorithm != Algorithm::pfedcr)
    throw config_error("run_pfedcr: config selects a different algorithm");
  return run_federated(cfg, base_mcfg, clients, &virtual_data, hooks);
}

RunResult run_baseline(const TrainConfig& cfg, const ModelConfig& base_mcfg,
                       const std::vector<ClientData>& clients, const Dataset* virtual_data,
                       const RunHooks* hooks) {
  if (cfg.algorithm == Algorithm::pfedcr)
    throw config_error("run_baseline: use run_pfedcr for the full protocol");
  return run_federated(cfg, base_mcfg, clients, virtual_data, hooks);
}

}  // namespace pfedcr
