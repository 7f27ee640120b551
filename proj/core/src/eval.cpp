#include "pfedcr/eval.hpp"

#include <algorithm>
#include <climits>
#include <map>

#include <fmt/format.h>

#include "pfedcr/ctc.hpp"
#include "pfedcr/errors.hpp"

namespace pfedcr {
namespace {

constexpr int kEvalBatch = 64;

/// Greedy decodes for every sample, index-aligned with data.samples.
/// Samples are forwarded in equal-width groups of up to kEvalBatch.
std::vector<LabelSeq> decode_dataset(const ParamSet& params, const ModelConfig& cfg,
                                     const Dataset& data) {
  std::map<int, std::vector<std::size_t>> by_width;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    by_width[data.samples[i].image.shape[2]].push_back(i);

  std::vector<LabelSeq> decoded(data.samples.size());
  for (const auto& [width, indices] : by_width) {
    const int height = data.samples[indices[0]].image.shape[1];
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
      const std::size_t count = std::min<std::size_t>(kEvalBatch, indices.size() - start);
      Tensor images({static_cast<int>(count), 1, height, width});
      for (std::size_t s = 0; s < count; ++s) {
        const Tensor& img = data.samples[indices[start + s]].image;
        std::copy(img.data.begin(), img.data.end(), images.data.begin() + s * plane);
      }
      const Tensor logits =
          model_forward(params, cfg, images, static_cast<ForwardCache*>(nullptr));
      const int frames = logits.shape[0], classes = logits.shape[2];
      for (std::size_t s = 0; s < count; ++s) {
        Tensor single({frames, classes});
        for (int t = 0; t < frames; ++t)
          for (int a = 0; a < classes; ++a)
            single.at2(t, a) = logits.at3(t, static_cast<int>(s), a);
        decoded[indices[start + s]] = greedy_decode(single);
      }
    }
  }
  return decoded;
}

}  // namespace

std::vector<bool> align_correct(const std::vector<int>& truth,
                                const std::vector<int>& pred) {
  const std::size_t n = truth.size(), m = pred.size();
  std::vector<std::vector<int>> cost(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 1; i <= n; ++i) cost[i][0] = static_cast<int>(i);
  for (std::size_t j = 1; j <= m; ++j) cost[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = cost[i - 1][j - 1] + (truth[i - 1] == pred[j - 1] ? 0 : 1);
      cost[i][j] = std::min({diag, cost[i - 1][j] + 1, cost[i][j - 1] + 1});
    }
  std::vector<bool> correct(n, false);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool match = truth[i - 1] == pred[j - 1];
      const int diag = cost[i - 1][j - 1] + (match ? 0 : 1);
      if (diag == cost[i][j]) {
        correct[i - 1] = match;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && cost[i - 1][j] + 1 == cost[i][j]) {
      --i;  // deletion: truth char left unmatched
      continue;
    }
    --j;  // insertion: spurious prediction
  }
  return correct;
}

double sequence_accuracy(const ParamSet& params, const ModelConfig& cfg,
                         const Dataset& data) {
  if (data.samples.empty()) throw config_error("sequence_accuracy: empty dataset");
  const std::vector<LabelSeq> decoded = decode_dataset(params, cfg, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    if (decoded[i] == data.samples[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.samples.size());
}

BucketSpec bucket_preset(std::string_view name) {
  if (name == "desk")
    return {{{0, 0}, {1, 10}, {11, 20}, {21, 30}, {31, 100}, {101, INT_MAX}},
            {"0-0", "1-10", "11-20", "21-30", "31-100", "101+"}};
  if (name == "table4")
    // Stored edges are disjoint; labels keep the conventional column names.
    return {{{0, 0}, {1, 10}, {11, 20}, {21, 30}, {200, 400}, {401, 800}},
            {"0-0", "1-10", "11-20", "21-30", "200-400", "400-800"}};
  throw config_error(fmt::format("unknown bucket preset '{}'", name));
}

std::vector<std::optional<double>> char_bucket_accuracy(const ParamSet& params,
                                                        const ModelConfig& cfg,
                                                        const Dataset& data,
                                                        const std::vector<int>& train_freq,
                                                        const BucketSpec& buckets) {
  if (buckets.ranges.size() != buckets.labels.size())
    throw config_error("buckets: ranges and labels differ in length");
  const std::vector<LabelSeq> decoded = decode_dataset(params, cfg, data);
  std::vector<std::size_t> total(buckets.ranges.size(), 0);
  std::vector<std::size_t> correct(buckets.ranges.size(), 0);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const std::vector<int>& truth = data.samples[i].label.symbols;
    const std::vector<bool> ok = align_correct(truth, decoded[i].symbols);
    for (std::size_t c = 0; c < truth.size(); ++c) {
      const int sym = truth[c];
      if (sym < 1 || sym > static_cast<int>(train_freq.size()))
        throw config_error(fmt::format("buckets: symbol {} outside the freq table", sym));
      const auto b = bucket_of(train_freq[sym - 1], buckets.ranges);
      if (!b.has_value()) continue;
      ++total[*b];
      if (ok[c]) ++correct[*b];
    }
  }
  std::vector<std::optional<double>> out(buckets.ranges.size());
  for (std::size_t b = 0; b < out.size(); ++b)
    if (total[b] > 0)
      out[b] = static_cast<double>(correct[b]) / static_cast<double>(total[b]);
  return out;
}

std::vector<std::vector<double>> cross_client_matrix(
    const std::vector<ParamSet>& models, const ModelConfig& cfg,
    const std::vector<const Dataset*>& test_sets) {
  if (models.size() != test_sets.size())
    throw config_error(fmt::format("cross matrix: {} models vs {} datasets", models.size(),
                                   test_sets.size()));
  std::vector<std::vector<double>> matrix(models.size(),
                                          std::vector<double>(models.size(), 0.0));
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = 0; j < test_sets.size(); ++j)
      matrix[i][j] = sequence_accuracy(models[i], cfg, *test_sets[j]);
  return matrix;
}

std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const ModelConfig& base_mcfg,
                                      const std::vector<ClientData>& clients,
                                      const Dataset& virtual_data) {
  if (cfg.algorithm != Algorithm::pfedcr)
    throw config_error("run_ablation: config must select pfedcr");
  const std::vector<std::pair<std::string, AblationFlags>> grid = {
      {"fedavg-equivalent", {false, false, false, false}},
      {"virtual", {true, false, false, false}},
      {"virtual+eca", {true, true, false, false}},
      {"virtual+eca+freeze", {true, true, true, false}},
      {"full", {true, true, true, true}},
  };
  std::vector<AblationRow> rows;
  rows.reserve(grid.size());
  for (const auto& [label, flags] : grid) {
    TrainConfig row_cfg = cfg;
    row_cfg.flags = flags;
    const RunResult run = run_pfedcr(row_cfg, base_mcfg, clients, virtual_data);
    AblationRow row;
    row.label = label;
    row.flags = flags;
    const RoundReport& last = run.reports.back();
    double sum = 0.0;
    for (const ClientRoundMetrics& m : last.clients) {
      row.client_acc.push_back(m.seq_acc_local_test);
      sum += m.seq_acc_local_test;
    }
    row.mean_acc = sum / static_cast<double>(last.clients.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace pfedcr
