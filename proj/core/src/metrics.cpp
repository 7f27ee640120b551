#include "pfedcr/metrics.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include "json.hpp"

#include "pfedcr/errors.hpp"

namespace pfedcr {

void MetricsSink::add(int round, int client, std::string_view algorithm,
                      std::string_view metric, double value) {
  rows_.push_back({round, client, std::string(algorithm), std::string(metric), value});
}

void MetricsSink::add_report(const RoundReport& report) {
  const std::string_view alg = algorithm_name(report.algorithm);
  for (std::size_t k = 0; k < report.clients.size(); ++k) {
    const ClientRoundMetrics& m = report.clients[k];
    const int client = static_cast<int>(k);
    add(report.round, client, alg, "seq_acc_local_test", m.seq_acc_local_test);
    add(report.round, client, alg, "mean_ctc_loss", m.mean_ctc_loss);
    add(report.round, client, alg, "seq_acc_global_test", m.seq_acc_global_test);
  }
}

void MetricsSink::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw io_error(fmt::format("cannot open '{}' for writing", path));
  out << "round,client,algorithm,metric,value\n";
  for (const MetricRow& r : rows_)
    out << fmt::format("{},{},{},{},{}\n", r.round, r.client, r.algorithm, r.metric,
                       r.value);
  out.flush();
  if (!out) throw io_error(fmt::format("write to '{}' failed", path));
}

void MetricsSink::write_json(const std::string& path) const {
  nlohmann::json rows = nlohmann::json::array();
  for (const MetricRow& r : rows_) {
    nlohmann::json row = {{"round", r.round},
                          {"client", r.client},
                          {"algorithm", r.algorithm},
                          {"metric", r.metric}};
    if (std::isnan(r.value))
      row["value"] = nullptr;
    else
      row["value"] = r.value;
    rows.push_back(std::move(row));
  }
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw io_error(fmt::format("cannot open '{}' for writing", path));
  out << rows.dump(2) << '\n';
  if (!out) throw io_error(fmt::format("write to '{}' failed", path));
}

}  // namespace pfedcr
