#pragma once

#include <string>
#include <vector>

#include "pfedcr/fedsim.hpp"

namespace pfedcr {

/// One observation; the CSV schema is exactly these five columns.
struct MetricRow {
  int round = 0;
  int client = 0;
  std::string algorithm;
  std::string metric;
  double value = 0.0;
};

class MetricsSink {
 public:
  void add(int round, int client, std::string_view algorithm, std::string_view metric,
           double value);
  void add_report(const RoundReport& report);

  const std::vector<MetricRow>& rows() const { return rows_; }

  /// Deterministic bytes: fixed header, shortest round-trip float text.
  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;

 private:
  std::vector<MetricRow> rows_;
};

}  // namespace pfedcr
