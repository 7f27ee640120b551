#include "pfedcr/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <unistd.h>

#include <doctest.h>
#include "json.hpp"

using namespace pfedcr;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string temp_file(const char* name) {
  return (std::filesystem::temp_directory_path() /
          (std::string("pfedcr_metrics_") + std::to_string(::getpid()) + "_" + name))
      .string();
}

}  // namespace

TEST_CASE("csv uses the fixed header and shortest round-trip numbers") {
  MetricsSink sink;
  sink.add(0, 0, "pfedcr", "seq_acc_local_test", 0.1);
  sink.add(0, 1, "pfedcr", "mean_ctc_loss", 2.5);
  sink.add(3, 2, "local", "seq_acc_local_test", 1.0 / 3.0);
  const auto path = temp_file("a.csv");
  sink.write_csv(path);
  const auto text = slurp(path);
  std::filesystem::remove(path);

  CHECK(text ==
        "round,client,algorithm,metric,value\n"
        "0,0,pfedcr,seq_acc_local_test,0.1\n"
        "0,1,pfedcr,mean_ctc_loss,2.5\n"
        "3,2,local,seq_acc_local_test,0.3333333333333333\n");

  // Shortest-representation text parses back to the identical double.
  CHECK(std::stod("0.3333333333333333") == 1.0 / 3.0);
}

TEST_CASE("missing values write as nan in csv and null in json") {
  MetricsSink sink;
  sink.add(0, 0, "local", "seq_acc_global_test", std::numeric_limits<double>::quiet_NaN());
  const auto csv_path = temp_file("b.csv");
  const auto json_path = temp_file("b.json");
  sink.write_csv(csv_path);
  sink.write_json(json_path);
  const auto csv = slurp(csv_path);
  const auto js = nlohmann::json::parse(slurp(json_path));
  std::filesystem::remove(csv_path);
  std::filesystem::remove(json_path);

  CHECK(csv.find(",nan\n") != std::string::npos);
  REQUIRE(js.is_array());
  CHECK(js[0].at("value").is_null());
}

TEST_CASE("round reports expand to one row per client metric") {
  RoundReport rep;
  rep.round = 4;
  rep.algorithm = Algorithm::fedavg;
  rep.clients.resize(2);
  rep.clients[0] = {0.5, 1.25, 0.5};
  rep.clients[1] = {0.25, 2.0, 0.5};

  MetricsSink sink;
  sink.add_report(rep);
  REQUIRE(sink.rows().size() == 6);
  CHECK(sink.rows()[0].metric == "seq_acc_local_test");
  CHECK(sink.rows()[0].value == 0.5);
  CHECK(sink.rows()[1].metric == "mean_ctc_loss");
  CHECK(sink.rows()[2].metric == "seq_acc_global_test");
  CHECK(sink.rows()[3].client == 1);
  CHECK(sink.rows()[3].value == 0.25);
  for (const auto& row : sink.rows()) {
    CHECK(row.round == 4);
    CHECK(row.algorithm == "fedavg");
  }
}

TEST_CASE("writes are byte-stable and json parses cleanly") {
  MetricsSink sink;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c)
      sink.add(r, c, "pfedcr", "seq_acc_local_test", 0.125 * (r + 1) + 0.01 * c);

  const auto a = temp_file("c1.csv"), b = temp_file("c2.csv");
  sink.write_csv(a);
  sink.write_csv(b);
  CHECK(slurp(a) == slurp(b));
  std::filesystem::remove(a);
  std::filesystem::remove(b);

  const auto jp = temp_file("c.json");
  sink.write_json(jp);
  const auto js = nlohmann::json::parse(slurp(jp));
  std::filesystem::remove(jp);
  REQUIRE(js.size() == 6);
  CHECK(js[5].at("round") == 2);
  CHECK(js[5].at("client") == 1);
  CHECK(js[5].at("value").get<double>() == 0.125 * 3 + 0.01);
}
