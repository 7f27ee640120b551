#include "pfedcr/checkpoint.hpp"

#include <fstream>

#include <fmt/format.h>
#include "json.hpp"

#include "pfedcr/container.hpp"
#include "pfedcr/errors.hpp"

namespace pfedcr {

void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::vector<ContainerEntry> entries;
  entries.reserve(params.size());
  for (const Param& p : params.params)
    entries.push_back({p.name, std::string(group_name(p.group)), p.value});
  write_container(path, entries);
}

ParamSet load_checkpoint(const std::string& path) {
  ParamSet ps;
  for (ContainerEntry& e : read_container(path)) {
    ParamGroup g;
    try {
      g = group_from_name(e.group);
    } catch (const config_error&) {
      throw checkpoint_error(
          fmt::format("'{}': parameter '{}' has unknown group '{}'", path, e.name, e.group));
    }
    ps.params.emplace_back(std::move(e.name), g, std::move(e.tensor));
  }
  if (ps.params.empty()) throw checkpoint_error(fmt::format("'{}': no parameters", path));
  return ps;
}

void save_dataset(const std::string& path, const Dataset& data, int alphabet_size) {
  std::vector<ContainerEntry> entries;
  entries.reserve(data.samples.size());
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    entries.push_back({fmt::format("sample{:06d}", i), "data", data.samples[i].image});
    labels.push_back(data.samples[i].label.symbols);
  }
  write_container(path, entries);

  nlohmann::json side;
  side["alphabet_size"] = alphabet_size;
  side["labels"] = std::move(labels);
  side["freq"] = data.freq;
  std::ofstream out(path + ".json", std::ios::trunc);
  if (!out) throw io_error(fmt::format("cannot open '{}.json' for writing", path));
  out << side.dump(2) << '\n';
  if (!out) throw io_error(fmt::format("write to '{}.json' failed", path));
}

Dataset load_dataset(const std::string& path, int alphabet_size) {
  std::ifstream in(path + ".json");
  if (!in) throw io_error(fmt::format("cannot open '{}.json'", path));
  nlohmann::json side;
  try {
    in >> side;
  } catch (const nlohmann::json::exception& e) {
    throw checkpoint_error(fmt::format("'{}.json': {}", path, e.what()));
  }
  if (side.value("alphabet_size", -1) != alphabet_size)
    throw checkpoint_error(fmt::format("'{}.json': alphabet {} does not match config {}",
                                       path, side.value("alphabet_size", -1),
                                       alphabet_size));

  Dataset data;
  std::vector<ContainerEntry> entries = read_container(path);
  const auto& labels = side.at("labels");
  if (labels.size() != entries.size())
    throw checkpoint_error(fmt::format("'{}': {} labels for {} images", path, labels.size(),
                                       entries.size()));
  data.samples.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Sample s;
    s.image = std::move(entries[i].tensor);
    s.label.symbols = labels[i].get<std::vector<int>>();
    data.samples.push_back(std::move(s));
  }
  data.freq = side.at("freq").get<std::vector<int>>();
  if (static_cast<int>(data.freq.size()) != alphabet_size)
    throw checkpoint_error(fmt::format("'{}.json': freq table length {} != alphabet {}",
                                       path, data.freq.size(), alphabet_size));
  return data;
}

}  // namespace pfedcr
