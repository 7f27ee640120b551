#include "pfedcr/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "pfedcr/errors.hpp"

namespace pfedcr {

static_assert(std::endian::native == std::endian::little,
              "container payload is little-endian float32");

void write_container(const std::string& path, const std::vector<ContainerEntry>& entries) {
  std::ostringstream header;
  header << "PFCR 1\n";
  std::size_t offset = 0;
  for (const ContainerEntry& e : entries) {
    if (e.name.empty() || e.name.find_first_of(" \n") != std::string::npos ||
        e.group.find_first_of(" \n") != std::string::npos)
      throw checkpoint_error(fmt::format("container: invalid entry name '{}'", e.name));
    header << e.name << ' ' << e.group << ' ' << e.tensor.rank();
    for (const int d : e.tensor.shape) header << ' ' << d;
    header << ' ' << offset << '\n';
    offset += e.tensor.numel() * sizeof(float);
  }
  header << "DATA\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error(fmt::format("cannot open '{}' for writing", path));
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const ContainerEntry& e : entries)
    out.write(reinterpret_cast<const char*>(e.tensor.data.data()),
              static_cast<std::streamsize>(e.tensor.numel() * sizeof(float)));
  out.flush();
  if (!out) throw io_error(fmt::format("write to '{}' failed", path));
}

std::vector<ContainerEntry> read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(fmt::format("cannot open '{}'", path));

  std::string line;
  if (!std::getline(in, line) || line != "PFCR 1")
    throw checkpoint_error(fmt::format("'{}': bad magic or version", path));

  struct PendingEntry {
    std::string name, group;
    std::vector<int> shape;
    std::size_t offset, numel;
  };
  std::vector<PendingEntry> pending;
  std::size_t expected_offset = 0;
  while (std::getline(in, line)) {
    if (line == "DATA") break;
    std::istringstream row(line);
    PendingEntry e;
    int ndims = 0;
    if (!(row >> e.name >> e.group >> ndims) || ndims < 0)
      throw checkpoint_error(fmt::format("'{}': malformed manifest line '{}'", path, line));
    e.shape.resize(ndims);
    for (int i = 0; i < ndims; ++i)
      if (!(row >> e.shape[i]) || e.shape[i] <= 0)
        throw checkpoint_error(fmt::format("'{}': bad dims in '{}'", path, line));
    if (!(row >> e.offset))
      throw checkpoint_error(fmt::format("'{}': missing offset in '{}'", path, line));
    e.numel = Tensor::checked_numel(e.shape);
    if (e.offset != expected_offset)
      throw checkpoint_error(fmt::format("'{}': offset {} != expected {} for '{}'", path,
                                         e.offset, expected_offset, e.name));
    expected_offset += e.numel * sizeof(float);
    pending.push_back(std::move(e));
  }
  if (line != "DATA") throw checkpoint_error(fmt::format("'{}': missing DATA marker", path));

  std::vector<ContainerEntry> entries;
  entries.reserve(pending.size());
  for (PendingEntry& e : pending) {
    std::vector<float> data(e.numel);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(e.numel * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(e.numel * sizeof(float)))
      throw checkpoint_error(fmt::format("'{}': truncated payload at '{}'", path, e.name));
    entries.push_back(
        {std::move(e.name), std::move(e.group), Tensor(std::move(e.shape), std::move(data))});
  }
  return entries;
}

}  // namespace pfedcr
