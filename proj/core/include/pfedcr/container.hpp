#pragma once

#include <string>
#include <vector>

#include "pfedcr/tensor.hpp"

namespace pfedcr {

/// On-disk tensor container:
///   PFCR 1
///   <name> <group> <ndims> <dims...> <byte-offset>
///   ...
///   DATA
///   <concatenated little-endian float32 payload>
/// Offsets are relative to the byte after the DATA line. Write->read round
/// trips are byte-identical.
struct ContainerEntry {
  std::string name;
  std::string group;
  Tensor tensor;
};

void write_container(const std::string& path, const std::vector<ContainerEntry>& entries);
std::vector<ContainerEntry> read_container(const std::string& path);

}  // namespace pfedcr
