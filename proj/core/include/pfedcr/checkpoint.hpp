#pragma once

#include <string>

#include "pfedcr/datagen.hpp"
#include "pfedcr/param.hpp"

namespace pfedcr {

/// Model parameters in the container format; bitwise round trip.
void save_checkpoint(const std::string& path, const ParamSet& params);
ParamSet load_checkpoint(const std::string& path);

/// Dataset images in the container format, labels and the freq table in a
/// JSON sidecar at path + ".json". Bitwise round trip for pixel data.
void save_dataset(const std::string& path, const Dataset& data, int alphabet_size);
Dataset load_dataset(const std::string& path, int alphabet_size);

}  // namespace pfedcr
