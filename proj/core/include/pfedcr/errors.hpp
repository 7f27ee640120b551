#pragma once

#include <stdexcept>
#include <string>

namespace pfedcr {

/// Base class for every error raised by the library.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid shapes, settings, or flag combinations.
struct config_error : error {
  using error::error;
};

/// Out-of-range argument (round index past the horizon, empty label, ...).
struct range_error : error {
  using error::error;
};

/// Incompatible parameter sets crossing the simulated channel.
struct protocol_error : error {
  using error::error;
};

/// Non-finite loss or other numeric breakdown.
struct numeric_error : error {
  using error::error;
};

/// A CTC target that admits no alignment at the given frame count.
struct infeasible_error : error {
  using error::error;
};

/// Filesystem failures.
struct io_error : error {
  using error::error;
};

/// Corrupt or mismatched checkpoint container.
struct checkpoint_error : error {
  using error::error;
};

}  // namespace pfedcr
