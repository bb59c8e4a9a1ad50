#pragma once

#include <stdexcept>
#include <string>

namespace subfuse {

// Base class for every error thrown by the library.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape / dimension mismatches.
struct dim_error : error {
  using error::error;
};

// Violated call contracts (non-scalar loss, label out of range, ...).
struct contract_error : error {
  using error::error;
};

// Invalid run or dataset configuration.
struct config_error : error {
  using error::error;
};

// Malformed, truncated, or inconsistent data files.
struct format_error : error {
  using error::error;
};

// Numerical error states: non-finite values, zero-norm rows.
struct numeric_error : error {
  using error::error;
};

}  // namespace subfuse
