#pragma once

#include <stdexcept>
#include <string>

namespace aavit {

/// Base class for every error the library throws.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad configuration value or an interface used with the wrong settings
/// (invalid hyperparameter, missing config file, wrong head kind).
struct config_error : error {
    using error::error;
};

/// Tensor dimension mismatch.
struct shape_error : error {
    using error::error;
};

/// Malformed or inconsistent input data: image files, manifests, score
/// files, checkpoints.
struct data_error : error {
    using error::error;
};

/// A NaN or infinity showed up in numeric code.
struct numeric_error : error {
    using error::error;
};

/// A call contract was violated (backward on a non-scalar, empty split).
struct contract_error : error {
    using error::error;
};

}  // namespace aavit
