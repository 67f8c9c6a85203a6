#pragma once

#include <stdexcept>
#include <string>

namespace calib {

// Base class for everything thrown by the library.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/length mismatches between containers that must agree.
struct structural_error : error {
    using error::error;
};

// A value outside the mathematical domain of an operation.
struct domain_error : error {
    using error::error;
};

// Failure of an external simulator process; keeps the raw child output.
struct simulator_error : error {
    simulator_error(const std::string& msg, std::string output = {})
        : error(msg), child_output(std::move(output)) {}
    std::string child_output;
};

// Covariance could not be factorized even after jitter escalation.
struct conditioning_error : error {
    using error::error;
};

// Operation called on an object in the wrong state (e.g. empty chains).
struct state_error : error {
    using error::error;
};

// Option combination not supported by the selected model.
struct unsupported_error : error {
    using error::error;
};

// Malformed configuration or input file.
struct config_error : error {
    using error::error;
};

}  // namespace calib
