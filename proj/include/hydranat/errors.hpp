#pragma once

#include <stdexcept>
#include <string>

namespace hnat {

// Shape or axis disagreement between tensors.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Neighborhood spec that cannot be realized on the given map extents.
struct InvalidSpecError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Head-partition plan that violates its own invariants.
struct InvalidPlanError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Generator configuration problems (bad resolution, missing level, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse: unsupported op tag, missing saved state, and the like.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File format or filesystem failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace hnat
