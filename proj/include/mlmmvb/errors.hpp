#pragma once

#include <stdexcept>
#include <string>

namespace mlmmvb {

/// Bad run configuration or unusable arguments.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input file (CSV/JSON syntax level).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Structurally invalid data (dimension or invariant violations at ingestion).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Failure inside an optimisation loop (sweep update, Newton iteration cap).
struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Linear-algebra failure (factorisation of an indefinite or singular matrix).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mlmmvb
