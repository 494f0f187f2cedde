#pragma once

#include <stdexcept>
#include <string>

namespace stlf {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy. The CLI maps these onto exit codes:
//   ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension violations in tensor ops and layers.
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// API misuse (non-scalar backward root, stochastic op under grad_check, ...).
struct UsageError : std::logic_error {
    explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

// Non-finite values where finiteness is required (NaN loss abort, op checks).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// When enabled, every tensor op verifies its output is finite and throws
// NumericError otherwise. Off by default; test binaries and `selfcheck`
// switch it on.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

}  // namespace stlf
