#pragma once

#include <stdexcept>
#include <string>

namespace heterolora {

// Shape/extent mismatch between operands.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: an operation was called in a state its contract forbids.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run/model configuration. The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Out-of-range id or index.
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value where a finite one is required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace heterolora
