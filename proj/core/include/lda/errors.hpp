#pragma once

#include <stdexcept>
#include <string>

namespace lda {

// An iterate, objective, or gradient stopped being finite, or an iterative
// routine could not reach its required tolerance.
struct NumericalFailure : std::runtime_error {
    explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

// Malformed configuration input: unknown keys, wrong schema, out-of-range values.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A file could not be opened, read, written, or parsed.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lda
