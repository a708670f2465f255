#ifndef TILQ_ERRORS_HPP
#define TILQ_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tilq {

// Bad input: configuration documents, mismatched grids, invalid parameters.
// The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure inside a solver: gate failure, divergence, non-finite
// values. The CLI maps this to exit code 2.
class SolverError : public std::runtime_error {
public:
    explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace tilq

#endif
