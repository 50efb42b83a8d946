#ifndef DTP_ERROR_HPP
#define DTP_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dtp {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape / dimension mismatches.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

/// Numeric argument outside its valid domain (e.g. non-positive temperature).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

/// API contract violations: backward on a non-scalar root, missing gradients,
/// stale classifier heads, reading a retired training split.
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

/// Invalid or infeasible configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

/// Malformed data: out-of-vocabulary tokens, broken caption structure,
/// degenerate batches, unsatisfiable retrieval protocol.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

/// Filesystem / serialization failures.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace dtp

#endif  // DTP_ERROR_HPP
