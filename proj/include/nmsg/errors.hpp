#ifndef NMSG_ERRORS_HPP
#define NMSG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace nmsg {

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An API precondition was violated (unmarked node, stale tape, non-scalar loss, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed bytes in an on-disk format.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A forward computation produced NaN or Inf (training divergence).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A dataset cannot satisfy the requested sampling.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace nmsg

#endif
