#pragma once

#include <stdexcept>
#include <string>

namespace endovid {

/// Incompatible tensor or view extents.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation (tau <= 0, h == 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Caller broke a precondition that is not about shapes or numeric domains.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed or inconsistent on-disk data.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration; the CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace endovid
