#pragma once

#include <stdexcept>
#include <string>

namespace blowup {

/// Argument outside the region where a quantity is defined (radius beyond the
/// profile, cone beyond the grid, non-positive sample for a log fit, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A numerical solve could not produce an admissible answer.
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The two-sided eigenfunction bound has no positive constant.
class BoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An exponent recursion hit a non-positive denominator.
class IterationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A sweep point did not blow up inside its time window.
class SweepError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration. `key()` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Unknown name in a registry (presets).
class LookupError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// A module failure while running a named experiment; the message carries the experiment name.
class ExperimentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace blowup
