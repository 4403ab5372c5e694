#ifndef GATENAS_ERRORS_HPP
#define GATENAS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace gatenas {

// Malformed graph, inconsistent shapes, or an architecture that cannot be
// realized in its search space.
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or missing configuration: unknown keys, out-of-range settings,
// missing mask values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An operation was called out of order (e.g. backward before forward).
class StateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite losses or gradients.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dataset or artifact file could not be read.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace gatenas

#endif // GATENAS_ERRORS_HPP
