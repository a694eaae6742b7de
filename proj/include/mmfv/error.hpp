#ifndef MMFV_ERROR_HPP
#define MMFV_ERROR_HPP

#include <stdexcept>
#include <string>

namespace mmfv {

/// Malformed or inconsistent input data (files, datasets, feature stores).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or parameter shapes that do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration values or unknown configuration keys.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

} // namespace mmfv

#endif
