#pragma once

#include <stdexcept>
#include <string>

namespace detpro {

// Invalid configuration (bad key, out-of-range value, inconsistent dims).
// The CLI maps this to exit code 2.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (datasets, token tables, checkpoints).
// The CLI maps this to exit code 3.
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace detpro
