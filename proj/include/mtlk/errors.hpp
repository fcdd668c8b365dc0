#pragma once

#include <stdexcept>
#include <string>

namespace mtlk {

// Shape / dimension mismatches between operands.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid arguments, configuration, or file contents.
class ValueError : public std::runtime_error {
public:
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or diverging computations. Maps to exit code 3 in the CLI.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mtlk
