#ifndef SURCMM_ERRORS_HPP
#define SURCMM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace surcmm {

// Error taxonomy mirrors the CLI exit-code contract:
//   ValidationError -> 1, NumericalError -> 2, IoError -> 3.

class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace surcmm

#endif // SURCMM_ERRORS_HPP
