#pragma once

#include <stdexcept>
#include <string>

namespace flysnn {

// Every error the library throws derives from Error so the CLI can map the
// category to an exit code without string matching.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (also shape mismatches).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed, truncated, or version-mismatched file.
class FormatError : public Error {
public:
    using Error::Error;
};

// Non-finite value reached a kernel.
class NumericError : public Error {
public:
    using Error::Error;
};

// Index outside its admissible window.
class RangeError : public Error {
public:
    using Error::Error;
};

// A precondition on a caller-supplied value was broken.
class ContractError : public Error {
public:
    using Error::Error;
};

// No grid point reached the calibration target.
class CalibrationError : public Error {
public:
    CalibrationError(const std::string& what, double best_rate, double target_rate)
        : Error(what), best_rate_(best_rate), target_rate_(target_rate) {}

    double best_rate() const noexcept { return best_rate_; }
    double target_rate() const noexcept { return target_rate_; }

private:
    double best_rate_;
    double target_rate_;
};

}  // namespace flysnn
