#pragma once

#include <stdexcept>
#include <string>

namespace zecon {

/// Base for every error raised by the library. `component` names the module
/// (or loss term) that failed so callers can report it without parsing text.
class Error : public std::runtime_error {
public:
    Error(std::string component, const std::string& message)
        : std::runtime_error(component + ": " + message), component_(std::move(component)) {}

    const std::string& component() const noexcept { return component_; }

private:
    std::string component_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// Raised when a sampling step fails; carries the respaced index.
class StepError : public Error {
public:
    StepError(int step, const std::string& message)
        : Error("sampler", "step " + std::to_string(step) + ": " + message), step_(step) {}

    int step() const noexcept { return step_; }

private:
    int step_;
};

} // namespace zecon
