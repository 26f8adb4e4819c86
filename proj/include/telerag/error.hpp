#pragma once

#include <stdexcept>
#include <string>

namespace telerag {

/// Base error for everything the library throws. `kind` is a short stable
/// identifier used in machine-readable CLI error output.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// A backend call failed in a way that may succeed on retry (timeouts,
/// connection resets, 5xx responses).
class TransientBackendError : public Error {
public:
    explicit TransientBackendError(const std::string& message)
        : Error("backend_transient", message) {}
};

}  // namespace telerag
