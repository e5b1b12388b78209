#pragma once

#include <stdexcept>
#include <string>

namespace lr {

// Base class for everything thrown by this library.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: config fields out of range, violated preconditions,
// malformed CLI invocations. Maps to exit code 1.
struct validation_error : error {
    using error::error;
};

// Unrecognized container/image magic or layout.
struct format_error : error {
    using error::error;
};

// Structurally valid header but truncated or inconsistent payload.
struct corruption_error : error {
    using error::error;
};

// Array shape disagreement between operands.
struct shape_error : error {
    using error::error;
};

// DDIM stepping below timestep 0.
struct step_error : error {
    using error::error;
};

// Missing attention-trace entry for a (step, layer) lookup.
struct trace_error : error {
    using error::error;
};

// Filesystem / OS level failure.
struct io_error : error {
    using error::error;
};

// External capability provider failed. `retryable` distinguishes timeouts
// from protocol violations. Maps to exit code 3.
struct plugin_error : error {
    bool retryable;
    explicit plugin_error(const std::string& msg, bool retryable_ = false)
        : error(msg), retryable(retryable_) {}
};

}  // namespace lr
