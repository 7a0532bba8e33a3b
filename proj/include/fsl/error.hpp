#pragma once

#include <stdexcept>
#include <string>

namespace fsl {

// Bad hyperparameter / malformed config file.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Caller passed data that violates an operation precondition.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Split-protocol misuse: stale caches, shape mismatches between peers,
// missing per-client state.
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// Partitioning could not produce valid shards.
struct PartitionError : std::runtime_error {
    explicit PartitionError(const std::string& what) : std::runtime_error(what) {}
};

// Zeroth-order estimation hit a non-finite loss; carries the direction index.
struct EstimationError : std::runtime_error {
    int direction_index;
    EstimationError(const std::string& what, int direction)
        : std::runtime_error(what), direction_index(direction) {}
};

}  // namespace fsl
