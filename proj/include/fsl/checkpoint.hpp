#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fsl/tensor.hpp"

namespace fsl {

// Versioned binary dump of named tensors (native-endian doubles), stamped
// with the producing run's config hash and seed. Writing the same state twice
// yields byte-identical files.
void save_checkpoint(const std::string& path, std::uint64_t config_hash, std::uint64_t seed,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);

struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace fsl
