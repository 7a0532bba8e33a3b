#pragma once

#include <cstdint>
#include <string>

#include "fsl/data.hpp"
#include "fsl/federation.hpp"
#include "fsl/model.hpp"

namespace fsl {

enum class Algorithm { fes, fedavg };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);

// Everything a run needs, in one flat key-value file. Seeds for the partition
// and the round loop are derived from the single run seed at execution time;
// they are not independent knobs.
struct ExperimentConfig {
    // data.*
    std::size_t data_samples = 2000;
    std::size_t data_classes = 4;
    double data_separation = 4.0;

    // model.* (classes mirror data.classes)
    ModelDims dims;

    // partition.* (client count mirrors federation.clients)
    PartitionSpec partition;

    // federation.*
    Algorithm algorithm = Algorithm::fes;
    RoundConfig round;

    // pretrain.*
    bool pretrain_enabled = true;
    std::size_t pretrain_epochs = 10;
    double pretrain_lr = 0.01;
    double public_fraction = 0.2;

    // probe.*
    std::size_t probe_cadence = 0;
    std::size_t probe_sigma_l_batches = 8;

    // run.*
    std::uint64_t seed = 1;

    void validate() const;
};

// Parses `key = value` lines ('#' starts a comment); unknown keys are hard
// errors listing the valid key set. Missing keys keep their defaults.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical form: every key, fixed order, shortest round-trip numbers.
// parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

// FNV-1a over the canonical serialization, as 16 hex digits. Stamped into
// every output file so rows trace back to an exact configuration.
std::string config_hash(const ExperimentConfig& cfg);
std::uint64_t config_hash_value(const ExperimentConfig& cfg);

// Shortest round-trip decimal form of a double, shared by every file writer.
std::string format_double(double v);

}  // namespace fsl
