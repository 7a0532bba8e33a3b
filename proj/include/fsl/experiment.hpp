#pragma once

#include <string>
#include <vector>

#include "fsl/config.hpp"

namespace fsl {

// Execute one configured run and write config.resolved, partition.txt,
// metrics.csv, transcript.log, transcript.summary and checkpoint.bin into
// out_dir. Rerunning with the same config and seed overwrites every file
// with byte-identical content.
void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet);

// Partition + heterogeneity probes only, no training; writes partition.txt
// and probes.txt.
void run_probe(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet);

// One run per value, sharing the base seed, each in out_dir/<axis>=<value>/.
// The first failing run aborts the sweep; completed runs stay on disk.
void run_sweep(const ExperimentConfig& base, const std::string& axis,
               const std::vector<std::string>& values, const std::string& out_dir, bool quiet);

// Built-in oracle smoke suite behind the `check` verb. Returns the number of
// failed checks.
int self_check(bool quiet);

}  // namespace fsl
