#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsl/tensor.hpp"

namespace fsl {

struct Dataset {
    Tensor X;            // [n x dim]
    std::vector<int> y;  // labels in [0, classes)
    std::size_t classes = 0;

    std::size_t size() const { return y.size(); }
    std::size_t dim() const { return X.ndim() == 2 ? X.dim(1) : 0; }
    void validate() const;  // shapes consistent, every class represented
};

// Gaussian class clusters: class k sits at (separation / sqrt(2)) * e_k, so
// any two class means are exactly `separation` apart, with unit noise.
Dataset generate_synthetic(std::size_t n, std::size_t classes, double separation,
                           std::uint64_t seed, std::size_t dim = 64);

// Splits a dataset into a public front portion and a private remainder by a
// seeded shuffle. The split is always taken (even when the public set goes
// unused) so downstream partitions do not depend on whether pre-training is
// enabled.
struct PublicSplit {
    Dataset public_set;
    Dataset private_set;
};
PublicSplit split_public(const Dataset& data, double public_fraction, std::uint64_t seed);

struct PartitionSpec {
    enum class Kind { iid, dirichlet, pathological };
    Kind kind = Kind::iid;
    double alpha = 0.3;                  // dirichlet concentration
    std::size_t labels_per_client = 2;   // pathological class budget c
    std::size_t clients = 100;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate(std::size_t classes) const;
};

std::string to_string(PartitionSpec::Kind kind);
PartitionSpec::Kind partition_kind_from_string(const std::string& name);

struct ClientShard {
    int client_id = -1;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

struct PartitionOutcome {
    std::vector<ClientShard> shards;
    std::size_t retries = 0;
    // Drawn Dir(alpha) proportions, [class][client]; empty for other kinds.
    std::vector<std::vector<double>> dirichlet_proportions;
};

// Deals every dataset index to exactly one client, then carves each client's
// allocation into train/test stratified by label. Retries a bounded number of
// times if a draw leaves some client empty.
PartitionOutcome partition(const Dataset& data, const PartitionSpec& spec);

// Feature rows / labels for an index list, in the given order.
Tensor gather_rows(const Dataset& data, std::span<const std::size_t> idx);
std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> idx);

// Line-oriented manifest so a partition can be replayed exactly.
void write_partition_manifest(const std::string& path, const PartitionSpec& spec,
                              const std::vector<ClientShard>& shards,
                              const std::string& header_extra = "");
std::vector<ClientShard> load_partition_manifest(const std::string& path);

}  // namespace fsl
