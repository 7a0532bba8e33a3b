#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "fsl/data.hpp"
#include "fsl/model.hpp"

namespace fsl {

// Empirical proxies for the analysis assumptions: gradient dissimilarity
// across clients, minibatch gradient variance, and a smoothness lower bound.

struct SigmaGResult {
    std::vector<double> per_client;  // ||grad_i - mean grad||^2
    double max_sq = 0.0;
    double mean_sq = 0.0;
};

// Full-batch gradient per client at the given model point, compared against
// their uniform average. The model is not mutated.
SigmaGResult estimate_sigma_g(const SplitModel& model, const Dataset& data,
                              const std::vector<ClientShard>& shards);

// Mean squared distance between minibatch gradients and the full-shard
// gradient at the model point, over `batches` seeded draws without
// replacement. Batch indices are kept sorted so batch == shard reproduces the
// full gradient bit-for-bit.
double estimate_sigma_l(const SplitModel& model, const Dataset& data, const ClientShard& shard,
                        std::size_t batches, std::size_t batch_size, std::uint64_t seed);

struct SmoothnessResult {
    double max_ratio = 0.0;   // lower bound on the Lipschitz constant
    std::size_t skipped = 0;  // coincident pairs ignored
};

// max over pairs of ||grad(x) - grad(y)|| / ||x - y||.
SmoothnessResult estimate_smoothness(const std::function<Tensor(const Tensor&)>& grad_fn,
                                     const std::vector<std::pair<Tensor, Tensor>>& pairs);

}  // namespace fsl
