#include "fsl/probes.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fsl/error.hpp"
#include "fsl/rng.hpp"

namespace fsl {

namespace {

Tensor shard_gradient(SplitModel& work, const Dataset& data,
                      const std::vector<std::size_t>& idx) {
    Tensor X = gather_rows(data, idx);
    std::vector<int> y = gather_labels(data, idx);
    work.zero_grads();
    work.backprop(X, y);
    return flatten_grads(std::as_const(work).all_params());
}

}  // namespace

SigmaGResult estimate_sigma_g(const SplitModel& model, const Dataset& data,
                              const std::vector<ClientShard>& shards) {
    if (shards.empty()) throw InputError("sigma_g: no shards");
    SplitModel work = model.clone();
    std::vector<Tensor> grads;
    grads.reserve(shards.size());
    for (const auto& shard : shards) {
        if (shard.train.empty()) {
            throw PartitionError("sigma_g: client " + std::to_string(shard.client_id) +
                                 " has an empty train shard");
        }
        grads.push_back(shard_gradient(work, data, shard.train));
    }
    Tensor mean(grads[0].shape());
    for (const Tensor& g : grads) mean.add_scaled(g, 1.0);
    mean.scale(1.0 / static_cast<double>(grads.size()));

    SigmaGResult res;
    res.per_client.reserve(grads.size());
    for (Tensor& g : grads) {
        g.add_scaled(mean, -1.0);
        res.per_client.push_back(g.squared_norm());
    }
    res.max_sq = *std::max_element(res.per_client.begin(), res.per_client.end());
    double total = 0.0;
    for (double v : res.per_client) total += v;
    res.mean_sq = total / static_cast<double>(res.per_client.size());
    return res;
}

double estimate_sigma_l(const SplitModel& model, const Dataset& data, const ClientShard& shard,
                        std::size_t batches, std::size_t batch_size, std::uint64_t seed) {
    if (shard.train.empty()) throw PartitionError("sigma_l: empty train shard");
    if (batches < 1) throw InputError("sigma_l: need at least 1 batch");
    if (batch_size < 1 || batch_size > shard.train.size()) {
        throw InputError("sigma_l: batch size " + std::to_string(batch_size) +
                         " outside [1, " + std::to_string(shard.train.size()) + "]");
    }
    SplitModel work = model.clone();
    std::vector<std::size_t> full = shard.train;
    std::sort(full.begin(), full.end());
    const Tensor g_full = shard_gradient(work, data, full);

    Rng rng(seed);
    double total = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
        std::vector<std::size_t> pick = full;
        rng.shuffle(pick);
        pick.resize(batch_size);
        std::sort(pick.begin(), pick.end());
        Tensor g = shard_gradient(work, data, pick);
        g.add_scaled(g_full, -1.0);
        total += g.squared_norm();
    }
    return total / static_cast<double>(batches);
}

SmoothnessResult estimate_smoothness(const std::function<Tensor(const Tensor&)>& grad_fn,
                                     const std::vector<std::pair<Tensor, Tensor>>& pairs) {
    SmoothnessResult res;
    for (const auto& [x, y] : pairs) {
        if (!x.same_shape(y)) throw InputError("smoothness: pair with mismatched shapes");
        Tensor diff = x;
        diff.add_scaled(y, -1.0);
        const double dist = std::sqrt(diff.squared_norm());
        if (dist == 0.0) {
            ++res.skipped;
            continue;
        }
        Tensor gdiff = grad_fn(x);
        gdiff.add_scaled(grad_fn(y), -1.0);
        res.max_ratio = std::max(res.max_ratio, std::sqrt(gdiff.squared_norm()) / dist);
    }
    return res;
}

}  // namespace fsl
