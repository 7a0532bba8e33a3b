#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsl/data.hpp"
#include "fsl/model.hpp"
#include "fsl/optim.hpp"
#include "fsl/rng.hpp"
#include "fsl/transcript.hpp"
#include "fsl/zo.hpp"

namespace fsl {

// Option I backpropagates through the encoder for the server gradient;
// Option II estimates it from two perturbed forward passes.
enum class Option { pit, ptzo };

std::string to_string(Option option);
Option option_from_string(const std::string& name);

struct RoundConfig {
    std::size_t rounds = 500;       // T
    std::size_t clients = 100;      // M
    double sample_ratio = 0.1;      // q in (0, 1]
    std::size_t local_steps = 5;    // K
    std::size_t batch = 128;        // clamped to shard size per client
    std::size_t fedround = 20;      // head/tail aggregation interval
    Option option = Option::pit;
    ZOConfig zo;
    OptimKind client_optimizer = OptimKind::adam;
    double client_lr = 2e-4;        // 0 freezes head/tail (probing only)
    double client_momentum = 0.9;
    double server_lr = 1e-6;        // 0 freezes the encoder
    double server_lr_decay = 0.5;
    std::size_t server_lr_decay_every = 0;  // rounds between decays; 0 = never
    std::size_t probe_every = 0;            // sigma_g cadence in rounds; 0 = off
    std::uint64_t seed = 0;

    std::size_t sampled_count() const;  // m = round(q * M)
    void validate() const;
};

struct ClientState {
    int id = -1;
    Stack head;
    Stack tail;
    Optimizer optim{OptimConfig{}};
    ClientShard shard;
    std::size_t batch = 0;  // effective minibatch size

    // Persistent minibatch cursor: walks a shuffled order, reshuffles when
    // the remainder cannot fill a batch.
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    Rng data_rng{0};

    std::vector<std::size_t> next_batch();
};

struct ServerState {
    Stack encoder;
    double lr = 1e-6;
    // (client id, flat encoder gradient), ascending id; cleared by server_update.
    std::vector<std::pair<int, Tensor>> stored;
};

struct MetricsRecord {
    std::size_t round = 0;
    double mean_train_loss = 0.0;
    double max_train_loss = 0.0;
    double mean_test_acc = 0.0;
    bool has_probe = false;
    double sigma_g_mean = 0.0;
    double sigma_g_max = 0.0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
    // Stdout-only; keeping wall time out of the record keeps output files
    // byte-identical across reruns.
};

// Uniform sample of m = round(q*M) distinct ids, deterministic in (seed, round).
std::vector<int> sample_clients(std::size_t clients, double q, std::size_t round,
                                std::uint64_t seed);

struct LocalStepResult {
    double loss = 0.0;
    bool stored_gradient = false;
    Tensor encoder_grad;  // flat; only set at the final local step
};

// One minibatch through the split chain: forward, full backward, then the
// head/tail optimizer step. At k == local_steps the encoder weight gradient
// (Option I: backprop; Option II: two-point estimate) is produced first, at
// the pre-update state, and returned for server-side storage.
LocalStepResult local_step(ClientState& client, Stack& encoder_snapshot, const ModelDims& dims,
                           const Dataset& data, std::size_t k, std::size_t t,
                           const RoundConfig& cfg, Transcript* transcript);

// w_E <- w_E - (lr/m) * sum of stored gradients, summed in ascending client
// id; requires exactly one stored gradient per sampled client.
void server_update(ServerState& server, const std::vector<int>& sampled);

// Average the participants' head/tail weights and broadcast to every client.
// Optimizer state is left alone.
void aggregate_clients(std::vector<ClientState>& clients, const std::vector<int>& sampled,
                       std::uint32_t round, Transcript* transcript);

struct EvalResult {
    std::vector<double> per_client;  // NaN where a client has no test data
    double mean = 0.0;
    std::size_t skipped_empty = 0;
};

// Per-client accuracy of (own head, shared encoder, own tail) on the client's
// test shard; mean over clients that have test data.
EvalResult evaluate(const std::vector<ClientState>& clients, const Stack& encoder,
                    const ModelDims& dims, const Dataset& data);

struct RoundObserver {
    std::function<void(std::size_t round, const ServerState& server,
                       const std::vector<ClientState>& clients)>
        after_round;
};

struct TrainOutput {
    std::vector<MetricsRecord> metrics;
    std::vector<ClientState> clients;
    ServerState server;
    Transcript transcript;
};

TrainOutput run_training(const RoundConfig& cfg, const ModelDims& dims, const Dataset& data,
                         const std::vector<ClientShard>& shards, Stack initial_encoder,
                         const RoundObserver* observer = nullptr);

// Whole-model FedAvg under the same round/budget accounting: sampled clients
// train all of (head, encoder, tail) locally and the server averages weights
// every round.
struct FedAvgOutput {
    std::vector<MetricsRecord> metrics;
    SplitModel model;
    Transcript transcript;
};

FedAvgOutput fedavg_baseline(const RoundConfig& cfg, const ModelDims& dims, const Dataset& data,
                             const std::vector<ClientShard>& shards, Stack initial_encoder);

}  // namespace fsl
