#include "fsl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "fsl/error.hpp"
#include "fsl/parallel.hpp"
#include "fsl/probes.hpp"

namespace fsl {

std::string to_string(Option option) { return option == Option::pit ? "pit" : "ptzo"; }

Option option_from_string(const std::string& name) {
    if (name == "pit") return Option::pit;
    if (name == "ptzo") return Option::ptzo;
    throw ConfigError("unknown option '" + name + "' (expected pit or ptzo)");
}

std::size_t RoundConfig::sampled_count() const {
    return static_cast<std::size_t>(
        std::llround(sample_ratio * static_cast<double>(clients)));
}

void RoundConfig::validate() const {
    if (clients < 1) throw ConfigError("federation: need at least 1 client");
    if (!(sample_ratio > 0.0) || !(sample_ratio <= 1.0)) {
        throw ConfigError("federation: sample ratio must lie in (0, 1]");
    }
    if (sampled_count() < 1) {
        throw ConfigError("federation: sample ratio times client count rounds to zero clients");
    }
    if (local_steps < 1) throw ConfigError("federation: need at least 1 local step");
    if (fedround < 1) throw ConfigError("federation: aggregation interval must be >= 1");
    if (batch < 1) throw ConfigError("federation: batch size must be >= 1");
    if (!(client_lr >= 0.0)) throw ConfigError("federation: client lr must be >= 0");
    if (!(server_lr >= 0.0)) throw ConfigError("federation: server lr must be >= 0");
    if (!(client_momentum >= 0.0) || !(client_momentum < 1.0)) {
        throw ConfigError("federation: momentum must lie in [0, 1)");
    }
    if (!(server_lr_decay > 0.0) || !(server_lr_decay <= 1.0)) {
        throw ConfigError("federation: server lr decay must lie in (0, 1]");
    }
    if (option == Option::ptzo) zo.validate();
}

std::vector<std::size_t> ClientState::next_batch() {
    if (cursor + batch > order.size()) {
        data_rng.shuffle(order);
        cursor = 0;
    }
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 order.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
    cursor += batch;
    // Ascending order fixes the float reduction order regardless of shuffle.
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<int> sample_clients(std::size_t clients, double q, std::size_t round,
                                std::uint64_t seed) {
    const std::size_t m =
        static_cast<std::size_t>(std::llround(q * static_cast<double>(clients)));
    if (m < 1 || m > clients) {
        throw ConfigError("sample_clients: q*M = " + std::to_string(m) + " outside [1, " +
                          std::to_string(clients) + "]");
    }
    std::vector<int> ids(clients);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(seed, Stream::client_sample, round));
    rng.shuffle(ids);
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

LocalStepResult local_step(ClientState& client, Stack& encoder_snapshot, const ModelDims& dims,
                           const Dataset& data, std::size_t k, std::size_t t,
                           const RoundConfig& cfg, Transcript* transcript) {
    const std::vector<std::size_t> idx = client.next_batch();
    const Tensor X = gather_rows(data, idx);
    const std::vector<int> y = gather_labels(data, idx);
    const auto round = static_cast<std::uint32_t>(t);

    // The snapshot's gradient slots are scratch; clear them so the final
    // step's backward leaves exactly this step's encoder gradient behind.
    encoder_snapshot.zero_grads();

    FeatureBundle fb = head_forward(client.head, dims, X, client.id, static_cast<int>(t),
                                    static_cast<int>(k));
    if (transcript) {
        transcript->record(round, client.id, MsgKind::feature_up, fb.h.size() * sizeof(double));
    }
    SmashedBundle sb = encoder_forward(encoder_snapshot, dims, fb);
    if (transcript) {
        transcript->record(round, client.id, MsgKind::smashed_down,
                           sb.b.size() * sizeof(double));
    }
    TailOutput to = tail_forward_loss(client.tail, dims, sb, y);
    ChainGrads grads = backward_chain(client.head, encoder_snapshot, client.tail, dims, fb, sb,
                                      to);
    if (transcript) {
        transcript->record(round, client.id, MsgKind::feature_grad_down,
                           grads.feature_grad.size() * sizeof(double));
    }

    LocalStepResult res;
    res.loss = to.loss;
    if (k == cfg.local_steps) {
        // Server gradient at the pre-update state, before head/tail move.
        if (cfg.option == Option::pit) {
            res.encoder_grad = flatten_grads(std::as_const(encoder_snapshot).params());
        } else {
            Rng zrng(derive_seed(cfg.seed, Stream::zo_direction, t,
                                 static_cast<std::uint64_t>(client.id)));
            ZOMessages zm = zo_messages(encoder_snapshot, client.tail, dims, fb, y, cfg.zo, zrng,
                                        round, transcript);
            res.encoder_grad = std::move(zm.g);
        }
        res.stored_gradient = true;
    }

    if (cfg.client_lr > 0.0) {
        std::vector<Parameter*> params = client.head.params();
        for (Parameter* p : client.tail.params()) params.push_back(p);
        client.optim.step(params);
    }
    client.head.zero_grads();
    client.tail.zero_grads();
    return res;
}

void server_update(ServerState& server, const std::vector<int>& sampled) {
    Tensor sum;
    for (int id : sampled) {
        auto it = std::find_if(server.stored.begin(), server.stored.end(),
                               [id](const auto& e) { return e.first == id; });
        if (it == server.stored.end()) {
            throw ProtocolError("server update: no stored gradient from client " +
                                std::to_string(id));
        }
        if (sum.empty()) {
            sum = Tensor(it->second.shape());
        }
        sum.add_scaled(it->second, 1.0);
    }
    sum.scale(1.0 / static_cast<double>(sampled.size()));
    if (server.lr > 0.0) {
        std::vector<Parameter*> params = server.encoder.params();
        Tensor w = flatten_values(std::as_const(server.encoder).params());
        w.add_scaled(sum, -server.lr);
        load_values(w, params);
    }
    server.stored.clear();
}

void aggregate_clients(std::vector<ClientState>& clients, const std::vector<int>& sampled,
                       std::uint32_t round, Transcript* transcript) {
    const double inv_m = 1.0 / static_cast<double>(sampled.size());
    Tensor head_avg, tail_avg;
    for (int id : sampled) {  // ascending by construction
        const ClientState& c = clients[static_cast<std::size_t>(id)];
        Tensor h = flatten_values(std::as_const(c.head).params());
        Tensor t = flatten_values(std::as_const(c.tail).params());
        if (transcript) {
            transcript->record(round, id, MsgKind::weights_up,
                               (h.size() + t.size()) * sizeof(double));
        }
        if (head_avg.empty()) {
            head_avg = Tensor(h.shape());
            tail_avg = Tensor(t.shape());
        }
        head_avg.add_scaled(h, 1.0);
        tail_avg.add_scaled(t, 1.0);
    }
    head_avg.scale(inv_m);
    tail_avg.scale(inv_m);
    for (ClientState& c : clients) {
        load_values(head_avg, c.head.params());
        load_values(tail_avg, c.tail.params());
        if (transcript) {
            transcript->record(round, c.id, MsgKind::weights_down,
                               (head_avg.size() + tail_avg.size()) * sizeof(double));
        }
    }
}

namespace {

double split_accuracy(const Stack& head, const Stack& encoder, const Stack& tail,
                      const ModelDims& dims, const Tensor& X, std::span<const int> y) {
    FeatureBundle fb = head_forward(head, dims, X, -1, -1, -1);
    SmashedBundle sb = encoder_forward(encoder, dims, fb);
    TailOutput to;
    to.logits = tail.forward(sb.b, to.tail_cache);
    const std::size_t rows = to.logits.dim(0), classes = to.logits.dim(1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = to.logits.data() + i * classes;
        std::size_t best = 0;
        for (std::size_t j = 1; j < classes; ++j) {
            if (row[j] > row[best]) best = j;
        }
        if (static_cast<std::size_t>(y[i]) == best) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(rows);
}

}  // namespace

EvalResult evaluate(const std::vector<ClientState>& clients, const Stack& encoder,
                    const ModelDims& dims, const Dataset& data) {
    EvalResult res;
    double total = 0.0;
    std::size_t counted = 0;
    for (const ClientState& c : clients) {
        if (c.shard.test.empty()) {
            res.per_client.push_back(std::numeric_limits<double>::quiet_NaN());
            ++res.skipped_empty;
            continue;
        }
        const Tensor X = gather_rows(data, c.shard.test);
        const std::vector<int> y = gather_labels(data, c.shard.test);
        const double acc = split_accuracy(c.head, encoder, c.tail, dims, X, y);
        res.per_client.push_back(acc);
        total += acc;
        ++counted;
    }
    res.mean = counted ? total / static_cast<double>(counted) : 0.0;
    return res;
}

namespace {

std::vector<ClientState> build_clients(const RoundConfig& cfg, const ModelDims& dims,
                                       const std::vector<ClientShard>& shards) {
    if (shards.size() != cfg.clients) {
        throw InputError("run_training: " + std::to_string(shards.size()) + " shards for " +
                         std::to_string(cfg.clients) + " clients");
    }
    std::vector<ClientState> clients;
    clients.reserve(cfg.clients);
    for (std::size_t i = 0; i < cfg.clients; ++i) {
        if (shards[i].train.empty()) {
            throw PartitionError("run_training: client " + std::to_string(i) +
                                 " has an empty train shard");
        }
        ClientState c;
        c.id = static_cast<int>(i);
        Rng init(derive_seed(cfg.seed, Stream::client_init, i));
        c.head = make_head(dims, init);
        c.tail = make_tail(dims, init);
        OptimConfig oc;
        oc.kind = cfg.client_optimizer;
        oc.lr = cfg.client_lr > 0.0 ? cfg.client_lr : 1.0;  // placeholder when frozen
        oc.momentum = cfg.client_momentum;
        c.optim = Optimizer(oc);
        c.shard = shards[i];
        c.batch = std::min(cfg.batch, c.shard.train.size());
        c.order = c.shard.train;
        c.cursor = c.order.size();  // force a shuffle on first use
        c.data_rng = Rng(derive_seed(cfg.seed, Stream::client_data, i));
        clients.push_back(std::move(c));
    }
    return clients;
}

// Mean gradient-dissimilarity probe at the round's end state: reference
// model = client-averaged head/tail plus the current encoder.
void probe_sigma_g(const std::vector<ClientState>& clients, const Stack& encoder,
                   const ModelDims& dims, const Dataset& data,
                   const std::vector<ClientShard>& shards, MetricsRecord& rec) {
    Stack head_avg = clients[0].head.clone();
    Stack tail_avg = clients[0].tail.clone();
    Tensor h_sum, t_sum;
    for (const ClientState& c : clients) {
        Tensor h = flatten_values(std::as_const(c.head).params());
        Tensor t = flatten_values(std::as_const(c.tail).params());
        if (h_sum.empty()) {
            h_sum = Tensor(h.shape());
            t_sum = Tensor(t.shape());
        }
        h_sum.add_scaled(h, 1.0);
        t_sum.add_scaled(t, 1.0);
    }
    h_sum.scale(1.0 / static_cast<double>(clients.size()));
    t_sum.scale(1.0 / static_cast<double>(clients.size()));
    load_values(h_sum, head_avg.params());
    load_values(t_sum, tail_avg.params());
    SplitModel probe_model(dims, std::move(head_avg), encoder.clone(), std::move(tail_avg));
    SigmaGResult sg = estimate_sigma_g(probe_model, data, shards);
    rec.has_probe = true;
    rec.sigma_g_mean = sg.mean_sq;
    rec.sigma_g_max = sg.max_sq;
}

void tally_round_bytes(const Transcript& transcript, std::size_t from_event,
                       MetricsRecord& rec) {
    const auto& events = transcript.events();
    for (std::size_t i = from_event; i < events.size(); ++i) {
        if (is_upstream(events[i].kind)) {
            rec.bytes_up += events[i].bytes;
        } else {
            rec.bytes_down += events[i].bytes;
        }
    }
}

}  // namespace

TrainOutput run_training(const RoundConfig& cfg, const ModelDims& dims, const Dataset& data,
                         const std::vector<ClientShard>& shards, Stack initial_encoder,
                         const RoundObserver* observer) {
    cfg.validate();
    dims.validate();
    TrainOutput out;
    out.server.encoder = std::move(initial_encoder);
    out.server.lr = cfg.server_lr;
    out.clients = build_clients(cfg, dims, shards);

    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        const std::vector<int> sampled = sample_clients(cfg.clients, cfg.sample_ratio, t,
                                                        cfg.seed);
        const std::size_t m = sampled.size();
        const std::size_t round_event_base = out.transcript.count();

        // Frozen per-client encoder snapshots; clients run independently.
        std::vector<Stack> snapshots;
        snapshots.reserve(m);
        for (std::size_t si = 0; si < m; ++si) snapshots.push_back(out.server.encoder.clone());
        std::vector<Transcript> buffers(m);
        std::vector<LocalStepResult> finals(m);

        const bool par = parallel::active() && m > 1;
        const auto mm = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(dynamic) if (par)
        for (std::int64_t si = 0; si < mm; ++si) {
            ClientState& c = out.clients[static_cast<std::size_t>(sampled[si])];
            LocalStepResult last;
            for (std::size_t k = 1; k <= cfg.local_steps; ++k) {
                last = local_step(c, snapshots[static_cast<std::size_t>(si)], dims, data, k, t,
                                  cfg, &buffers[static_cast<std::size_t>(si)]);
            }
            finals[static_cast<std::size_t>(si)] = std::move(last);
        }

        // Deterministic merge: ascending client id (sampled is sorted).
        for (std::size_t si = 0; si < m; ++si) out.transcript.append(buffers[si]);
        out.server.stored.clear();
        for (std::size_t si = 0; si < m; ++si) {
            out.server.stored.emplace_back(sampled[si], std::move(finals[si].encoder_grad));
        }
        server_update(out.server, sampled);
        if (cfg.server_lr_decay_every > 0 && (t + 1) % cfg.server_lr_decay_every == 0) {
            out.server.lr *= cfg.server_lr_decay;
        }
        if (t % cfg.fedround == 0) {
            aggregate_clients(out.clients, sampled, static_cast<std::uint32_t>(t),
                              &out.transcript);
        }

        MetricsRecord rec;
        rec.round = t;
        double loss_sum = 0.0, loss_max = 0.0;
        for (std::size_t si = 0; si < m; ++si) {
            loss_sum += finals[si].loss;
            loss_max = std::max(loss_max, finals[si].loss);
        }
        rec.mean_train_loss = loss_sum / static_cast<double>(m);
        rec.max_train_loss = loss_max;
        rec.mean_test_acc = evaluate(out.clients, out.server.encoder, dims, data).mean;
        if (cfg.probe_every > 0 && t % cfg.probe_every == 0) {
            probe_sigma_g(out.clients, out.server.encoder, dims, data, shards, rec);
        }
        tally_round_bytes(out.transcript, round_event_base, rec);
        out.metrics.push_back(rec);

        if (observer && observer->after_round) {
            observer->after_round(t, out.server, out.clients);
        }
    }
    return out;
}

FedAvgOutput fedavg_baseline(const RoundConfig& cfg, const ModelDims& dims, const Dataset& data,
                             const std::vector<ClientShard>& shards, Stack initial_encoder) {
    cfg.validate();
    dims.validate();
    if (shards.size() != cfg.clients) {
        throw InputError("fedavg: " + std::to_string(shards.size()) + " shards for " +
                         std::to_string(cfg.clients) + " clients");
    }

    Rng init(derive_seed(cfg.seed, Stream::fedavg_init));
    Stack head0 = make_head(dims, init);
    Stack tail0 = make_tail(dims, init);
    SplitModel global(dims, std::move(head0), std::move(initial_encoder), std::move(tail0));

    // Every client keeps a persistent local replica: broadcast overwrites its
    // weights but its optimizer moments and minibatch cursor survive rounds.
    struct LocalReplica {
        SplitModel model;
        Optimizer optim{OptimConfig{}};
        std::vector<std::size_t> order;
        std::size_t cursor = 0;
        std::size_t batch = 0;
        Rng data_rng{0};
    };
    std::vector<LocalReplica> replicas;
    replicas.reserve(cfg.clients);
    for (std::size_t i = 0; i < cfg.clients; ++i) {
        if (shards[i].train.empty()) {
            throw PartitionError("fedavg: client " + std::to_string(i) +
                                 " has an empty train shard");
        }
        LocalReplica r;
        r.model = global.clone();
        OptimConfig oc;
        oc.kind = cfg.client_optimizer;
        oc.lr = cfg.client_lr > 0.0 ? cfg.client_lr : 1.0;
        oc.momentum = cfg.client_momentum;
        r.optim = Optimizer(oc);
        r.order = shards[i].train;
        r.cursor = r.order.size();
        r.batch = std::min(cfg.batch, r.order.size());
        r.data_rng = Rng(derive_seed(cfg.seed, Stream::client_data, i));
        replicas.push_back(std::move(r));
    }

    FedAvgOutput out;
    const Tensor global0 = flatten_values(std::as_const(global).all_params());
    const std::uint64_t model_bytes = global0.size() * sizeof(double);

    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        const std::vector<int> sampled = sample_clients(cfg.clients, cfg.sample_ratio, t,
                                                        cfg.seed);
        const std::size_t m = sampled.size();
        const std::size_t round_event_base = out.transcript.count();
        const Tensor broadcast = flatten_values(std::as_const(global).all_params());

        std::vector<Tensor> trained(m);
        std::vector<double> losses(m, 0.0);
        const bool par = parallel::active() && m > 1;
        const auto mm = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(dynamic) if (par)
        for (std::int64_t si = 0; si < mm; ++si) {
            LocalReplica& r = replicas[static_cast<std::size_t>(sampled[si])];
            load_values(broadcast, r.model.all_params());
            std::vector<Parameter*> params = r.model.all_params();
            double loss = 0.0;
            for (std::size_t k = 0; k < cfg.local_steps; ++k) {
                if (r.cursor + r.batch > r.order.size()) {
                    r.data_rng.shuffle(r.order);
                    r.cursor = 0;
                }
                std::vector<std::size_t> idx(
                    r.order.begin() + static_cast<std::ptrdiff_t>(r.cursor),
                    r.order.begin() + static_cast<std::ptrdiff_t>(r.cursor + r.batch));
                r.cursor += r.batch;
                std::sort(idx.begin(), idx.end());
                const Tensor X = gather_rows(data, idx);
                const std::vector<int> y = gather_labels(data, idx);
                r.model.zero_grads();
                loss = r.model.backprop(X, y);
                if (cfg.client_lr > 0.0) r.optim.step(params);
            }
            trained[static_cast<std::size_t>(si)] =
                flatten_values(std::as_const(r.model).all_params());
            losses[static_cast<std::size_t>(si)] = loss;
        }

        Tensor avg(global0.shape());
        for (std::size_t si = 0; si < m; ++si) {
            out.transcript.record(static_cast<std::uint32_t>(t), sampled[si],
                                  MsgKind::weights_up, model_bytes);
            avg.add_scaled(trained[si], 1.0);
        }
        avg.scale(1.0 / static_cast<double>(m));
        load_values(avg, global.all_params());
        for (std::size_t i = 0; i < cfg.clients; ++i) {
            out.transcript.record(static_cast<std::uint32_t>(t), static_cast<int>(i),
                                  MsgKind::weights_down, model_bytes);
        }

        MetricsRecord rec;
        rec.round = t;
        double loss_sum = 0.0, loss_max = 0.0;
        for (std::size_t si = 0; si < m; ++si) {
            loss_sum += losses[si];
            loss_max = std::max(loss_max, losses[si]);
        }
        rec.mean_train_loss = loss_sum / static_cast<double>(m);
        rec.max_train_loss = loss_max;
        double acc_sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t i = 0; i < cfg.clients; ++i) {
            if (shards[i].test.empty()) continue;
            const Tensor X = gather_rows(data, shards[i].test);
            const std::vector<int> y = gather_labels(data, shards[i].test);
            acc_sum += global.accuracy(X, y);
            ++counted;
        }
        rec.mean_test_acc = counted ? acc_sum / static_cast<double>(counted) : 0.0;
        tally_round_bytes(out.transcript, round_event_base, rec);
        out.metrics.push_back(rec);
    }
    out.model = std::move(global);
    return out;
}

}  // namespace fsl
