#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "fsl/data.hpp"
#include "fsl/error.hpp"
#include "fsl/federation.hpp"
#include "fsl/model.hpp"
#include "fsl/optim.hpp"
#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"
#include "fsl/transcript.hpp"
#include "fsl/zo.hpp"

using fsl::ClientShard;
using fsl::ClientState;
using fsl::Dataset;
using fsl::ModelDims;
using fsl::Option;
using fsl::Rng;
using fsl::RoundConfig;
using fsl::SplitModel;
using fsl::Stack;
using fsl::Tensor;

namespace {

ModelDims tiny_dims() {
    ModelDims d;
    d.tokens = 2;
    d.token_width = 4;
    d.attn_width = 8;
    d.mlp_width = 8;
    d.tail_hidden = 6;
    d.classes = 3;
    return d;
}

Dataset tiny_data(std::size_t n, std::uint64_t seed) {
    return fsl::generate_synthetic(n, 3, 2.0, seed, tiny_dims().input());
}

// Equal contiguous shards with an optional per-client test slice at the end.
std::vector<ClientShard> even_shards(std::size_t n, std::size_t clients, std::size_t test_each) {
    std::vector<ClientShard> shards(clients);
    const std::size_t per = n / clients;
    for (std::size_t i = 0; i < clients; ++i) {
        shards[i].client_id = static_cast<int>(i);
        for (std::size_t j = 0; j < per - test_each; ++j) shards[i].train.push_back(i * per + j);
        for (std::size_t j = per - test_each; j < per; ++j) shards[i].test.push_back(i * per + j);
    }
    return shards;
}

ClientState make_client(int id, const ModelDims& dims, std::uint64_t seed, ClientShard shard,
                        std::size_t batch, const fsl::OptimConfig& oc) {
    ClientState c;
    c.id = id;
    Rng init(seed);
    c.head = fsl::make_head(dims, init);
    c.tail = fsl::make_tail(dims, init);
    c.optim = fsl::Optimizer(oc);
    c.shard = std::move(shard);
    c.batch = std::min(batch, c.shard.train.size());
    c.order = c.shard.train;
    c.cursor = c.order.size();
    c.data_rng = Rng(seed + 1);
    return c;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Tensor stack_values(const Stack& s) { return fsl::flatten_values(s.params()); }

RoundConfig base_config() {
    RoundConfig cfg;
    cfg.rounds = 2;
    cfg.clients = 4;
    cfg.sample_ratio = 0.5;
    cfg.local_steps = 2;
    cfg.batch = 10;
    cfg.fedround = 2;
    cfg.client_lr = 1e-3;
    cfg.server_lr = 1e-2;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("client sampling is deterministic, sorted and exact in size") {
    const std::vector<int> a = fsl::sample_clients(100, 0.1, 3, 42);
    const std::vector<int> b = fsl::sample_clients(100, 0.1, 3, 42);
    CHECK(a == b);
    CHECK(a.size() == 10);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::set<int>(a.begin(), a.end()).size() == 10);
    for (int id : a) {
        CHECK(id >= 0);
        CHECK(id < 100);
    }

    // Different rounds and seeds draw different compositions.
    CHECK(a != fsl::sample_clients(100, 0.1, 4, 42));
    CHECK(a != fsl::sample_clients(100, 0.1, 3, 43));

    // Full participation is the identity sample.
    const std::vector<int> all = fsl::sample_clients(5, 1.0, 0, 1);
    CHECK(all == std::vector<int>{0, 1, 2, 3, 4});

    // q*M rounding to zero is refused.
    CHECK_THROWS_AS(fsl::sample_clients(100, 0.001, 0, 1), fsl::ConfigError);
}

TEST_CASE("round config validation rejects out-of-range settings") {
    RoundConfig cfg = base_config();
    cfg.validate();
    CHECK(cfg.sampled_count() == 2);

    RoundConfig c100;
    c100.clients = 100;
    c100.sample_ratio = 0.1;
    CHECK(c100.sampled_count() == 10);
    c100.clients = 3;
    c100.sample_ratio = 0.5;
    CHECK(c100.sampled_count() == 2);  // llround(1.5) rounds away from zero

    auto expect_throw = [](RoundConfig bad) {
        CHECK_THROWS_AS(bad.validate(), fsl::ConfigError);
    };
    RoundConfig bad = base_config();
    bad.clients = 0;
    expect_throw(bad);
    bad = base_config();
    bad.sample_ratio = 0.0;
    expect_throw(bad);
    bad = base_config();
    bad.sample_ratio = 1.5;
    expect_throw(bad);
    bad = base_config();
    bad.clients = 100;
    bad.sample_ratio = 0.001;
    expect_throw(bad);
    bad = base_config();
    bad.local_steps = 0;
    expect_throw(bad);
    bad = base_config();
    bad.fedround = 0;
    expect_throw(bad);
    bad = base_config();
    bad.batch = 0;
    expect_throw(bad);
    bad = base_config();
    bad.client_lr = -1.0;
    expect_throw(bad);
    bad = base_config();
    bad.server_lr = -1.0;
    expect_throw(bad);
    bad = base_config();
    bad.client_momentum = 1.0;
    expect_throw(bad);
    bad = base_config();
    bad.server_lr_decay = 0.0;
    expect_throw(bad);
    bad = base_config();
    bad.option = Option::ptzo;
    bad.zo.epsilon = 0.0;
    expect_throw(bad);

    CHECK(fsl::option_from_string("pit") == Option::pit);
    CHECK(fsl::option_from_string("ptzo") == Option::ptzo);
    CHECK_THROWS_AS(fsl::option_from_string("sgd"), fsl::ConfigError);
    CHECK(fsl::to_string(Option::pit) == "pit");
    CHECK(fsl::to_string(Option::ptzo) == "ptzo");
}

TEST_CASE("persistent minibatch cursor walks shuffled epochs") {
    const ModelDims dims = tiny_dims();
    fsl::OptimConfig oc;
    ClientShard shard;
    shard.client_id = 0;
    for (std::size_t i = 0; i < 10; ++i) shard.train.push_back(i * 3);  // 0,3,...,27
    ClientState c = make_client(0, dims, 11, shard, 4, oc);

    // Batches are sorted, drawn without replacement until the epoch cannot
    // fill another batch, then a reshuffle starts the next epoch.
    std::vector<std::size_t> b1 = c.next_batch();
    std::vector<std::size_t> b2 = c.next_batch();
    CHECK(b1.size() == 4);
    CHECK(std::is_sorted(b1.begin(), b1.end()));
    std::vector<std::size_t> joined = b1;
    joined.insert(joined.end(), b2.begin(), b2.end());
    std::sort(joined.begin(), joined.end());
    CHECK(std::adjacent_find(joined.begin(), joined.end()) == joined.end());  // disjoint

    // 8 of 10 used; the remaining 2 cannot fill a batch of 4.
    std::vector<std::size_t> b3 = c.next_batch();
    CHECK(b3.size() == 4);
    for (std::size_t v : b3) CHECK(v % 3 == 0);
}

TEST_CASE("backprop option stores the pre-update encoder gradient at the final step") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(60, 21);
    ClientShard shard;
    shard.client_id = 0;
    for (std::size_t i = 0; i < 12; ++i) shard.train.push_back(i);

    RoundConfig cfg = base_config();
    cfg.local_steps = 1;
    cfg.batch = shard.train.size();  // full shard: the batch is predictable
    fsl::OptimConfig oc;
    oc.lr = cfg.client_lr;
    ClientState client = make_client(0, dims, 31, shard, cfg.batch, oc);

    Rng enc_rng(32);
    Stack encoder = fsl::make_encoder(dims, enc_rng);
    const Stack head0 = client.head.clone();
    const Stack tail0 = client.tail.clone();
    const Stack enc0 = encoder.clone();

    fsl::LocalStepResult res =
        fsl::local_step(client, encoder, dims, data, 1, 0, cfg, nullptr);
    REQUIRE(res.stored_gradient);

    // Oracle: assemble the pre-step stacks and backpropagate the same batch.
    std::vector<std::size_t> idx = shard.train;
    std::sort(idx.begin(), idx.end());
    const Tensor X = fsl::gather_rows(data, idx);
    const std::vector<int> y = fsl::gather_labels(data, idx);
    SplitModel oracle(dims, head0.clone(), enc0.clone(), tail0.clone());
    oracle.zero_grads();
    const double oracle_loss = oracle.backprop(X, y);
    const Tensor want = fsl::flatten_grads(std::as_const(oracle.encoder).params());

    CHECK(res.loss == oracle_loss);
    CHECK(bitwise_equal(res.encoder_grad, want));
    // The head/tail stepped after the gradient was taken.
    CHECK_FALSE(bitwise_equal(stack_values(client.head), stack_values(head0)));
}

TEST_CASE("perturbation option reproduces the two-point estimator bitwise") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(60, 41);
    ClientShard shard;
    shard.client_id = 2;
    for (std::size_t i = 0; i < 10; ++i) shard.train.push_back(i + 5);

    RoundConfig cfg = base_config();
    cfg.option = Option::ptzo;
    cfg.zo.num_directions = 2;
    cfg.local_steps = 1;
    cfg.batch = shard.train.size();
    cfg.seed = 99;
    fsl::OptimConfig oc;
    oc.lr = cfg.client_lr;
    ClientState client = make_client(2, dims, 51, shard, cfg.batch, oc);

    Rng enc_rng(52);
    Stack encoder = fsl::make_encoder(dims, enc_rng);
    Stack enc_copy = encoder.clone();
    const Stack tail0 = client.tail.clone();
    const Stack head0 = client.head.clone();

    const std::size_t t = 3;
    fsl::LocalStepResult res =
        fsl::local_step(client, encoder, dims, data, 1, t, cfg, nullptr);
    REQUIRE(res.stored_gradient);

    // Replay the estimator on copies with the same derived direction stream.
    std::vector<std::size_t> idx = shard.train;
    std::sort(idx.begin(), idx.end());
    const Tensor X = fsl::gather_rows(data, idx);
    const std::vector<int> y = fsl::gather_labels(data, idx);
    const fsl::FeatureBundle fb = fsl::head_forward(head0, dims, X, 2, static_cast<int>(t), 1);
    Rng zrng(fsl::derive_seed(cfg.seed, fsl::Stream::zo_direction, t, 2));
    Stack tail_copy = tail0.clone();
    fsl::ZOMessages zm =
        fsl::zo_messages(enc_copy, tail_copy, dims, fb, y, cfg.zo, zrng, 0, nullptr);
    CHECK(bitwise_equal(res.encoder_grad, zm.g));

    // The snapshot's weights came back restored.
    CHECK(bitwise_equal(stack_values(encoder), stack_values(enc_copy)));
}

TEST_CASE("intermediate local steps do not store gradients") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(60, 61);
    ClientShard shard;
    shard.client_id = 0;
    for (std::size_t i = 0; i < 8; ++i) shard.train.push_back(i);

    RoundConfig cfg = base_config();
    cfg.local_steps = 3;
    cfg.batch = 4;
    fsl::OptimConfig oc;
    oc.lr = cfg.client_lr;
    ClientState client = make_client(0, dims, 71, shard, cfg.batch, oc);
    Rng enc_rng(72);
    Stack encoder = fsl::make_encoder(dims, enc_rng);

    const fsl::LocalStepResult r1 = fsl::local_step(client, encoder, dims, data, 1, 0, cfg, nullptr);
    CHECK_FALSE(r1.stored_gradient);
    CHECK(r1.encoder_grad.size() == 0);
    const fsl::LocalStepResult r2 = fsl::local_step(client, encoder, dims, data, 2, 0, cfg, nullptr);
    CHECK_FALSE(r2.stored_gradient);
    const fsl::LocalStepResult r3 = fsl::local_step(client, encoder, dims, data, 3, 0, cfg, nullptr);
    CHECK(r3.stored_gradient);
}

TEST_CASE("zero client lr freezes head and tail through a local step") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(60, 81);
    ClientShard shard;
    shard.client_id = 0;
    for (std::size_t i = 0; i < 8; ++i) shard.train.push_back(i);

    RoundConfig cfg = base_config();
    cfg.client_lr = 0.0;
    cfg.local_steps = 1;
    cfg.batch = 8;
    fsl::OptimConfig oc;
    ClientState client = make_client(0, dims, 91, shard, cfg.batch, oc);
    const Tensor head_before = stack_values(client.head);
    const Tensor tail_before = stack_values(client.tail);

    Rng enc_rng(92);
    Stack encoder = fsl::make_encoder(dims, enc_rng);
    (void)fsl::local_step(client, encoder, dims, data, 1, 0, cfg, nullptr);
    CHECK(bitwise_equal(stack_values(client.head), head_before));
    CHECK(bitwise_equal(stack_values(client.tail), tail_before));
}

TEST_CASE("server update averages stored gradients and clears them") {
    const ModelDims dims = tiny_dims();
    Rng rng(101);
    fsl::ServerState server;
    server.encoder = fsl::make_encoder(dims, rng);
    server.lr = 0.25;
    const Tensor w0 = stack_values(server.encoder);
    const std::size_t n = w0.size();

    // Single client: w <- w - lr * g exactly.
    Tensor g = Tensor::randn({n}, rng);
    server.stored.emplace_back(0, g);
    fsl::server_update(server, {0});
    Tensor want = w0;
    want.add_scaled(g, -0.25);
    CHECK(bitwise_equal(stack_values(server.encoder), want));
    CHECK(server.stored.empty());

    // Two clients: the average of their gradients moves the weights.
    fsl::ServerState pair;
    pair.encoder = fsl::make_encoder(dims, rng);
    pair.lr = 0.5;
    const Tensor p0 = stack_values(pair.encoder);
    Tensor g1 = Tensor::randn({n}, rng);
    Tensor g2 = Tensor::randn({n}, rng);
    pair.stored.emplace_back(1, g1);
    pair.stored.emplace_back(4, g2);
    fsl::server_update(pair, {1, 4});
    Tensor avg({n});
    avg.add_scaled(g1, 1.0);
    avg.add_scaled(g2, 1.0);
    avg.scale(0.5);
    Tensor want2 = p0;
    want2.add_scaled(avg, -0.5);
    CHECK(bitwise_equal(stack_values(pair.encoder), want2));

    // Opposite gradients cancel: the weights do not move.
    fsl::ServerState cancel;
    cancel.encoder = fsl::make_encoder(dims, rng);
    cancel.lr = 1.0;
    const Tensor c0 = stack_values(cancel.encoder);
    Tensor gpos = Tensor::randn({n}, rng);
    Tensor gneg = gpos;
    gneg.scale(-1.0);
    cancel.stored.emplace_back(0, gpos);
    cancel.stored.emplace_back(1, gneg);
    fsl::server_update(cancel, {0, 1});
    CHECK(bitwise_equal(stack_values(cancel.encoder), c0));

    // A missing participant gradient is a protocol violation naming the id.
    fsl::ServerState missing;
    missing.encoder = fsl::make_encoder(dims, rng);
    missing.stored.emplace_back(0, g1);
    try {
        fsl::server_update(missing, {0, 3});
        FAIL("expected a protocol error");
    } catch (const fsl::ProtocolError& e) {
        CHECK(std::string(e.what()).find("client 3") != std::string::npos);
    }

    // Zero lr: stored gradients are consumed but the encoder stays put.
    fsl::ServerState frozen;
    frozen.encoder = fsl::make_encoder(dims, rng);
    frozen.lr = 0.0;
    const Tensor f0 = stack_values(frozen.encoder);
    frozen.stored.emplace_back(0, g2);
    fsl::server_update(frozen, {0});
    CHECK(bitwise_equal(stack_values(frozen.encoder), f0));
    CHECK(frozen.stored.empty());
}

TEST_CASE("aggregation averages participants and broadcasts to everyone") {
    const ModelDims dims = tiny_dims();
    fsl::OptimConfig oc;
    ClientShard dummy;
    dummy.train = {0};
    std::vector<ClientState> clients;
    for (int i = 0; i < 3; ++i) clients.push_back(make_client(i, dims, 200 + i, dummy, 1, oc));

    const Tensor h0 = stack_values(clients[0].head);
    const Tensor h1 = stack_values(clients[1].head);
    const Tensor t0 = stack_values(clients[0].tail);
    const Tensor t1 = stack_values(clients[1].tail);

    // Mark optimizer moments; aggregation must not touch them.
    clients[2].head.params()[0]->m1.fill(5.0);

    fsl::Transcript log;
    fsl::aggregate_clients(clients, {0, 1}, 4, &log);

    Tensor want_h(h0.shape());
    want_h.add_scaled(h0, 1.0);
    want_h.add_scaled(h1, 1.0);
    want_h.scale(0.5);
    Tensor want_t(t0.shape());
    want_t.add_scaled(t0, 1.0);
    want_t.add_scaled(t1, 1.0);
    want_t.scale(0.5);

    for (const ClientState& c : clients) {
        CHECK(bitwise_equal(stack_values(c.head), want_h));
        CHECK(bitwise_equal(stack_values(c.tail), want_t));
    }
    CHECK(clients[2].head.params()[0]->m1[0] == 5.0);

    // Two uploads, three broadcasts, sized head+tail.
    const std::uint64_t wire = (h0.size() + t0.size()) * sizeof(double);
    CHECK(log.count() == 5);
    CHECK(log.bytes_matching(fsl::MsgKind::weights_up) == 2 * wire);
    CHECK(log.bytes_matching(fsl::MsgKind::weights_down) == 3 * wire);

    // Averaging identical participants is exact: broadcast equals their state.
    std::vector<ClientState> twins;
    twins.push_back(make_client(0, dims, 300, dummy, 1, oc));
    twins.push_back(make_client(1, dims, 300, dummy, 1, oc));
    const Tensor twin_h = stack_values(twins[0].head);
    fsl::aggregate_clients(twins, {0, 1}, 0, nullptr);
    CHECK(bitwise_equal(stack_values(twins[0].head), twin_h));
    CHECK(bitwise_equal(stack_values(twins[1].head), twin_h));
}

TEST_CASE("evaluation averages over clients that have test data") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(60, 111);
    Rng rng(112);
    Stack encoder = fsl::make_encoder(dims, rng);
    fsl::OptimConfig oc;

    ClientShard with_test;
    with_test.train = {0, 1};
    with_test.test = {2, 3, 4, 5};
    ClientShard no_test;
    no_test.train = {6, 7};

    std::vector<ClientState> clients;
    clients.push_back(make_client(0, dims, 113, with_test, 2, oc));
    clients.push_back(make_client(1, dims, 114, no_test, 2, oc));
    clients.push_back(make_client(2, dims, 115, with_test, 2, oc));

    const fsl::EvalResult res = fsl::evaluate(clients, encoder, dims, data);
    REQUIRE(res.per_client.size() == 3);
    CHECK(std::isnan(res.per_client[1]));
    CHECK(res.skipped_empty == 1);
    CHECK(res.mean ==
          doctest::Approx(0.5 * (res.per_client[0] + res.per_client[2])).epsilon(1e-12));
}

TEST_CASE("training rejects mismatched shards and empty clients") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(120, 121);
    RoundConfig cfg = base_config();
    Rng rng(122);

    std::vector<ClientShard> three = even_shards(120, 3, 5);
    CHECK_THROWS_AS(
        fsl::run_training(cfg, dims, data, three, fsl::make_encoder(dims, rng)),
        fsl::InputError);

    std::vector<ClientShard> four = even_shards(120, 4, 5);
    four[2].train.clear();
    CHECK_THROWS_AS(
        fsl::run_training(cfg, dims, data, four, fsl::make_encoder(dims, rng)),
        fsl::PartitionError);

    CHECK_THROWS_AS(
        fsl::fedavg_baseline(cfg, dims, data, three, fsl::make_encoder(dims, rng)),
        fsl::InputError);
}

TEST_CASE("frozen learning rates leave every weight untouched across rounds") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(60, 131);
    RoundConfig cfg;
    cfg.rounds = 3;
    cfg.clients = 1;
    cfg.sample_ratio = 1.0;
    cfg.local_steps = 2;
    cfg.batch = 8;
    cfg.fedround = 1;
    cfg.client_lr = 0.0;
    cfg.server_lr = 0.0;
    cfg.seed = 5;

    std::vector<ClientShard> shards(1);
    shards[0].client_id = 0;
    for (std::size_t i = 0; i < 40; ++i) shards[0].train.push_back(i);

    Rng enc_rng(132);
    Stack encoder = fsl::make_encoder(dims, enc_rng);
    const Tensor enc0 = stack_values(encoder);
    const fsl::TrainOutput out =
        fsl::run_training(cfg, dims, data, shards, std::move(encoder));

    CHECK(bitwise_equal(stack_values(out.server.encoder), enc0));
    // Head/tail still equal their seeded initialization: the single-client
    // average is exact and the optimizer never stepped.
    Rng init(fsl::derive_seed(cfg.seed, fsl::Stream::client_init, 0));
    const Stack head0 = fsl::make_head(dims, init);
    const Stack tail0 = fsl::make_tail(dims, init);
    CHECK(bitwise_equal(stack_values(out.clients[0].head), stack_values(head0)));
    CHECK(bitwise_equal(stack_values(out.clients[0].tail), stack_values(tail0)));
}

TEST_CASE("clients left out of a round keep their weights") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(120, 141);
    RoundConfig cfg;
    cfg.rounds = 3;
    cfg.clients = 4;
    cfg.sample_ratio = 0.5;
    cfg.local_steps = 1;
    cfg.batch = 8;
    cfg.fedround = 100;  // aggregate only at round 0
    cfg.client_lr = 1e-2;
    cfg.server_lr = 0.1;
    cfg.seed = 17;

    std::vector<std::vector<Tensor>> head_history;  // [round][client]
    fsl::RoundObserver obs;
    obs.after_round = [&](std::size_t, const fsl::ServerState&,
                          const std::vector<ClientState>& clients) {
        std::vector<Tensor> snap;
        for (const ClientState& c : clients) snap.push_back(stack_values(c.head));
        head_history.push_back(std::move(snap));
    };

    Rng enc_rng(142);
    const fsl::TrainOutput out = fsl::run_training(cfg, dims, data, even_shards(120, 4, 5),
                                                   fsl::make_encoder(dims, enc_rng), &obs);
    (void)out;
    REQUIRE(head_history.size() == 3);

    for (std::size_t t = 1; t < 3; ++t) {
        const std::vector<int> sampled = fsl::sample_clients(4, 0.5, t, cfg.seed);
        for (int id = 0; id < 4; ++id) {
            const bool participated =
                std::find(sampled.begin(), sampled.end(), id) != sampled.end();
            const bool same = bitwise_equal(head_history[t][static_cast<std::size_t>(id)],
                                            head_history[t - 1][static_cast<std::size_t>(id)]);
            if (participated) {
                CHECK_FALSE(same);
            } else {
                CHECK(same);
            }
        }
    }
}

TEST_CASE("server lr decays on its configured schedule") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(60, 151);
    RoundConfig cfg;
    cfg.rounds = 5;
    cfg.clients = 2;
    cfg.sample_ratio = 1.0;
    cfg.local_steps = 1;
    cfg.batch = 8;
    cfg.fedround = 1;
    cfg.client_lr = 1e-3;
    cfg.server_lr = 0.8;
    cfg.server_lr_decay = 0.5;
    cfg.server_lr_decay_every = 2;
    cfg.seed = 3;

    std::vector<double> lr_after;
    fsl::RoundObserver obs;
    obs.after_round = [&](std::size_t, const fsl::ServerState& server,
                          const std::vector<ClientState>&) { lr_after.push_back(server.lr); };

    Rng enc_rng(152);
    (void)fsl::run_training(cfg, dims, data, even_shards(60, 2, 5),
                            fsl::make_encoder(dims, enc_rng), &obs);
    const std::vector<double> want{0.8, 0.4, 0.4, 0.2, 0.2};
    CHECK(lr_after == want);
}

TEST_CASE("wire bytes follow the analytic schedule for both options") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(120, 161);
    const std::size_t head_p = 4 * 4 + 4;             // 20
    const std::size_t tail_p = 8 * 6 + 6 + 6 * 3 + 3; // 75
    const std::size_t in = dims.input();              // 8

    RoundConfig cfg;
    cfg.rounds = 4;
    cfg.clients = 4;
    cfg.sample_ratio = 0.5;  // m = 2
    cfg.local_steps = 2;
    cfg.batch = 10;
    cfg.fedround = 2;  // aggregate at rounds 0 and 2
    cfg.client_lr = 1e-3;
    cfg.server_lr = 1e-2;
    cfg.seed = 19;

    for (Option option : {Option::pit, Option::ptzo}) {
        cfg.option = option;
        cfg.zo.num_directions = 1;
        Rng enc_rng(162);
        const fsl::TrainOutput out = fsl::run_training(cfg, dims, data, even_shards(120, 4, 5),
                                                       fsl::make_encoder(dims, enc_rng));
        REQUIRE(out.metrics.size() == 4);

        const std::uint64_t m = 2, K = 2, B = 10;
        const std::uint64_t feature = B * in * sizeof(double);
        const std::uint64_t weights = (head_p + tail_p) * sizeof(double);
        for (std::size_t t = 0; t < 4; ++t) {
            std::uint64_t up = m * K * feature;            // h going up each step
            std::uint64_t down = m * K * 2 * feature;      // b and dL/dh coming back
            if (option == Option::ptzo) {
                up += m * 2 * sizeof(double);              // two scalar losses
                down += m * 2 * feature;                   // two perturbed features
            }
            if (t % cfg.fedround == 0) {
                up += m * weights;
                down += cfg.clients * weights;
            }
            CHECK(out.metrics[t].bytes_up == up);
            CHECK(out.metrics[t].bytes_down == down);
        }

        const bool has_zo = out.transcript.bytes_matching(fsl::MsgKind::zo_loss_up) > 0;
        CHECK(has_zo == (option == Option::ptzo));
    }
}

TEST_CASE("whole-model averaging with identical twins equals centralized training") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(48, 171);

    // Two clients over the same full shard, full batches: their trajectories
    // coincide, the round average is exact, and optimizer state persists, so
    // the global model must replay centralized training step for step.
    std::vector<ClientShard> shards(2);
    for (int i = 0; i < 2; ++i) {
        shards[i].client_id = i;
        for (std::size_t j = 0; j < 24; ++j) shards[i].train.push_back(j);
        for (std::size_t j = 24; j < 30; ++j) shards[i].test.push_back(j);
    }

    RoundConfig cfg;
    cfg.rounds = 3;
    cfg.clients = 2;
    cfg.sample_ratio = 1.0;
    cfg.local_steps = 2;
    cfg.batch = 24;
    cfg.fedround = 1;
    cfg.client_lr = 1e-3;
    cfg.seed = 23;

    Rng enc_rng(172);
    Stack encoder = fsl::make_encoder(dims, enc_rng);
    const fsl::FedAvgOutput out =
        fsl::fedavg_baseline(cfg, dims, data, shards, encoder.clone());

    // Centralized replay from the same seeded global model.
    Rng init(fsl::derive_seed(cfg.seed, fsl::Stream::fedavg_init));
    Stack head0 = fsl::make_head(dims, init);
    Stack tail0 = fsl::make_tail(dims, init);
    SplitModel central(dims, std::move(head0), encoder.clone(), std::move(tail0));
    fsl::OptimConfig oc;
    oc.kind = cfg.client_optimizer;
    oc.lr = cfg.client_lr;
    oc.momentum = cfg.client_momentum;
    fsl::Optimizer opt(oc);
    const Tensor X = fsl::gather_rows(data, shards[0].train);
    const std::vector<int> y = fsl::gather_labels(data, shards[0].train);
    std::vector<fsl::Parameter*> params = central.all_params();
    for (std::size_t step = 0; step < cfg.rounds * cfg.local_steps; ++step) {
        central.zero_grads();
        central.backprop(X, y);
        opt.step(params);
    }

    CHECK(bitwise_equal(fsl::flatten_values(std::as_const(out.model).all_params()),
                        fsl::flatten_values(std::as_const(central).all_params())));

    // Wire accounting: m model uploads, M broadcasts, every round.
    const std::uint64_t model_bytes =
        fsl::param_dim(std::as_const(central).all_params()) * sizeof(double);
    for (const fsl::MetricsRecord& rec : out.metrics) {
        CHECK(rec.bytes_up == 2 * model_bytes);
        CHECK(rec.bytes_down == 2 * model_bytes);
    }
}

TEST_CASE("single-client whole-model averaging is plain local training") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(48, 181);
    std::vector<ClientShard> shards(1);
    shards[0].client_id = 0;
    for (std::size_t j = 0; j < 30; ++j) shards[0].train.push_back(j);

    RoundConfig cfg;
    cfg.rounds = 4;
    cfg.clients = 1;
    cfg.sample_ratio = 1.0;
    cfg.local_steps = 3;
    cfg.batch = 30;
    cfg.fedround = 1;
    cfg.client_lr = 2e-3;
    cfg.seed = 29;

    Rng enc_rng(182);
    Stack encoder = fsl::make_encoder(dims, enc_rng);
    const fsl::FedAvgOutput out =
        fsl::fedavg_baseline(cfg, dims, data, shards, encoder.clone());

    Rng init(fsl::derive_seed(cfg.seed, fsl::Stream::fedavg_init));
    Stack head0 = fsl::make_head(dims, init);
    Stack tail0 = fsl::make_tail(dims, init);
    SplitModel central(dims, std::move(head0), encoder.clone(), std::move(tail0));
    fsl::OptimConfig oc;
    oc.lr = cfg.client_lr;
    fsl::Optimizer opt(oc);
    const Tensor X = fsl::gather_rows(data, shards[0].train);
    const std::vector<int> y = fsl::gather_labels(data, shards[0].train);
    std::vector<fsl::Parameter*> params = central.all_params();
    for (std::size_t step = 0; step < cfg.rounds * cfg.local_steps; ++step) {
        central.zero_grads();
        central.backprop(X, y);
        opt.step(params);
    }
    CHECK(bitwise_equal(fsl::flatten_values(std::as_const(out.model).all_params()),
                        fsl::flatten_values(std::as_const(central).all_params())));
}

TEST_CASE("training produces one metrics row per round with a probe cadence") {
    const ModelDims dims = tiny_dims();
    const Dataset data = tiny_data(120, 191);
    RoundConfig cfg = base_config();
    cfg.rounds = 5;
    cfg.probe_every = 2;

    Rng enc_rng(192);
    const fsl::TrainOutput out = fsl::run_training(cfg, dims, data, even_shards(120, 4, 5),
                                                   fsl::make_encoder(dims, enc_rng));
    REQUIRE(out.metrics.size() == 5);
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(out.metrics[t].round == t);
        CHECK(out.metrics[t].has_probe == (t % 2 == 0));
        if (out.metrics[t].has_probe) {
            CHECK(out.metrics[t].sigma_g_mean >= 0.0);
            CHECK(out.metrics[t].sigma_g_max >= out.metrics[t].sigma_g_mean);
        }
        CHECK(std::isfinite(out.metrics[t].mean_train_loss));
        CHECK(out.metrics[t].mean_test_acc >= 0.0);
        CHECK(out.metrics[t].mean_test_acc <= 1.0);
    }
}
