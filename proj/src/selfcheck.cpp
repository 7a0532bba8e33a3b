#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "fsl/data.hpp"
#include "fsl/experiment.hpp"
#include "fsl/federation.hpp"
#include "fsl/kernels.hpp"
#include "fsl/layers.hpp"
#include "fsl/model.hpp"
#include "fsl/parallel.hpp"
#include "fsl/rng.hpp"
#include "fsl/zo.hpp"

// Oracle smoke suite behind the `check` verb: the handful of invariants that
// make the rest of the simulator trustworthy, each verified against an
// independent computation (finite differences, closed forms, bit comparison).

namespace fsl {
namespace {

struct Reporter {
    bool quiet = false;
    int failures = 0;

    void check(const char* name, bool ok, const std::string& why = "") {
        if (ok) {
            if (!quiet) std::printf("ok %s\n", name);
        } else {
            ++failures;
            std::printf("FAIL %s%s%s\n", name, why.empty() ? "" : ": ", why.c_str());
        }
    }
};

double rel_gap(const Tensor& got, const Tensor& want) {
    if (!got.same_shape(want)) return 1.0;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double d = got[i] - want[i];
        num += d * d;
        den += want[i] * want[i];
    }
    return std::sqrt(num) / std::max(1e-12, std::sqrt(den));
}

// Worst relative gap between analytic and central-difference gradients of
// L(x) = 0.5 * ||layer(x)||^2, over the input and every parameter tensor.
double layer_gradient_gap(const LayerSpec& spec, const Tensor& input, std::uint64_t seed) {
    Rng rng(seed);
    auto layer = make_layer(spec, rng);

    Cache cache;
    const Tensor out = layer->forward(input, cache);
    for (Parameter* p : layer->params()) p->zero_grad();
    const Tensor din = layer->backward(cache, out);  // d(0.5||y||^2)/dy = y

    double worst = 0.0;
    auto loss_at_input = [&](const Tensor& x) {
        Cache c;
        return 0.5 * layer->forward(x, c).squared_norm();
    };
    worst = std::max(worst, rel_gap(din, finite_difference_grad(loss_at_input, input, 1e-5)));

    for (Parameter* p : layer->params()) {
        auto loss_at_param = [&](const Tensor& w) {
            const Tensor saved = p->value;
            p->value = w;
            Cache c;
            const double loss = 0.5 * layer->forward(input, c).squared_norm();
            p->value = saved;
            return loss;
        };
        worst = std::max(worst,
                         rel_gap(p->grad, finite_difference_grad(loss_at_param, p->value, 1e-5)));
    }
    return worst;
}

ModelDims tiny_dims() {
    ModelDims dims;
    dims.tokens = 2;
    dims.token_width = 4;
    dims.attn_width = 8;
    dims.mlp_width = 8;
    dims.tail_hidden = 6;
    dims.classes = 3;
    dims.encoder_blocks = 1;
    return dims;
}

bool covers_exactly_once(const Dataset& data, const std::vector<ClientShard>& shards) {
    std::vector<int> seen(data.size(), 0);
    for (const ClientShard& s : shards) {
        for (std::size_t i : s.train) ++seen[i];
        for (std::size_t i : s.test) ++seen[i];
    }
    return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
}

}  // namespace

int self_check(bool quiet) {
    Reporter rep{quiet};

    // Layer backward passes against finite differences.
    {
        Rng in_rng(11);
        const double lin = layer_gradient_gap(LayerSpec::linear(5, 4),
                                              Tensor::randn({3, 5}, in_rng), 21);
        rep.check("linear-gradient", lin < 1e-6, "relative gap " + format_double(lin));

        const double rel = layer_gradient_gap(LayerSpec::relu_act(),
                                              Tensor::randn({3, 7}, in_rng), 22);
        rep.check("relu-gradient", rel < 1e-6, "relative gap " + format_double(rel));

        const double enc = layer_gradient_gap(LayerSpec::encoder(3, 4, 4, 6),
                                              Tensor::randn({2, 12}, in_rng), 23);
        rep.check("encoder-gradient", enc < 1e-6, "relative gap " + format_double(enc));
    }

    // Head -> encoder -> tail chain gradient against finite differences on
    // the flattened parameter vector.
    {
        const ModelDims dims = tiny_dims();
        Rng ht(31), en(32), xr(33);
        SplitModel model = SplitModel::build(dims, ht, en);
        const Tensor X = Tensor::randn({4, dims.input()}, xr);
        const std::vector<int> y = {0, 2, 1, 0};

        model.zero_grads();
        model.backprop(X, y);
        const Tensor grad = flatten_grads(std::as_const(model).all_params());

        SplitModel work = model.clone();
        auto loss_at = [&](const Tensor& w) {
            load_values(w, work.all_params());
            SplitCaches caches;
            return work.forward_loss(X, y, caches);
        };
        const Tensor w0 = flatten_values(std::as_const(model).all_params());
        const double gap = rel_gap(grad, finite_difference_grad(loss_at, w0, 1e-5));
        rep.check("chain-gradient", gap < 1e-6, "relative gap " + format_double(gap));
    }

    // Two-point estimate on a quadratic recovers (z . w) z exactly.
    {
        Rng wr(41);
        const Tensor w = Tensor::randn({16}, wr);
        ZOConfig zcfg;
        auto loss = [](const Tensor& x) { return 0.5 * x.squared_norm(); };
        Rng zr(42);
        const Tensor g = zo_estimate(loss, w, zcfg, zr);
        Rng zr2(42);
        Tensor want = sample_direction(16, zr2);
        want.scale(want.dot(w));
        const double gap = rel_gap(g, want);
        rep.check("zo-quadratic", gap < 1e-9, "relative gap " + format_double(gap));
    }

    // The message-level estimator puts the encoder weights back bit for bit.
    {
        const ModelDims dims = tiny_dims();
        Rng ht(51), en(52), xr(53);
        SplitModel model = SplitModel::build(dims, ht, en);
        const Tensor X = Tensor::randn({4, dims.input()}, xr);
        const std::vector<int> y = {1, 0, 2, 1};

        const Tensor before = flatten_values(std::as_const(model.encoder).params());
        const FeatureBundle fb = head_forward(model.head, dims, X, 0, 0, 0);
        ZOConfig zcfg;
        Rng zr(54);
        zo_messages(model.encoder, model.tail, dims, fb, y, zcfg, zr, 0, nullptr);
        const Tensor after = flatten_values(std::as_const(model.encoder).params());
        rep.check("zo-restore", before == after, "encoder weights changed");
    }

    // Every partition kind deals each sample to exactly one client.
    {
        const Dataset data = generate_synthetic(200, 4, 2.0, 61, 8);
        bool ok = true;
        std::string why;
        for (PartitionSpec::Kind kind : {PartitionSpec::Kind::iid, PartitionSpec::Kind::dirichlet,
                                         PartitionSpec::Kind::pathological}) {
            PartitionSpec spec;
            spec.kind = kind;
            spec.clients = 5;
            spec.alpha = 0.3;
            spec.labels_per_client = 2;
            spec.test_fraction = 0.2;
            spec.seed = 62;
            const PartitionOutcome out = partition(data, spec);
            if (!covers_exactly_once(data, out.shards)) {
                ok = false;
                why = "kind " + to_string(kind) + " lost or duplicated samples";
                break;
            }
        }
        rep.check("partition-cover", ok, why);
    }

    // OpenMP kernels agree with the serial reference bit for bit.
    {
        const int saved_threads = parallel::threads();
        parallel::set_threads(4);
        Rng kr(71);
        const std::size_t m = 37, k = 19, n = 23;
        const Tensor A = Tensor::randn({m, k}, kr);
        const Tensor B = Tensor::randn({k, n}, kr);
        const Tensor Bt = Tensor::randn({n, k}, kr);
        Tensor c1 = Tensor::zeros({m, n}), c2 = Tensor::zeros({m, n});
        kernels::ref::matmul(A.data(), B.data(), c1.data(), m, k, n);
        kernels::matmul(A.data(), B.data(), c2.data(), m, k, n);
        bool ok = c1 == c2;

        Tensor d1 = Tensor::zeros({m, n}), d2 = Tensor::zeros({m, n});
        kernels::ref::matmul_nt(A.data(), Bt.data(), d1.data(), m, k, n);
        kernels::matmul_nt(A.data(), Bt.data(), d2.data(), m, k, n);
        ok = ok && d1 == d2;

        Tensor e1 = Tensor::zeros({k, n}), e2 = Tensor::zeros({k, n});
        kernels::ref::matmul_tn_acc(A.data(), c1.data(), e1.data(), m, k, n);
        kernels::matmul_tn_acc(A.data(), c2.data(), e2.data(), m, k, n);
        ok = ok && e1 == e2;

        Tensor s1 = c1, s2 = c1;
        kernels::ref::softmax_rows(s1.data(), m, n);
        kernels::softmax_rows(s2.data(), m, n);
        ok = ok && s1 == s2;
        parallel::set_threads(saved_threads);
        rep.check("kernel-parallel-equality", ok, "serial and threaded kernels disagree");
    }

    // Softmax cross-entropy gradient rows sum to zero.
    {
        Rng lr(81);
        const Tensor logits = Tensor::randn({4, 5}, lr);
        const std::vector<int> labels = {0, 4, 2, 2};
        const LossResult res = softmax_cross_entropy(logits, labels);
        double worst = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 5; ++c) s += res.logit_grad.at(r, c);
            worst = std::max(worst, std::abs(s));
        }
        rep.check("softmax-grad-sum", worst < 1e-12, "row sum " + format_double(worst));
    }

    // The same seed replays an entire training run bit for bit.
    {
        const ModelDims dims = tiny_dims();
        const Dataset data = generate_synthetic(120, 3, 2.0, 91, dims.input());
        PartitionSpec pspec;
        pspec.kind = PartitionSpec::Kind::iid;
        pspec.clients = 4;
        pspec.seed = 92;
        const PartitionOutcome parts = partition(data, pspec);

        RoundConfig rc;
        rc.rounds = 3;
        rc.clients = 4;
        rc.sample_ratio = 0.5;
        rc.local_steps = 2;
        rc.batch = 8;
        rc.fedround = 2;
        rc.seed = 93;

        Rng er(94);
        const Stack enc = make_encoder(dims, er);
        const TrainOutput a = run_training(rc, dims, data, parts.shards, enc.clone());
        const TrainOutput b = run_training(rc, dims, data, parts.shards, enc.clone());

        bool ok = a.metrics.size() == b.metrics.size();
        for (std::size_t i = 0; ok && i < a.metrics.size(); ++i) {
            const MetricsRecord &x = a.metrics[i], &y = b.metrics[i];
            ok = std::memcmp(&x.mean_train_loss, &y.mean_train_loss, sizeof(double)) == 0 &&
                 std::memcmp(&x.mean_test_acc, &y.mean_test_acc, sizeof(double)) == 0 &&
                 x.bytes_up == y.bytes_up && x.bytes_down == y.bytes_down;
        }
        ok = ok && flatten_values(std::as_const(a.server.encoder).params()) ==
                       flatten_values(std::as_const(b.server.encoder).params());
        rep.check("training-determinism", ok, "replay diverged");
    }

    if (!quiet) {
        std::printf("%d check%s failed\n", rep.failures, rep.failures == 1 ? "" : "s");
    }
    return rep.failures;
}

}  // namespace fsl
