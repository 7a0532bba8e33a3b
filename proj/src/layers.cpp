#include "fsl/layers.hpp"

#include <cmath>
#include <cstdint>

#include "fsl/error.hpp"
#include "fsl/kernels.hpp"
#include "fsl/parallel.hpp"
#include "fsl/rng.hpp"

namespace fsl {

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) {
    if (in == 0 || out == 0) throw ConfigError("linear layer: dimensions must be positive");
    LayerSpec s;
    s.kind = Kind::linear;
    s.in = in;
    s.out = out;
    return s;
}

LayerSpec LayerSpec::relu_act() {
    LayerSpec s;
    s.kind = Kind::relu;
    return s;
}

LayerSpec LayerSpec::encoder(std::size_t tokens, std::size_t width, std::size_t attn_width,
                             std::size_t mlp_width) {
    if (tokens == 0 || width == 0 || attn_width == 0 || mlp_width == 0) {
        throw ConfigError("encoder block: dimensions must be positive");
    }
    LayerSpec s;
    s.kind = Kind::encoder_block;
    s.tokens = tokens;
    s.width = width;
    s.attn_width = attn_width;
    s.mlp_width = mlp_width;
    s.in = tokens * width;
    s.out = tokens * width;
    return s;
}

std::string LayerSpec::describe() const {
    switch (kind) {
        case Kind::linear:
            return "linear(" + std::to_string(in) + "->" + std::to_string(out) + ")";
        case Kind::relu:
            return "relu";
        case Kind::encoder_block:
            return "encoder_block(tokens=" + std::to_string(tokens) + ", width=" +
                   std::to_string(width) + ", attn=" + std::to_string(attn_width) + ", mlp=" +
                   std::to_string(mlp_width) + ")";
    }
    return "?";
}

void Layer::check_cache(const Cache& cache, const Tensor& upstream) const {
    if (!cache.valid() || cache.owner != this) {
        throw ProtocolError("backward on " + spec_.describe() +
                            ": cache missing or produced by a different layer");
    }
    if (upstream.shape() != cache.output_shape) {
        throw ProtocolError("backward on " + spec_.describe() + ": upstream gradient shape " +
                            upstream.shape_str() + " does not match forward output");
    }
}

namespace {

// Rows-by-columns view of an arbitrary-rank input: trailing dim is the
// feature axis, everything before it is batch.
std::pair<std::size_t, std::size_t> as_matrix(const Tensor& t) {
    if (t.ndim() == 0 || t.size() == 0) throw InputError("layer input is empty");
    std::size_t cols = t.dim(t.ndim() - 1);
    return {t.size() / cols, cols};
}

class LinearLayer final : public Layer {
public:
    LinearLayer(LayerSpec spec, Rng& rng) : Layer(spec) {
        weight_ = Parameter("W", Tensor::randn({spec.in, spec.out}, rng,
                                               1.0 / std::sqrt(static_cast<double>(spec.in))));
        bias_ = Parameter("b", Tensor::zeros({spec.out}));
    }
    LinearLayer(LayerSpec spec, Parameter w, Parameter b)
        : Layer(spec), weight_(std::move(w)), bias_(std::move(b)) {}

    Tensor forward(const Tensor& input, Cache& cache) const override {
        auto [rows, cols] = as_matrix(input);
        if (cols != spec_.in) {
            throw ConfigError("forward on " + spec_.describe() + ": input " + input.shape_str() +
                              " has feature width " + std::to_string(cols));
        }
        std::vector<std::size_t> out_shape = input.shape();
        out_shape.back() = spec_.out;
        Tensor out(out_shape);
        kernels::matmul(input.data(), weight_.value.data(), out.data(), rows, spec_.in, spec_.out);
        kernels::add_bias(out.data(), bias_.value.data(), rows, spec_.out);
        cache.owner = this;
        cache.input_shape = input.shape();
        cache.output_shape = out.shape();
        cache.saved = {input};
        return out;
    }

    Tensor backward(const Cache& cache, const Tensor& upstream) override {
        check_cache(cache, upstream);
        const Tensor& input = cache.saved[0];
        auto [rows, cols] = as_matrix(input);
        Tensor input_grad(cache.input_shape);
        kernels::matmul_nt(upstream.data(), weight_.value.data(), input_grad.data(), rows,
                           spec_.out, spec_.in);
        kernels::matmul_tn_acc(input.data(), upstream.data(), weight_.grad.data(), rows, spec_.in,
                               spec_.out);
        kernels::colsum_acc(upstream.data(), bias_.grad.data(), rows, spec_.out);
        return input_grad;
    }

    std::vector<Parameter*> params() override { return {&weight_, &bias_}; }

    std::unique_ptr<Layer> clone() const override {
        return std::make_unique<LinearLayer>(spec_, weight_, bias_);
    }

private:
    Parameter weight_;
    Parameter bias_;
};

class ReluLayer final : public Layer {
public:
    explicit ReluLayer(LayerSpec spec) : Layer(spec) {}

    Tensor forward(const Tensor& input, Cache& cache) const override {
        Tensor out(input.shape());
        kernels::relu(input.data(), out.data(), input.size());
        cache.owner = this;
        cache.input_shape = input.shape();
        cache.output_shape = out.shape();
        cache.saved = {input};
        return out;
    }

    Tensor backward(const Cache& cache, const Tensor& upstream) override {
        check_cache(cache, upstream);
        const Tensor& input = cache.saved[0];
        Tensor input_grad(cache.input_shape);
        // Subgradient 0 at 0.
        kernels::relu_backward(input.data(), upstream.data(), input_grad.data(), input.size());
        return input_grad;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<ReluLayer>(spec_); }
};

// dS = P ⊙ (dP - rowdot(dP, P)) per attention row.
void softmax_backward_row(const double* p, const double* dp, double* ds, std::size_t n) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += dp[j] * p[j];
    for (std::size_t j = 0; j < n; ++j) ds[j] = p[j] * (dp[j] - dot);
}

// Single-head self-attention over the sample's tokens plus a two-layer MLP,
// both with residual connections and no normalization. Input and output are
// [B x tokens*width]; attention mixes only within a sample.
class EncoderBlockLayer final : public Layer {
public:
    EncoderBlockLayer(LayerSpec spec, Rng& rng) : Layer(spec) {
        const double d_scale = 1.0 / std::sqrt(static_cast<double>(spec.width));
        const double a_scale = 1.0 / std::sqrt(static_cast<double>(spec.attn_width));
        const double f_scale = 1.0 / std::sqrt(static_cast<double>(spec.mlp_width));
        wq_ = Parameter("Wq", Tensor::randn({spec.width, spec.attn_width}, rng, d_scale));
        wk_ = Parameter("Wk", Tensor::randn({spec.width, spec.attn_width}, rng, d_scale));
        wv_ = Parameter("Wv", Tensor::randn({spec.width, spec.attn_width}, rng, d_scale));
        wo_ = Parameter("Wo", Tensor::randn({spec.attn_width, spec.width}, rng, a_scale));
        w1_ = Parameter("W1", Tensor::randn({spec.width, spec.mlp_width}, rng, d_scale));
        b1_ = Parameter("b1", Tensor::zeros({spec.mlp_width}));
        w2_ = Parameter("W2", Tensor::randn({spec.mlp_width, spec.width}, rng, f_scale));
        b2_ = Parameter("b2", Tensor::zeros({spec.width}));
    }

    EncoderBlockLayer(LayerSpec spec, std::vector<Parameter> ps) : Layer(spec) {
        wq_ = std::move(ps[0]);
        wk_ = std::move(ps[1]);
        wv_ = std::move(ps[2]);
        wo_ = std::move(ps[3]);
        w1_ = std::move(ps[4]);
        b1_ = std::move(ps[5]);
        w2_ = std::move(ps[6]);
        b2_ = std::move(ps[7]);
    }

    Tensor forward(const Tensor& input, Cache& cache) const override {
        const std::size_t T = spec_.tokens, D = spec_.width, A = spec_.attn_width,
                          F = spec_.mlp_width;
        auto [batch, cols] = as_matrix(input);
        if (cols != T * D) {
            throw ConfigError("forward on " + spec_.describe() + ": input " + input.shape_str() +
                              " does not fold into " + std::to_string(T) + " tokens of width " +
                              std::to_string(D));
        }
        const std::size_t bt = batch * T;

        Tensor q({bt, A}), k({bt, A}), v({bt, A});
        kernels::matmul(input.data(), wq_.value.data(), q.data(), bt, D, A);
        kernels::matmul(input.data(), wk_.value.data(), k.data(), bt, D, A);
        kernels::matmul(input.data(), wv_.value.data(), v.data(), bt, D, A);

        Tensor probs({batch, T * T});
        Tensor ctx({bt, A});
        const double scale = 1.0 / std::sqrt(static_cast<double>(A));
        const bool par = parallel::active() && batch >= 2;
        const std::int64_t bb = static_cast<std::int64_t>(batch);
#pragma omp parallel for schedule(static) if (par)
        for (std::int64_t s = 0; s < bb; ++s) {
            const double* qs = q.data() + s * T * A;
            const double* ks = k.data() + s * T * A;
            const double* vs = v.data() + s * T * A;
            double* ps = probs.data() + s * T * T;
            kernels::ref::matmul_nt(qs, ks, ps, T, A, T);
            for (std::size_t e = 0; e < T * T; ++e) ps[e] *= scale;
            kernels::ref::softmax_rows(ps, T, T);
            kernels::ref::matmul(ps, vs, ctx.data() + s * T * A, T, T, A);
        }

        Tensor attn_out({bt, D});
        kernels::matmul(ctx.data(), wo_.value.data(), attn_out.data(), bt, A, D);
        Tensor u({bt, D});
        for (std::size_t e = 0; e < bt * D; ++e) u[e] = input[e] + attn_out[e];

        Tensor h1({bt, F});
        kernels::matmul(u.data(), w1_.value.data(), h1.data(), bt, D, F);
        kernels::add_bias(h1.data(), b1_.value.data(), bt, F);
        Tensor r({bt, F});
        kernels::relu(h1.data(), r.data(), bt * F);
        Tensor m({bt, D});
        kernels::matmul(r.data(), w2_.value.data(), m.data(), bt, F, D);
        kernels::add_bias(m.data(), b2_.value.data(), bt, D);

        Tensor out(input.shape());
        for (std::size_t e = 0; e < bt * D; ++e) out[e] = u[e] + m[e];

        cache.owner = this;
        cache.input_shape = input.shape();
        cache.output_shape = out.shape();
        cache.saved = {input,        std::move(q), std::move(k), std::move(v),
                       std::move(probs), std::move(ctx), std::move(u), std::move(h1),
                       std::move(r)};
        return out;
    }

    Tensor backward(const Cache& cache, const Tensor& upstream) override {
        check_cache(cache, upstream);
        const std::size_t T = spec_.tokens, D = spec_.width, A = spec_.attn_width,
                          F = spec_.mlp_width;
        const Tensor& input = cache.saved[0];
        const Tensor& q = cache.saved[1];
        const Tensor& k = cache.saved[2];
        const Tensor& v = cache.saved[3];
        const Tensor& probs = cache.saved[4];
        const Tensor& ctx = cache.saved[5];
        const Tensor& u = cache.saved[6];
        const Tensor& h1 = cache.saved[7];
        const Tensor& r = cache.saved[8];
        auto [batch, cols] = as_matrix(input);
        const std::size_t bt = batch * T;

        // MLP branch: out = u + mlp(u).
        Tensor dr({bt, F});
        kernels::matmul_nt(upstream.data(), w2_.value.data(), dr.data(), bt, D, F);
        kernels::matmul_tn_acc(r.data(), upstream.data(), w2_.grad.data(), bt, F, D);
        kernels::colsum_acc(upstream.data(), b2_.grad.data(), bt, D);

        Tensor dh1({bt, F});
        kernels::relu_backward(h1.data(), dr.data(), dh1.data(), bt * F);

        Tensor du({bt, D});
        kernels::matmul_nt(dh1.data(), w1_.value.data(), du.data(), bt, F, D);
        for (std::size_t e = 0; e < bt * D; ++e) du[e] += upstream[e];
        kernels::matmul_tn_acc(u.data(), dh1.data(), w1_.grad.data(), bt, D, F);
        kernels::colsum_acc(dh1.data(), b1_.grad.data(), bt, F);

        // Attention branch: u = input + ctx * Wo.
        Tensor dctx({bt, A});
        kernels::matmul_nt(du.data(), wo_.value.data(), dctx.data(), bt, D, A);
        kernels::matmul_tn_acc(ctx.data(), du.data(), wo_.grad.data(), bt, A, D);

        Tensor dq({bt, A}), dk({bt, A}), dv({bt, A});
        const double scale = 1.0 / std::sqrt(static_cast<double>(A));
        const bool par = parallel::active() && batch >= 2;
        const std::int64_t bb = static_cast<std::int64_t>(batch);
#pragma omp parallel for schedule(static) if (par)
        for (std::int64_t s = 0; s < bb; ++s) {
            const double* qs = q.data() + s * T * A;
            const double* ks = k.data() + s * T * A;
            const double* vs = v.data() + s * T * A;
            const double* ps = probs.data() + s * T * T;
            const double* dctxs = dctx.data() + s * T * A;
            double dp[64], ds[64];  // T*T fits; tokens beyond 8 use heap
            std::vector<double> heap;
            double *dpp = dp, *dsp = ds;
            if (T * T > 64) {
                heap.resize(2 * T * T);
                dpp = heap.data();
                dsp = heap.data() + T * T;
            }
            kernels::ref::matmul_nt(dctxs, vs, dpp, T, A, T);
            for (std::size_t row = 0; row < T; ++row) {
                softmax_backward_row(ps + row * T, dpp + row * T, dsp + row * T, T);
            }
            double* dqs = dq.data() + s * T * A;
            kernels::ref::matmul(dsp, ks, dqs, T, T, A);
            for (std::size_t e = 0; e < T * A; ++e) dqs[e] *= scale;
            // dK = dS^T * Q, via per-element accumulation in row order.
            double* dks = dk.data() + s * T * A;
            for (std::size_t e = 0; e < T * A; ++e) dks[e] = 0.0;
            kernels::ref::matmul_tn_acc(dsp, qs, dks, T, T, A);
            for (std::size_t e = 0; e < T * A; ++e) dks[e] *= scale;
            double* dvs = dv.data() + s * T * A;
            for (std::size_t e = 0; e < T * A; ++e) dvs[e] = 0.0;
            kernels::ref::matmul_tn_acc(ps, dctxs, dvs, T, T, A);
        }

        Tensor input_grad(cache.input_shape);
        kernels::matmul_nt(dq.data(), wq_.value.data(), input_grad.data(), bt, A, D);
        Tensor tmp({bt, D});
        kernels::matmul_nt(dk.data(), wk_.value.data(), tmp.data(), bt, A, D);
        for (std::size_t e = 0; e < bt * D; ++e) input_grad[e] += tmp[e];
        kernels::matmul_nt(dv.data(), wv_.value.data(), tmp.data(), bt, A, D);
        for (std::size_t e = 0; e < bt * D; ++e) input_grad[e] += du[e] + tmp[e];

        kernels::matmul_tn_acc(input.data(), dq.data(), wq_.grad.data(), bt, D, A);
        kernels::matmul_tn_acc(input.data(), dk.data(), wk_.grad.data(), bt, D, A);
        kernels::matmul_tn_acc(input.data(), dv.data(), wv_.grad.data(), bt, D, A);
        return input_grad;
    }

    std::vector<Parameter*> params() override {
        return {&wq_, &wk_, &wv_, &wo_, &w1_, &b1_, &w2_, &b2_};
    }

    std::unique_ptr<Layer> clone() const override {
        std::vector<Parameter> ps = {wq_, wk_, wv_, wo_, w1_, b1_, w2_, b2_};
        return std::unique_ptr<Layer>(new EncoderBlockLayer(spec_, std::move(ps)));
    }

private:
    Parameter wq_, wk_, wv_, wo_;
    Parameter w1_, b1_, w2_, b2_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& rng) {
    switch (spec.kind) {
        case LayerSpec::Kind::linear:
            return std::make_unique<LinearLayer>(spec, rng);
        case LayerSpec::Kind::relu:
            return std::make_unique<ReluLayer>(spec);
        case LayerSpec::Kind::encoder_block:
            return std::make_unique<EncoderBlockLayer>(spec, rng);
    }
    throw ConfigError("unknown layer kind");
}

Tensor Stack::forward(const Tensor& input, StackCache& cache) const {
    cache.layers.assign(layers_.size(), Cache{});
    Tensor x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        x = layers_[i]->forward(x, cache.layers[i]);
    }
    return x;
}

Tensor Stack::backward(const StackCache& cache, const Tensor& upstream) {
    if (cache.layers.size() != layers_.size()) {
        throw ProtocolError("stack backward: cache does not match stack depth");
    }
    Tensor g = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        g = layers_[i]->backward(cache.layers[i], g);
    }
    return g;
}

std::vector<Parameter*> Stack::params() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
        for (Parameter* p : l->params()) out.push_back(p);
    }
    return out;
}

std::vector<const Parameter*> Stack::params() const {
    std::vector<const Parameter*> out;
    for (auto& l : layers_) {
        for (Parameter* p : const_cast<Layer&>(*l).params()) out.push_back(p);
    }
    return out;
}

std::size_t Stack::param_count() const {
    std::size_t n = 0;
    for (const Parameter* p : params()) n += p->value.size();
    return n;
}

void Stack::zero_grads() {
    for (Parameter* p : params()) p->zero_grad();
}

Stack Stack::clone() const {
    Stack s;
    for (const auto& l : layers_) s.add(l->clone());
    return s;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    auto [rows, classes] = as_matrix(logits);
    if (classes < 2) throw InputError("softmax_cross_entropy: need at least 2 classes");
    if (labels.size() != rows) {
        throw InputError("softmax_cross_entropy: " + std::to_string(rows) + " logit rows vs " +
                         std::to_string(labels.size()) + " labels");
    }
    LossResult res;
    res.logit_grad = Tensor(logits.shape());
    const double inv_rows = 1.0 / static_cast<double>(rows);
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw InputError("softmax_cross_entropy: label " + std::to_string(label) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
        const double* row = logits.data() + i * classes;
        double* grow = res.logit_grad.data() + i * classes;
        double mx = row[0];
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < classes; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        total += lse - row[label];
        for (std::size_t j = 0; j < classes; ++j) {
            double soft = std::exp(row[j] - lse);
            grow[j] = (soft - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) * inv_rows;
        }
    }
    res.loss = total * inv_rows;
    return res;
}

LossResult softmax_cross_entropy(const Tensor& logits, int label) {
    return softmax_cross_entropy(logits, std::span<const int>(&label, 1));
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& loss_fn,
                              const Tensor& w, double step) {
    if (!(step > 0.0)) throw InputError("finite_difference_grad: step must be > 0");
    Tensor grad(w.shape());
    Tensor probe = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double up = loss_fn(probe);
        probe[i] = orig - step;
        const double down = loss_fn(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

}  // namespace fsl
