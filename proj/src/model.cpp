#include "fsl/model.hpp"

#include <string>

#include "fsl/error.hpp"
#include "fsl/optim.hpp"
#include "fsl/rng.hpp"

namespace fsl {

void ModelDims::validate() const {
    if (tokens == 0 || token_width == 0 || attn_width == 0 || mlp_width == 0 || tail_hidden == 0) {
        throw ConfigError("model dims: all widths must be positive");
    }
    if (classes < 2) throw ConfigError("model dims: need at least 2 classes");
    if (encoder_blocks == 0) throw ConfigError("model dims: need at least 1 encoder block");
}

Stack make_head(const ModelDims& dims, Rng& rng) {
    Stack s;
    s.add(make_layer(LayerSpec::linear(dims.token_width, dims.token_width), rng));
    s.add(make_layer(LayerSpec::relu_act(), rng));
    // Recentre the embedding at the identity, keeping a small random offset.
    // Heads stay randomly initialized per client, but every client presents
    // the encoder with (nearly) the same token layout, so an encoder
    // pre-trained behind one head remains useful behind all of them.
    Parameter* W = s.layer(0).params()[0];
    for (std::size_t i = 0; i < dims.token_width; ++i) {
        for (std::size_t j = 0; j < dims.token_width; ++j) {
            double& w = W->value.at(i, j);
            w = (i == j ? 1.0 : 0.0) + 0.1 * w;
        }
    }
    return s;
}

Stack make_encoder(const ModelDims& dims, Rng& rng) {
    Stack s;
    for (std::size_t i = 0; i < dims.encoder_blocks; ++i) {
        s.add(make_layer(
            LayerSpec::encoder(dims.tokens, dims.token_width, dims.attn_width, dims.mlp_width),
            rng));
    }
    return s;
}

Stack make_tail(const ModelDims& dims, Rng& rng) {
    Stack s;
    s.add(make_layer(LayerSpec::linear(dims.input(), dims.tail_hidden), rng));
    s.add(make_layer(LayerSpec::relu_act(), rng));
    s.add(make_layer(LayerSpec::linear(dims.tail_hidden, dims.classes), rng));
    return s;
}

namespace {

std::size_t batch_rows(const ModelDims& dims, const Tensor& x, const char* who) {
    if (x.empty()) throw InputError(std::string(who) +": empty batch");
    if (x.ndim() != 2 || x.dim(1) != dims.input()) {
        throw InputError(std::string(who) + ": batch shape " + x.shape_str() + ", want [B x " +
                         std::to_string(dims.input()) + "]");
    }
    return x.dim(0);
}

}  // namespace

FeatureBundle head_forward(const Stack& head, const ModelDims& dims, const Tensor& batch,
                           int client_id, int round, int step) {
    const std::size_t b = batch_rows(dims, batch, "head_forward");
    FeatureBundle fb;
    fb.client_id = client_id;
    fb.round = round;
    fb.step = step;
    Tensor per_token = head.forward(batch.reshaped({b * dims.tokens, dims.token_width}),
                                    fb.head_cache);
    fb.h = per_token.reshaped({b, dims.input()});
    return fb;
}

SmashedBundle encoder_forward(const Stack& encoder, const ModelDims& dims,
                              const FeatureBundle& fb) {
    if (fb.h.ndim() != 2 || fb.h.dim(1) != dims.input()) {
        throw ProtocolError("encoder_forward: client " + std::to_string(fb.client_id) +
                            " round " + std::to_string(fb.round) + ": feature shape " +
                            fb.h.shape_str() + " does not match encoder input width " +
                            std::to_string(dims.input()));
    }
    SmashedBundle sb;
    sb.client_id = fb.client_id;
    sb.b = encoder.forward(fb.h, sb.encoder_cache);
    return sb;
}

TailOutput tail_forward_loss(const Stack& tail, const ModelDims& dims, const SmashedBundle& sb,
                             std::span<const int> labels) {
    const std::size_t b = batch_rows(dims, sb.b, "tail_forward_loss");
    if (labels.size() != b) {
        throw InputError("tail_forward_loss: " + std::to_string(b) + " feature rows vs " +
                         std::to_string(labels.size()) + " labels");
    }
    TailOutput out;
    out.logits = tail.forward(sb.b, out.tail_cache);
    LossResult lr = softmax_cross_entropy(out.logits, labels);
    out.loss = lr.loss;
    out.logit_grad = std::move(lr.logit_grad);
    return out;
}

ChainGrads backward_chain(Stack& head, Stack& encoder, Stack& tail, const ModelDims& dims,
                          const FeatureBundle& fb, const SmashedBundle& sb,
                          const TailOutput& out) {
    ChainGrads g;
    g.smashed_grad = tail.backward(out.tail_cache, out.logit_grad);
    g.feature_grad = encoder.backward(sb.encoder_cache, g.smashed_grad);
    const std::size_t b = g.feature_grad.dim(0);
    head.backward(fb.head_cache,
                  g.feature_grad.reshaped({b * dims.tokens, dims.token_width}));
    return g;
}

SplitModel::SplitModel(ModelDims d, Stack h, Stack e, Stack t)
    : dims(d), head(std::move(h)), encoder(std::move(e)), tail(std::move(t)) {
    dims.validate();
    const std::size_t eh = encoder.param_count();
    if (eh <= head.param_count() || eh <= tail.param_count()) {
        throw ConfigError("split model: encoder must hold more parameters than head and tail (" +
                          std::to_string(eh) + " vs " + std::to_string(head.param_count()) +
                          " / " + std::to_string(tail.param_count()) + ")");
    }
}

SplitModel SplitModel::build(const ModelDims& dims, Rng& head_tail_rng, Rng& encoder_rng) {
    dims.validate();
    Stack h = make_head(dims, head_tail_rng);
    Stack t = make_tail(dims, head_tail_rng);
    Stack e = make_encoder(dims, encoder_rng);
    return SplitModel(dims, std::move(h), std::move(e), std::move(t));
}

double SplitModel::forward_loss(const Tensor& X, std::span<const int> y, SplitCaches& caches,
                                Tensor* logit_grad) const {
    const std::size_t b = batch_rows(dims, X, "forward_loss");
    Tensor per_token = head.forward(X.reshaped({b * dims.tokens, dims.token_width}), caches.head);
    Tensor h = per_token.reshaped({b, dims.input()});
    Tensor smashed = encoder.forward(h, caches.encoder);
    Tensor logits = tail.forward(smashed, caches.tail);
    LossResult lr = softmax_cross_entropy(logits, y);
    if (logit_grad) *logit_grad = std::move(lr.logit_grad);
    return lr.loss;
}

double SplitModel::backprop(const Tensor& X, std::span<const int> y) {
    SplitCaches caches;
    Tensor logit_grad;
    const double loss = forward_loss(X, y, caches, &logit_grad);
    Tensor db = tail.backward(caches.tail, logit_grad);
    Tensor dh = encoder.backward(caches.encoder, db);
    const std::size_t b = dh.dim(0);
    head.backward(caches.head, dh.reshaped({b * dims.tokens, dims.token_width}));
    return loss;
}

Tensor SplitModel::logits(const Tensor& X) const {
    const std::size_t b = batch_rows(dims, X, "logits");
    SplitCaches caches;
    Tensor per_token = head.forward(X.reshaped({b * dims.tokens, dims.token_width}), caches.head);
    Tensor h = per_token.reshaped({b, dims.input()});
    Tensor smashed = encoder.forward(h, caches.encoder);
    return tail.forward(smashed, caches.tail);
}

double SplitModel::accuracy(const Tensor& X, std::span<const int> y) const {
    const Tensor lg = logits(X);
    const std::size_t b = lg.dim(0), c = lg.dim(1);
    if (y.size() != b) throw InputError("accuracy: label count does not match batch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = lg.data() + i * c;
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (row[j] > row[best]) best = j;  // ties keep the lowest index
        }
        if (static_cast<std::size_t>(y[i]) == best) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(b);
}

std::vector<Parameter*> SplitModel::all_params() {
    std::vector<Parameter*> out = head.params();
    for (Parameter* p : encoder.params()) out.push_back(p);
    for (Parameter* p : tail.params()) out.push_back(p);
    return out;
}

std::vector<const Parameter*> SplitModel::all_params() const {
    std::vector<const Parameter*> out = head.params();
    for (const Parameter* p : encoder.params()) out.push_back(p);
    for (const Parameter* p : tail.params()) out.push_back(p);
    return out;
}

void SplitModel::zero_grads() {
    head.zero_grads();
    encoder.zero_grads();
    tail.zero_grads();
}

SplitModel SplitModel::clone() const {
    return SplitModel(dims, head.clone(), encoder.clone(), tail.clone());
}

Stack pretrain_encoder(const ModelDims& dims, Stack encoder, const Tensor& X,
                       std::span<const int> y, std::size_t epochs, double lr,
                       std::uint64_t scaffold_seed) {
    if (X.empty()) throw ConfigError("pretrain_encoder: public set is empty");
    if (epochs == 0) return encoder;
    Rng scaffold_rng(scaffold_seed);
    Stack h = make_head(dims, scaffold_rng);
    Stack t = make_tail(dims, scaffold_rng);
    SplitModel model(dims, std::move(h), std::move(encoder), std::move(t));
    OptimConfig oc;
    oc.kind = OptimKind::adam;
    oc.lr = lr;
    Optimizer opt(oc);
    std::vector<Parameter*> params = model.all_params();
    for (std::size_t e = 0; e < epochs; ++e) {
        model.zero_grads();
        model.backprop(X, y);
        opt.step(params);
    }
    return std::move(model.encoder);
}

std::size_t param_dim(const std::vector<const Parameter*>& ps) {
    std::size_t n = 0;
    for (const Parameter* p : ps) n += p->value.size();
    return n;
}

Tensor flatten_values(const std::vector<const Parameter*>& ps) {
    Tensor flat({param_dim(ps)});
    std::size_t off = 0;
    for (const Parameter* p : ps) {
        for (std::size_t i = 0; i < p->value.size(); ++i) flat[off + i] = p->value[i];
        off += p->value.size();
    }
    return flat;
}

Tensor flatten_grads(const std::vector<const Parameter*>& ps) {
    Tensor flat({param_dim(ps)});
    std::size_t off = 0;
    for (const Parameter* p : ps) {
        for (std::size_t i = 0; i < p->grad.size(); ++i) flat[off + i] = p->grad[i];
        off += p->grad.size();
    }
    return flat;
}

void load_values(const Tensor& flat, const std::vector<Parameter*>& ps) {
    std::size_t want = 0;
    for (const Parameter* p : ps) want += p->value.size();
    if (flat.size() != want) {
        throw InputError("load_values: flat vector has " + std::to_string(flat.size()) +
                         " entries, parameters need " + std::to_string(want));
    }
    std::size_t off = 0;
    for (Parameter* p : ps) {
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = flat[off + i];
        off += p->value.size();
    }
}

}  // namespace fsl
