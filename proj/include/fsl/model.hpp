#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fsl/layers.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

class Rng;

// Desk-scale split architecture. Inputs are flat vectors folded into
// tokens x token_width; the head embeds each token, the encoder mixes
// tokens with self-attention, the tail classifies the flattened result.
struct ModelDims {
    std::size_t tokens = 4;
    std::size_t token_width = 16;
    std::size_t attn_width = 32;
    std::size_t mlp_width = 32;
    std::size_t tail_hidden = 32;
    std::size_t classes = 4;
    std::size_t encoder_blocks = 1;

    std::size_t input() const { return tokens * token_width; }
    void validate() const;
};

// Head: per-token linear + relu, applied to the [B*tokens x token_width] view.
Stack make_head(const ModelDims& dims, Rng& rng);
// Encoder: encoder_blocks attention+mlp residual blocks over [B x input].
Stack make_encoder(const ModelDims& dims, Rng& rng);
// Tail: linear -> relu -> linear classifier over the flattened feature.
Stack make_tail(const ModelDims& dims, Rng& rng);

// Intermediate feature travelling client -> server, with the head cache the
// client needs to finish its backward later.
struct FeatureBundle {
    int client_id = -1;
    int round = -1;
    int step = -1;
    Tensor h;  // [B x input]
    StackCache head_cache;
};

// Smashed feature travelling server -> client, with the encoder cache the
// server needs for its vector-Jacobian product.
struct SmashedBundle {
    int client_id = -1;
    Tensor b;  // [B x input]
    StackCache encoder_cache;
};

struct TailOutput {
    double loss = 0.0;
    Tensor logits;
    Tensor logit_grad;
    StackCache tail_cache;
};

FeatureBundle head_forward(const Stack& head, const ModelDims& dims, const Tensor& batch,
                           int client_id, int round, int step);
SmashedBundle encoder_forward(const Stack& encoder, const ModelDims& dims,
                              const FeatureBundle& fb);
TailOutput tail_forward_loss(const Stack& tail, const ModelDims& dims, const SmashedBundle& sb,
                             std::span<const int> labels);

// Feature-level gradients from a full reverse pass. Parameter gradients
// accumulate inside the three stacks; the encoder's are read off only at the
// final local step of a round.
struct ChainGrads {
    Tensor smashed_grad;  // dL/db
    Tensor feature_grad;  // dL/dh
};

ChainGrads backward_chain(Stack& head, Stack& encoder, Stack& tail, const ModelDims& dims,
                          const FeatureBundle& fb, const SmashedBundle& sb,
                          const TailOutput& out);

struct SplitCaches {
    StackCache head, encoder, tail;
};

// The three parts assembled as one trainable network. Used wherever a
// centralized model is needed: encoder pre-training, gradient probes, the
// whole-model baseline, and evaluation.
class SplitModel {
public:
    ModelDims dims;
    Stack head;
    Stack encoder;
    Stack tail;

    SplitModel() = default;
    SplitModel(ModelDims d, Stack h, Stack e, Stack t);

    static SplitModel build(const ModelDims& dims, Rng& head_tail_rng, Rng& encoder_rng);

    double forward_loss(const Tensor& X, std::span<const int> y, SplitCaches& caches,
                        Tensor* logit_grad = nullptr) const;
    // forward + full backward; gradients accumulate in all three stacks.
    double backprop(const Tensor& X, std::span<const int> y);

    Tensor logits(const Tensor& X) const;
    double accuracy(const Tensor& X, std::span<const int> y) const;

    std::vector<Parameter*> all_params();
    std::vector<const Parameter*> all_params() const;
    void zero_grads();
    SplitModel clone() const;
};

// Centralized full-model training on a public set; returns the encoder and
// discards the scratch head/tail (seeded from scaffold_seed). epochs = 0
// hands the initial encoder straight back.
Stack pretrain_encoder(const ModelDims& dims, Stack encoder, const Tensor& X,
                       std::span<const int> y, std::size_t epochs, double lr,
                       std::uint64_t scaffold_seed);

// Flat-vector views over parameter lists, for the zeroth-order estimator and
// the heterogeneity probes.
std::size_t param_dim(const std::vector<const Parameter*>& ps);
Tensor flatten_values(const std::vector<const Parameter*>& ps);
Tensor flatten_grads(const std::vector<const Parameter*>& ps);
void load_values(const Tensor& flat, const std::vector<Parameter*>& ps);

}  // namespace fsl
