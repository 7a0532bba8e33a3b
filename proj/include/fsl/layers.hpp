#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fsl/tensor.hpp"

namespace fsl {

class Rng;

// Trainable tensor plus gradient and optimizer slots. Gradients accumulate
// across backward calls; the owner zeroes them between steps.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m1;  // momentum buffer / Adam first moment
    Tensor m2;  // Adam second moment

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)),
          value(std::move(v)),
          grad(Tensor::zeros(value.shape())),
          m1(Tensor::zeros(value.shape())),
          m2(Tensor::zeros(value.shape())) {}

    void zero_grad() { grad.fill(0.0); }
};

struct LayerSpec {
    enum class Kind { linear, relu, encoder_block };
    Kind kind = Kind::relu;
    // linear
    std::size_t in = 0;
    std::size_t out = 0;
    // encoder block
    std::size_t tokens = 0;
    std::size_t width = 0;
    std::size_t attn_width = 0;
    std::size_t mlp_width = 0;

    static LayerSpec linear(std::size_t in, std::size_t out);
    static LayerSpec relu_act();
    static LayerSpec encoder(std::size_t tokens, std::size_t width, std::size_t attn_width,
                             std::size_t mlp_width);
    std::string describe() const;
};

class Layer;

// Forward-pass intermediates a layer needs for its backward pass. Tied to the
// producing layer; backward with a foreign or unset cache is a protocol error.
struct Cache {
    const Layer* owner = nullptr;
    std::vector<std::size_t> input_shape;
    std::vector<std::size_t> output_shape;
    std::vector<Tensor> saved;

    bool valid() const { return owner != nullptr; }
};

class Layer {
public:
    explicit Layer(LayerSpec spec) : spec_(spec) {}
    virtual ~Layer() = default;

    const LayerSpec& spec() const { return spec_; }

    // Pure with respect to the layer: safe to call concurrently on one
    // instance as long as each call owns its cache.
    virtual Tensor forward(const Tensor& input, Cache& cache) const = 0;

    // Returns d(loss)/d(input) and accumulates parameter gradients.
    virtual Tensor backward(const Cache& cache, const Tensor& upstream) = 0;

    virtual std::vector<Parameter*> params() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;

protected:
    void check_cache(const Cache& cache, const Tensor& upstream) const;
    LayerSpec spec_;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& rng);

// Ordered layer pipeline; the unit of model composition (head, encoder, tail).
struct StackCache {
    std::vector<Cache> layers;
};

class Stack {
public:
    Stack() = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
    std::size_t size() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

    Tensor forward(const Tensor& input, StackCache& cache) const;
    Tensor backward(const StackCache& cache, const Tensor& upstream);

    std::vector<Parameter*> params();
    std::vector<const Parameter*> params() const;
    std::size_t param_count() const;
    void zero_grads();

    Stack clone() const;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

struct LossResult {
    double loss = 0.0;
    Tensor logit_grad;
};

// Mean softmax cross-entropy over the batch. logits are [B x C] (or [C] with
// a single label); logit_grad rows are (softmax - onehot) / B.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
LossResult softmax_cross_entropy(const Tensor& logits, int label);

// Central differences, one coordinate at a time. The gradient oracle used all
// over the test suites and the self-check.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& loss_fn,
                              const Tensor& w, double step);

}  // namespace fsl
