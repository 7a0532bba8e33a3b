#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsl/layers.hpp"

namespace fsl {

enum class OptimKind { sgd_momentum, adam };

std::string to_string(OptimKind kind);
OptimKind optim_kind_from_string(const std::string& name);

struct OptimConfig {
    OptimKind kind = OptimKind::adam;
    double lr = 2e-4;
    double momentum = 0.9;   // sgd-momentum only
    double beta1 = 0.9;      // adam
    double beta2 = 0.999;    // adam
    double eps = 1e-8;       // adam
};

// Stateless apart from the step counter; per-parameter state (momentum buffer
// or Adam moments) lives in the Parameter itself so parameters can be moved
// between owners without losing optimizer history.
class Optimizer {
public:
    explicit Optimizer(OptimConfig cfg);

    // Applies one update using Parameter.grad. Grads are left untouched;
    // the caller decides when to zero them.
    void step(const std::vector<Parameter*>& params);

    void set_lr(double lr);
    double lr() const { return cfg_.lr; }
    std::uint64_t steps() const { return t_; }
    const OptimConfig& config() const { return cfg_; }

private:
    OptimConfig cfg_;
    std::uint64_t t_ = 0;
};

}  // namespace fsl
