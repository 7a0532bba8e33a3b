#include "fsl/optim.hpp"

#include <cmath>

#include "fsl/error.hpp"

namespace fsl {

std::string to_string(OptimKind kind) {
    return kind == OptimKind::adam ? "adam" : "sgd-momentum";
}

OptimKind optim_kind_from_string(const std::string& name) {
    if (name == "adam") return OptimKind::adam;
    if (name == "sgd-momentum") return OptimKind::sgd_momentum;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd-momentum)");
}

Optimizer::Optimizer(OptimConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("optimizer: lr must be > 0");
}

void Optimizer::set_lr(double lr) {
    if (!(lr > 0.0)) throw ConfigError("optimizer: lr must be > 0");
    cfg_.lr = lr;
}

void Optimizer::step(const std::vector<Parameter*>& params) {
    ++t_;
    if (cfg_.kind == OptimKind::sgd_momentum) {
        for (Parameter* p : params) {
            const std::size_t n = p->value.size();
            for (std::size_t i = 0; i < n; ++i) {
                p->m1[i] = cfg_.momentum * p->m1[i] + p->grad[i];
                p->value[i] -= cfg_.lr * p->m1[i];
            }
        }
        return;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
        const std::size_t n = p->value.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = p->grad[i];
            p->m1[i] = cfg_.beta1 * p->m1[i] + (1.0 - cfg_.beta1) * g;
            p->m2[i] = cfg_.beta2 * p->m2[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = p->m1[i] / bc1;
            const double vhat = p->m2[i] / bc2;
            p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace fsl
