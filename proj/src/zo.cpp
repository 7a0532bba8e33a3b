#include "fsl/zo.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "fsl/error.hpp"
#include "fsl/rng.hpp"

namespace fsl {

void ZOConfig::validate() const {
    if (!(epsilon > 0.0) || !(epsilon < 1.0)) {
        throw ConfigError("zo: epsilon must lie in (0, 1)");
    }
    if (num_directions < 1) throw ConfigError("zo: need at least 1 direction");
}

Tensor sample_direction(std::size_t d, Rng& rng) {
    if (d < 1) throw InputError("sample_direction: dimension must be >= 1");
    Tensor z({d});
    for (std::size_t i = 0; i < d; ++i) z[i] = rng.normal();
    return z;
}

namespace {

// Shared arithmetic core. eval is handed the perturbed point plus which
// evaluation it is, so the message-level wrapper can log and collect losses
// without duplicating (and risking to diverge from) the estimator math.
Tensor zo_core(const std::function<double(const Tensor&, std::size_t, bool)>& eval,
               const Tensor& w, const ZOConfig& cfg, Rng& rng) {
    cfg.validate();
    Tensor g(w.shape());
    for (std::size_t j = 0; j < cfg.num_directions; ++j) {
        Tensor z = sample_direction(w.size(), rng);
        Tensor w_plus = w;
        w_plus.add_scaled(z, cfg.epsilon);
        Tensor w_minus = w;
        w_minus.add_scaled(z, -cfg.epsilon);
        const double lp = eval(w_plus, j, true);
        if (!std::isfinite(lp)) {
            throw EstimationError("zo estimate: non-finite loss at +eps perturbation",
                                  static_cast<int>(j));
        }
        const double lm = eval(w_minus, j, false);
        if (!std::isfinite(lm)) {
            throw EstimationError("zo estimate: non-finite loss at -eps perturbation",
                                  static_cast<int>(j));
        }
        g.add_scaled(z, (lp - lm) / (2.0 * cfg.epsilon));
    }
    g.scale(1.0 / static_cast<double>(cfg.num_directions));
    return g;
}

}  // namespace

Tensor zo_estimate(const std::function<double(const Tensor&)>& loss_at, const Tensor& w,
                   const ZOConfig& cfg, Rng& rng) {
    return zo_core([&](const Tensor& p, std::size_t, bool) { return loss_at(p); }, w, cfg, rng);
}

ZOMessages zo_messages(Stack& encoder, const Stack& tail, const ModelDims& dims,
                       const FeatureBundle& fb, std::span<const int> labels, const ZOConfig& cfg,
                       Rng& rng, std::uint32_t round, Transcript* transcript) {
    std::vector<Parameter*> params = encoder.params();
    const Tensor w0 = flatten_values(std::as_const(encoder).params());
    ZOMessages out;

    auto eval = [&](const Tensor& w, std::size_t, bool plus) {
        load_values(w, params);
        SmashedBundle sb = encoder_forward(encoder, dims, fb);
        if (transcript) {
            transcript->record(round, fb.client_id, MsgKind::zo_smashed_down,
                               sb.b.size() * sizeof(double));
        }
        TailOutput to = tail_forward_loss(tail, dims, sb, labels);
        if (transcript) {
            transcript->record(round, fb.client_id, MsgKind::zo_loss_up, sizeof(double));
        }
        (plus ? out.loss_plus : out.loss_minus).push_back(to.loss);
        return to.loss;
    };

    try {
        out.g = zo_core(eval, w0, cfg, rng);
    } catch (...) {
        load_values(w0, params);
        throw;
    }
    load_values(w0, params);
    return out;
}

}  // namespace fsl
