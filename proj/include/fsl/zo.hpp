#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fsl/model.hpp"
#include "fsl/tensor.hpp"
#include "fsl/transcript.hpp"

namespace fsl {

class Rng;

struct ZOConfig {
    double epsilon = 1e-4;          // perturbation scale, must sit in (0, 1)
    std::size_t num_directions = 1; // directions averaged per estimate
    void validate() const;
};

// z ~ N(0, I_d) from the supplied generator.
Tensor sample_direction(std::size_t d, Rng& rng);

// Two-point SPSA estimate of the gradient of loss_at around w:
//   g = mean_j [ (loss(w + eps z_j) - loss(w - eps z_j)) / (2 eps) ] z_j.
// Exactly 2 * num_directions loss evaluations; w itself is never mutated.
// A non-finite loss at a perturbed point raises EstimationError carrying the
// direction index.
Tensor zo_estimate(const std::function<double(const Tensor&)>& loss_at, const Tensor& w,
                   const ZOConfig& cfg, Rng& rng);

struct ZOMessages {
    Tensor g;                        // flat, encoder parameter dimension
    std::vector<double> loss_plus;   // per direction
    std::vector<double> loss_minus;  // per direction
};

// The message-level realization of zo_estimate for the split protocol: the
// server evaluates the encoder at w_E +- eps z on the client's stored feature
// h, ships both smashed features down, and the client returns the two scalar
// losses. Arithmetic is shared with zo_estimate, so given the same generator
// state the two produce bit-identical g. The encoder's weights are restored
// before returning, error paths included.
ZOMessages zo_messages(Stack& encoder, const Stack& tail, const ModelDims& dims,
                       const FeatureBundle& fb, std::span<const int> labels, const ZOConfig& cfg,
                       Rng& rng, std::uint32_t round, Transcript* transcript);

}  // namespace fsl
