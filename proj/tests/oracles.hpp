#pragma once

// Independent re-computations used as oracles by the unit and acceptance
// suites. Everything here is written with plain loops against the math,
// separate from the library kernels, but keeps the same per-element
// accumulation order so exact-match comparisons are meaningful.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fsl/model.hpp"
#include "fsl/optim.hpp"
#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"

namespace oracles {

// y = X * W + b with the sum over the inner dimension running ascending, one
// rounding for the bias add at the end (same order as the library kernels).
inline fsl::Tensor linear(const fsl::Tensor& X, const fsl::Tensor& W, const fsl::Tensor& b) {
    const std::size_t rows = X.dim(0), in = X.dim(1), out = W.dim(1);
    fsl::Tensor y({rows, out});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < out; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < in; ++t) acc += X.at(i, t) * W.at(t, j);
            acc += b[j];
            y.at(i, j) = acc;
        }
    }
    return y;
}

inline fsl::Tensor matmul(const fsl::Tensor& A, const fsl::Tensor& B) {
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    fsl::Tensor C({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += A.at(i, t) * B.at(t, j);
            C.at(i, j) = acc;
        }
    }
    return C;
}

inline fsl::Tensor relu(const fsl::Tensor& X) {
    fsl::Tensor y = X;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
    return y;
}

inline void softmax_rows_inplace(fsl::Tensor& X) {
    const std::size_t rows = X.dim(0), n = X.dim(1);
    for (std::size_t i = 0; i < rows; ++i) {
        double* row = X.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = mx > row[j] ? mx : row[j];
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
    }
}

// Head forward: per-token linear + relu on the [B*T, token_width] view.
inline fsl::Tensor head_forward(const fsl::ModelDims& dims, const fsl::Tensor& W,
                                const fsl::Tensor& b, const fsl::Tensor& X) {
    const std::size_t batch = X.dim(0);
    const fsl::Tensor tokens = X.reshaped({batch * dims.tokens, dims.token_width});
    return relu(linear(tokens, W, b)).reshaped({batch, dims.input()});
}

// One attention + mlp residual block, token attention per sample.
struct EncoderWeights {
    fsl::Tensor wq, wk, wv, wo, w1, b1, w2, b2;
};

inline fsl::Tensor encoder_forward(const fsl::ModelDims& dims, const EncoderWeights& w,
                                   const fsl::Tensor& X) {
    const std::size_t batch = X.dim(0), T = dims.tokens, D = dims.token_width,
                      A = dims.attn_width;
    const fsl::Tensor tokens = X.reshaped({batch * T, D});
    const fsl::Tensor q = matmul(tokens, w.wq);
    const fsl::Tensor k = matmul(tokens, w.wk);
    const fsl::Tensor v = matmul(tokens, w.wv);

    const double scale = 1.0 / std::sqrt(static_cast<double>(A));
    fsl::Tensor ctx({batch * T, A});
    for (std::size_t s = 0; s < batch; ++s) {
        fsl::Tensor scores({T, T});
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t j = 0; j < T; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < A; ++t) {
                    acc += q.at(s * T + i, t) * k.at(s * T + j, t);
                }
                scores.at(i, j) = acc;
            }
        }
        for (std::size_t e = 0; e < T * T; ++e) scores[e] *= scale;
        softmax_rows_inplace(scores);
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t j = 0; j < A; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < T; ++t) acc += scores.at(i, t) * v.at(s * T + t, j);
                ctx.at(s * T + i, j) = acc;
            }
        }
    }

    const fsl::Tensor attn_out = matmul(ctx, w.wo);
    fsl::Tensor u = tokens;
    for (std::size_t e = 0; e < u.size(); ++e) u[e] = u[e] + attn_out[e];

    const fsl::Tensor h1 = linear(u, w.w1, w.b1);
    const fsl::Tensor r = relu(h1);
    const fsl::Tensor m = linear(r, w.w2, w.b2);
    fsl::Tensor out = u;
    for (std::size_t e = 0; e < out.size(); ++e) out[e] = u[e] + m[e];
    return out.reshaped({batch, T * D});
}

// Mean cross-entropy with the same stable log-sum-exp evaluation order.
inline double cross_entropy(const fsl::Tensor& logits, std::span<const int> y) {
    const std::size_t rows = logits.dim(0), classes = logits.dim(1);
    const double inv_rows = 1.0 / static_cast<double>(rows);
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = logits.data() + i * classes;
        double mx = row[0];
        for (std::size_t j = 1; j < classes; ++j) mx = mx > row[j] ? mx : row[j];
        double sum = 0.0;
        for (std::size_t j = 0; j < classes; ++j) sum += std::exp(row[j] - mx);
        total += mx + std::log(sum) - row[static_cast<std::size_t>(y[i])];
    }
    return total * inv_rows;
}

// Multinomial logistic regression trained with plain full-batch gradient
// descent; used to score dataset separability without touching the library's
// layer stack.
inline double linear_probe_accuracy(const fsl::Tensor& Xtr, std::span<const int> ytr,
                                    const fsl::Tensor& Xte, std::span<const int> yte,
                                    std::size_t classes, std::size_t steps = 300,
                                    double lr = 0.5) {
    const std::size_t n = Xtr.dim(0), d = Xtr.dim(1);
    fsl::Tensor W({d, classes});
    fsl::Tensor b({classes});
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t step = 0; step < steps; ++step) {
        fsl::Tensor probs = linear(Xtr, W, b);
        softmax_rows_inplace(probs);
        fsl::Tensor gW({d, classes});
        fsl::Tensor gb({classes});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < classes; ++c) {
                const double delta =
                    (probs.at(i, c) - (static_cast<std::size_t>(ytr[i]) == c ? 1.0 : 0.0)) *
                    inv_n;
                gb[c] += delta;
                for (std::size_t j = 0; j < d; ++j) gW.at(j, c) += delta * Xtr.at(i, j);
            }
        }
        W.add_scaled(gW, -lr);
        b.add_scaled(gb, -lr);
    }
    const fsl::Tensor logits = linear(Xte, W, b);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < Xte.dim(0); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        }
        if (static_cast<std::size_t>(yte[i]) == best) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(Xte.dim(0));
}

// One federated round of the degenerate M=1, q=1, fedround=1, Option I,
// full-batch configuration, replayed on the assembled monolithic model:
// K full-batch steps where head/tail move under the client optimizer and the
// encoder takes one plain gradient step with the final step's gradient.
inline void monolithic_round(fsl::SplitModel& model, fsl::Optimizer& head_tail_optim,
                             const fsl::Tensor& X, std::span<const int> y, std::size_t local_steps,
                             double server_lr) {
    fsl::Tensor encoder_grad;
    for (std::size_t k = 1; k <= local_steps; ++k) {
        model.zero_grads();
        model.backprop(X, y);
        if (k == local_steps) {
            encoder_grad = fsl::flatten_grads(std::as_const(model.encoder).params());
        }
        std::vector<fsl::Parameter*> params = model.head.params();
        for (fsl::Parameter* p : model.tail.params()) params.push_back(p);
        head_tail_optim.step(params);
    }
    fsl::Tensor w = fsl::flatten_values(std::as_const(model.encoder).params());
    w.add_scaled(encoder_grad, -server_lr);
    fsl::load_values(w, model.encoder.params());
}

inline double max_abs_diff(const fsl::Tensor& a, const fsl::Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a[i] - b[i]);
        worst = worst > d ? worst : d;
    }
    return worst;
}

inline double relative_gap(const fsl::Tensor& got, const fsl::Tensor& want) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double d = got[i] - want[i];
        num += d * d;
        den += want[i] * want[i];
    }
    return std::sqrt(num) / std::fmax(1e-12, std::sqrt(den));
}

}  // namespace oracles
