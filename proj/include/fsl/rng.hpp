#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fsl {

// Named sub-streams of the experiment seed. Every random decision in a run is
// drawn from Rng(derive_seed(seed, {stream, ...})), so two runs with the same
// seed replay bit-identically and independent components never share a stream.
enum class Stream : std::uint64_t {
    dataset = 1,
    partition = 2,
    client_init = 3,
    client_data = 4,
    encoder_init = 5,
    pretrain = 6,
    client_sample = 7,
    zo_direction = 8,
    fedavg_init = 9,
    probe = 10,
};

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> words);

inline std::uint64_t derive_seed(std::uint64_t base, Stream s) {
    return derive_seed(base, {static_cast<std::uint64_t>(s)});
}
inline std::uint64_t derive_seed(std::uint64_t base, Stream s, std::uint64_t a) {
    return derive_seed(base, {static_cast<std::uint64_t>(s), a});
}
inline std::uint64_t derive_seed(std::uint64_t base, Stream s, std::uint64_t a, std::uint64_t b) {
    return derive_seed(base, {static_cast<std::uint64_t>(s), a, b});
}

// mt19937_64 with explicit uniform/normal/gamma transforms so that the
// produced doubles are identical on every platform (std::*_distribution is
// implementation-defined and would not be).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform in [0, n). Rejection sampling, exact.
    std::size_t uniform_index(std::size_t n);

    // Standard normal via Box-Muller, two uniforms per draw, no spare cached.
    double normal();

    // Gamma(alpha, 1), Marsaglia-Tsang; boosted for alpha < 1.
    double gamma(double alpha);

    // Dirichlet(alpha, ..., alpha) over k categories.
    std::vector<double> dirichlet_symmetric(double alpha, std::size_t k);

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace fsl
