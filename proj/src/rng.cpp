#include "fsl/rng.hpp"

#include <cmath>

namespace fsl {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> words) {
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t w : words) {
        h = splitmix64(h ^ splitmix64(w + 0x632be59bd9b4e019ULL));
    }
    return h;
}

std::size_t Rng::uniform_index(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t range = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % range);
}

double Rng::normal() {
    // u1 in (0,1] keeps the log finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

double Rng::gamma(double alpha) {
    if (alpha < 1.0) {
        // Boost: G(a) = G(a+1) * U^(1/a)
        double u = 1.0 - uniform();
        return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u = 1.0 - uniform();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
            return d * v;
        }
    }
}

std::vector<double> Rng::dirichlet_symmetric(double alpha, std::size_t k) {
    std::vector<double> x(k);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        x[i] = gamma(alpha);
        sum += x[i];
    }
    for (std::size_t i = 0; i < k; ++i) x[i] /= sum;
    return x;
}

}  // namespace fsl
