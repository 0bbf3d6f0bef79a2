#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace mlmmvb {

namespace detail {

// splitmix64 finalizer, used to mix seeds for derived streams.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Seeded random stream with portable output.
///
/// std::mt19937_64 has a standardised sequence, and the distributions here are
/// implemented by hand (std::normal_distribution et al. are implementation
/// defined), so a given seed produces the same draws on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(detail::mix64(seed)) {}

    /// Independent stream derived from this seed and a list of tags
    /// (round/component/attempt indices and the like).
    static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
        std::uint64_t s = detail::mix64(seed);
        for (std::uint64_t t : tags) s = detail::mix64(s ^ detail::mix64(t));
        return Rng(s);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Standard normal via the Box-Muller transform.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang, with the boost for shape < 1.
    double gamma(double shape) {
        if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Inverse-gamma(shape, scale) draw.
    double inverse_gamma(double shape, double scale) { return scale / gamma(shape); }

    /// Index draw from an unnormalised nonnegative weight vector.
    int categorical(const Eigen::VectorXd& weights) {
        const double total = weights.sum();
        if (!(total > 0.0)) throw std::invalid_argument("categorical: weights must have positive sum");
        double u = uniform() * total;
        for (Eigen::Index j = 0; j + 1 < weights.size(); ++j) {
            u -= weights(j);
            if (u < 0.0) return static_cast<int>(j);
        }
        return static_cast<int>(weights.size() - 1);
    }

    bool bernoulli(double p = 0.5) { return uniform() < p; }

    std::uint64_t bits() { return gen_(); }

private:
    std::mt19937_64 gen_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace mlmmvb
