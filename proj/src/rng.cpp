#include "spacewave/rng.hpp"

#include "spacewave/error.hpp"

#include <cmath>
#include <sstream>

namespace spacewave {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double draw_normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

Eigen::VectorXd draw_normal_vector(Rng& rng, Eigen::Index n) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = dist(rng);
    return z;
}

double draw_uniform(Rng& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

double draw_gamma(Rng& rng, double shape, double rate) {
    std::gamma_distribution<double> dist(shape, 1.0 / rate);
    return dist(rng);
}

double draw_inv_gamma(Rng& rng, double shape, double scale) {
    return 1.0 / draw_gamma(rng, shape, scale);
}

double draw_truncated_normal(Rng& rng, double mean, double sd, double lower) {
    const double a = (lower - mean) / sd;
    if (a < 0.5) {
        // Plain rejection accepts with probability >= 0.3.
        while (true) {
            const double z = draw_normal(rng);
            if (z > a) return mean + sd * z;
        }
    }
    // Exponential proposal for the tail (Robert, 1995).
    const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
    while (true) {
        const double z = a - std::log(draw_uniform(rng)) / rate;
        const double rho = std::exp(-0.5 * (z - rate) * (z - rate));
        if (draw_uniform(rng) <= rho) return mean + sd * z;
    }
}

std::string serialize_rng(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void deserialize_rng(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) {
        throw Error(ErrorKind::parse, "corrupt random engine state");
    }
}

}  // namespace spacewave
