#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

namespace spacewave {

/// One engine per chain; distributions are constructed per call so no hidden state survives
/// between draws and the engine state alone determines the stream.
using Rng = std::mt19937_64;

/// Independent stream seed for (seed, stream) via splitmix64.
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

[[nodiscard]] double draw_normal(Rng& rng);
[[nodiscard]] Eigen::VectorXd draw_normal_vector(Rng& rng, Eigen::Index n);
[[nodiscard]] double draw_uniform(Rng& rng);
/// Gamma with shape and rate.
[[nodiscard]] double draw_gamma(Rng& rng, double shape, double rate);
/// Inverse gamma with shape and scale (density proportional to x^{-shape-1} exp(-scale/x)).
[[nodiscard]] double draw_inv_gamma(Rng& rng, double shape, double scale);
/// N(mean, sd^2) restricted to (lower, inf).
[[nodiscard]] double draw_truncated_normal(Rng& rng, double mean, double sd, double lower);

[[nodiscard]] std::string serialize_rng(const Rng& rng);
void deserialize_rng(Rng& rng, const std::string& state);

}  // namespace spacewave
