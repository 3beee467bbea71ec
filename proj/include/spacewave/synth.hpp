#pragma once

#include "spacewave/config.hpp"
#include "spacewave/data_model.hpp"
#include "spacewave/likelihood.hpp"
#include "spacewave/rng.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>

namespace spacewave {

/// Values used to draw a true state when none is supplied. Latent blocks are drawn from their
/// model distributions given these.
struct TruthHyper {
    double alpha = -1.0;
    double sigma2_alpha = 0.1;
    double sigma2_alpha_s = 0.05;
    double phi_alpha = 0.05;
    double sigma2_beta = 0.05;
    double theta_beta = 50.0;
    double sigma2_gamma = 0.1;
    double sigma2_gamma_genus = 0.02;
    double mu_theta_gamma = 3.5;
    double sigma2_theta_gamma = 0.1;
    double theta_eta = 50.0;
    double sigma2_A = 0.01;
    double noise_level = 0.004;     // sigma^2(t) centre
    double noise_wiggle = 0.3;      // amplitude of log sigma^2(t) around log(noise_level)
};

struct SynthSpec {
    int n_sites = 10;
    int n_genera = 3;
    WavelengthGrid grid = WavelengthGrid::linspace(450.0, 950.0, 40);
    int n_covariates = 2;
    int min_replicates = 1;
    int max_replicates = 2;
    double presence = 0.6;        // chance that a genus is observed at a site
    double extent = 100.0;        // side of the planar square, km
    std::optional<Eigen::MatrixX2d> coords;  // supplied layout (planar)
    ModelConfig config;           // model structure used by the generator
    TruthHyper hyper;
    std::optional<ChainState> truth;  // overrides the drawn state (dimensions must match)

    void validate() const;
};

struct SynthResult {
    SpectraDataset data;
    ChainState truth;
    Eigen::MatrixXd mean;  // noiseless N_wave x N_rep
};

/// Draws a layout, a true state and noisy spectra.
[[nodiscard]] SynthResult simulate(const SynthSpec& spec, Rng& rng);

/// Latent blocks drawn from their distributions given `hyper`, sized for `ctx`.
[[nodiscard]] ChainState draw_truth(const ModelContext& ctx, const TruthHyper& hyper, Rng& rng);

/// tiny, small or medium.
[[nodiscard]] SynthSpec benchmark_spec(const std::string& name);

/// Writes spectra.csv, sites.csv, mean.csv, truth.json and bundle.json into `dir`.
void make_benchmark(const std::string& name, std::uint64_t seed, const std::filesystem::path& dir);
void write_bundle(const SynthResult& result, const SynthSpec& spec, const std::string& name, std::uint64_t seed,
                  const std::filesystem::path& dir);

/// Reads a bundle directory written by write_bundle.
[[nodiscard]] SpectraDataset load_bundle(const std::filesystem::path& dir);
[[nodiscard]] ChainState load_bundle_truth(const std::filesystem::path& dir, const ModelContext& ctx);

[[nodiscard]] nlohmann::json state_to_json(const ChainState& s);
/// Fills `s` (already shaped) from JSON written by state_to_json.
void state_from_json(const nlohmann::json& j, ChainState& s);

}  // namespace spacewave
