#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace spacewave {

enum class InterceptMode { genus_scalar, genus_spatial };
enum class GammaMode { none, global, per_genus };
enum class BetaMode { scalar, functional };
enum class EtaVariant { none, spatial_only, factor, independent, separable, lmc, spatial_convolution };
enum class KernelFamily { gaussian, double_exponential };
enum class PhiWMode { fixed_single, fixed_sequence, random_single, random_sequence };

struct KnotSpec {
    double lo = 437.5;
    double hi = 962.5;
    double spacing = 25.0;
};

struct InvGammaPrior {
    double shape;
    double scale;
};

struct GammaPrior {
    double shape;
    double rate;
};

struct NormalPrior {
    double mean;
    double var;
};

struct PriorConfig {
    NormalPrior alpha{0.0, 100.0};
    InvGammaPrior sigma2_alpha{3.0, 0.2};
    InvGammaPrior sigma2_alpha_s{3.0, 2.0};
    InvGammaPrior sigma2_beta{3.0, 2.0};
    InvGammaPrior sigma2_gamma{3.0, 2.0};
    InvGammaPrior sigma2_gamma_genus{3.0, 2.0};
    InvGammaPrior sigma2_A{11.0, 10.0};
    InvGammaPrior sigma2_theta_gamma{5.0, 2.0};
    double phi_alpha_lo = 0.01;
    double phi_alpha_hi = 1.0;
    GammaPrior theta_beta{5.0, 0.1};
    GammaPrior theta_eta{5.0, 0.1};
    NormalPrior mu_theta_gamma{3.0, 9.0};
    double beta_sigma_var = 100.0;
};

/// Random-walk proposal scales on the unconstrained scale.
struct StepSizes {
    double phi_alpha = 0.5;
    double theta_beta = 0.1;
    double theta_gamma = 0.2;
    double theta_eta = 0.1;
    double beta_sigma = 0.2;
    double phi_w = 0.3;
};

struct McmcConfig {
    std::int64_t n_iter = 2000;
    std::int64_t n_burn = 1000;
    std::int64_t n_keep = 500;
    std::uint64_t seed = 1;
    bool adapt = true;
    double target_acceptance = 0.3;
    bool prior_only = false;  // MH targets drop the likelihood
    bool joint_level = true;  // extra joint draw of alpha_genus, alpha_spatial and gamma per sweep
    bool joint_beta_eta = true;  // extra joint draw of B and the latent fields w per sweep
    bool collapsed_theta_beta = true;  // extra theta_beta move with B integrated out, then B redrawn
    StepSizes step;

    /// floor((n_iter - n_burn) / n_keep)
    [[nodiscard]] std::int64_t thin() const;
};

/// Structural toggles, knot grids, priors and the MCMC schedule for one fit.
struct ModelConfig {
    InterceptMode intercept_mode = InterceptMode::genus_spatial;
    GammaMode gamma_mode = GammaMode::global;
    BetaMode beta_mode = BetaMode::functional;
    EtaVariant eta_variant = EtaVariant::factor;
    int rank = 10;
    KernelFamily kernel_family = KernelFamily::gaussian;
    KnotSpec beta_knots{};
    KnotSpec gamma_knots{};
    KnotSpec eta_knots{};
    KnotSpec sigma_knots{440.0, 960.0, 20.0};
    PhiWMode phi_w_mode = PhiWMode::fixed_sequence;
    std::vector<double> phi_w;  // explicit decays; empty means derive from the site layout
    double phi_gamma = 1.0 / 50.0;
    int spatial_knots_per_side = 4;
    bool gamma_fixed_effect = false;
    PriorConfig priors;
    McmcConfig mcmc;
    std::set<std::string> frozen;  // blocks held at their initial values

    [[nodiscard]] bool is_frozen(const std::string& block) const { return frozen.count(block) > 0; }

    /// Throws Error(validation) listing every violated field.
    void validate() const;
    [[nodiscard]] std::vector<std::string> validation_errors() const;
};

/// Names accepted in ModelConfig::frozen.
[[nodiscard]] const std::vector<std::string>& block_names();

[[nodiscard]] nlohmann::json to_json(const ModelConfig& config);
/// Strict parse: unknown keys and bad values are all reported together.
[[nodiscard]] ModelConfig config_from_json(const nlohmann::json& j);
[[nodiscard]] ModelConfig load_config(const std::filesystem::path& path);

/// FNV-1a 64 over the canonical JSON serialization.
[[nodiscard]] std::string config_hash(const ModelConfig& config);
[[nodiscard]] std::uint64_t fnv1a64(std::string_view bytes);

[[nodiscard]] std::string to_string(EtaVariant v);
[[nodiscard]] std::string to_string(InterceptMode v);
[[nodiscard]] std::string to_string(GammaMode v);
[[nodiscard]] std::string to_string(BetaMode v);
[[nodiscard]] std::string to_string(KernelFamily v);
[[nodiscard]] std::string to_string(PhiWMode v);

}  // namespace spacewave
