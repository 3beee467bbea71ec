#pragma once

#include "spacewave/likelihood.hpp"
#include "spacewave/rng.hpp"
#include "spacewave/spatial.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace spacewave {

/// Gaussian full conditional in canonical form: N(Q^{-1} b, Q^{-1}).
struct Canonical {
    Eigen::MatrixXd precision;
    Eigen::VectorXd linear;

    [[nodiscard]] Gaussian moments(const std::string& what) const;
};

/// Inverse gamma with shape and scale.
struct InvGammaConditional {
    double shape = 0.0;
    double scale = 0.0;

    [[nodiscard]] double log_density(double x) const;
};

enum class MhBlock { phi_alpha, theta_beta, theta_gamma, theta_eta, beta_sigma, phi_w };

[[nodiscard]] std::string to_string(MhBlock b);
[[nodiscard]] const std::vector<MhBlock>& mh_blocks();

struct AcceptanceCounter {
    std::int64_t proposed = 0;
    std::int64_t accepted = 0;

    [[nodiscard]] double rate() const {
        return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
    }
};

/// Per-component random-walk scales and counters. Scales adapt during burn-in only.
struct AdaptState {
    std::map<std::string, Eigen::VectorXd> steps;
    std::map<std::string, AcceptanceCounter> burn;
    std::map<std::string, AcceptanceCounter> kept;
};

/// State with every block sized for `ctx` and filled with zeros (defaults for scalars).
[[nodiscard]] ChainState zero_state(const ModelContext& ctx);

/// Starting state: grand-mean intercepts, zero latent effects, small random loadings,
/// variances at their prior means and bandwidths at their prior medians.
[[nodiscard]] ChainState initial_state(const ModelContext& ctx, Rng& rng);

/// One chain: the state, its random stream and cached surfaces. Every block update draws from
/// its exact full conditional given the current values of all other blocks.
class GibbsSampler {
public:
    GibbsSampler(const ModelContext& ctx, ChainState state, Rng rng);

    [[nodiscard]] const ChainState& state() const { return s_; }
    /// Replaces the state and rebuilds all caches.
    void set_state(ChainState state);
    [[nodiscard]] Rng& rng() { return rng_; }
    [[nodiscard]] const Rng& rng() const { return rng_; }
    [[nodiscard]] AdaptState& adapt() { return adapt_; }
    [[nodiscard]] const AdaptState& adapt() const { return adapt_; }
    [[nodiscard]] const ModelContext& context() const { return ctx_; }

    /// Recomputes every cached surface from the state.
    void refresh();

    // Full conditionals at the current state.
    [[nodiscard]] Canonical conditional_alpha_genus(int genus) const;
    [[nodiscard]] Canonical conditional_alpha_spatial(int genus) const;
    [[nodiscard]] Canonical conditional_alpha() const;
    /// Over vec(B') (covariate-major: index c * J_beta + j).
    [[nodiscard]] Canonical conditional_B() const;
    /// Same, with the beta kernel evaluated at bandwidth theta.
    [[nodiscard]] Canonical conditional_B_at(double theta) const;
    [[nodiscard]] Canonical conditional_gamma_star() const;
    [[nodiscard]] Canonical conditional_gamma_genus(int genus) const;
    [[nodiscard]] Canonical conditional_w_site(int site) const;
    /// Over the free rows of column k of A (rows k.. for the lower-triangular variants).
    [[nodiscard]] Canonical conditional_A_column(int k) const;
    [[nodiscard]] Canonical conditional_z_wave(int m) const;
    [[nodiscard]] Canonical conditional_mu_theta_gamma() const;
    /// Joint conditional of the level terms, over [alpha_genus | alpha_spatial by cell | gamma],
    /// where gamma is gamma* (global) or the gamma_genus columns (per genus). Blocks that are
    /// frozen or inactive are left out.
    [[nodiscard]] Canonical conditional_level() const;
    /// Joint conditional of B and the latent fields, over [vec B (covariate-major) | w by site],
    /// with the r factor values of each site contiguous.
    [[nodiscard]] Canonical conditional_B_w() const;
    [[nodiscard]] InvGammaConditional conditional_sigma2_alpha() const;
    [[nodiscard]] InvGammaConditional conditional_sigma2_alpha_s() const;
    [[nodiscard]] InvGammaConditional conditional_sigma2_beta() const;
    [[nodiscard]] InvGammaConditional conditional_sigma2_gamma() const;
    [[nodiscard]] InvGammaConditional conditional_sigma2_gamma_genus() const;
    [[nodiscard]] InvGammaConditional conditional_sigma2_A() const;
    [[nodiscard]] InvGammaConditional conditional_sigma2_theta_gamma() const;

    /// All conjugate blocks in the fixed order, skipping frozen and inactive ones.
    void gibbs_step();
    /// One pass of the block's random-walk updates. Returns the number of accepted proposals.
    int mh_step(MhBlock block, bool adapting, double adapt_gain);
    /// gibbs_step followed by every active MH block.
    void sweep(bool adapting, double adapt_gain);

    /// Log target of an MH block at the current state on its unconstrained scale
    /// (data term dropped when prior_only).
    [[nodiscard]] double mh_log_target(MhBlock block) const;
    /// Log target of theta_beta on the log scale with B integrated out, up to a constant.
    [[nodiscard]] double collapsed_theta_beta_log_target(double theta) const;
    /// Random-walk move on log theta_beta under the collapsed target, with B redrawn from its
    /// conditional at the proposal. Returns 1 when accepted.
    int mh_theta_beta_collapsed(bool adapting, double gain);

    [[nodiscard]] bool block_active(const std::string& name) const;
    [[nodiscard]] bool mh_active(MhBlock block) const;

    [[nodiscard]] const Eigen::MatrixXd& residuals() const { return resid_; }
    [[nodiscard]] const Eigen::VectorXd& sigma2() const { return sigma2_; }

private:
    void draw_alpha_genus();
    void draw_alpha_spatial();
    void draw_alpha();
    void draw_B();
    void set_B(const Eigen::VectorXd& v);
    void draw_gamma();
    void draw_w();
    void draw_z_wave();
    void draw_mu_theta_gamma();
    void draw_A();
    void draw_level();
    void draw_B_w();
    void draw_variances();

    int mh_phi_alpha(bool adapting, double gain);
    int mh_theta_beta(bool adapting, double gain);
    int mh_theta_gamma(bool adapting, double gain);
    int mh_theta_eta(bool adapting, double gain);
    int mh_beta_sigma(bool adapting, double gain);
    int mh_phi_w(bool adapting, double gain);

    bool accept(double log_ratio);
    void record(const std::string& name, int component, bool accepted, bool adapting, double gain);

    struct LevelLayout {
        bool genus = false, spatial = false, gamma = false;
        Eigen::Index n_genus = 0, n_cells = 0, n_groups = 0, off_cells = 0, off_gamma = 0, size = 0;
    };
    [[nodiscard]] LevelLayout level_layout() const;

    void rebuild_alpha_corr();
    void rebuild_w_precision();
    void rebuild_sigma2();
    void update_eta_sites(const Eigen::MatrixXd& new_eta_site);
    [[nodiscard]] Eigen::MatrixXd site_residual_sums() const;  // N_wave x N_s
    [[nodiscard]] Eigen::VectorXd weighted_record_sums() const;  // sum_t r_k(t)/sigma2(t)
    [[nodiscard]] double gp_log_density(const Eigen::VectorXd& x, double phi, double var,
                                        const Eigen::MatrixXd& dist) const;

    const ModelContext& ctx_;
    ChainState s_;
    Rng rng_;
    AdaptState adapt_;

    Eigen::MatrixXd XtX_;
    Eigen::VectorXd sigma2_, inv_s2_;
    Eigen::MatrixXd Kb_, Kg_, Ke_;
    Eigen::MatrixXd reg_site_;    // N_wave x N_s
    Eigen::MatrixXd gamma_genus_; // N_wave x N_g
    Eigen::MatrixXd eta_site_;    // N_wave x N_s
    Eigen::MatrixXd resid_;       // Y - mean, N_wave x N_rep
    std::vector<Eigen::MatrixXd> genus_dist_;      // distances among each genus's cell sites
    std::vector<Eigen::MatrixXd> alpha_corr_inv_;  // R_i(phi_alpha)^{-1}
    std::vector<Eigen::MatrixXd> w_precision_;     // R_j(phi_w_j)^{-1}
    std::vector<int> site_counts_;
};

struct Schedule {
    std::int64_t n_iter = 0;
    std::int64_t n_burn = 0;
    std::int64_t thin = 1;
    std::int64_t n_keep = 0;
    std::uint64_t seed = 0;
};

struct PosteriorSamples {
    Schedule schedule;
    std::vector<ChainState> draws;
    std::vector<std::int64_t> iterations;
    std::map<std::string, double> acceptance;  // post-burn-in rate per MH block
    std::map<std::string, Eigen::VectorXd> step_sizes;
};

/// Drives a sampler through the schedule; can checkpoint and resume bit-identically.
class ChainRunner {
public:
    explicit ChainRunner(const ModelContext& ctx, std::optional<ChainState> init = std::nullopt);

    /// Runs at most `n` more iterations. Errors name the failing iteration.
    void advance(std::int64_t n);
    void run() { advance(ctx_.config.mcmc.n_iter - iteration_); }
    [[nodiscard]] bool done() const { return iteration_ >= ctx_.config.mcmc.n_iter; }
    [[nodiscard]] std::int64_t iteration() const { return iteration_; }
    [[nodiscard]] GibbsSampler& sampler() { return sampler_; }
    [[nodiscard]] PosteriorSamples samples() const;

    void save_checkpoint(const std::filesystem::path& path) const;
    [[nodiscard]] static ChainRunner resume(const ModelContext& ctx, const std::filesystem::path& path);

private:
    const ModelContext& ctx_;
    GibbsSampler sampler_;
    std::int64_t iteration_ = 0;
    std::vector<ChainState> kept_;
    std::vector<std::int64_t> kept_iterations_;
};

/// Runs the full schedule of ctx.config.mcmc with seed ctx.config.mcmc.seed.
[[nodiscard]] PosteriorSamples run_chain(const ModelContext& ctx, std::optional<ChainState> init = std::nullopt);

/// Componentwise arithmetic mean of the draws.
[[nodiscard]] ChainState mean_state(const std::vector<ChainState>& draws);

struct DicResult {
    double d_bar = 0.0;
    double d_hat = 0.0;  // deviance at the mean state
    double p_d = 0.0;
    double dic = 0.0;
};

[[nodiscard]] DicResult dic(const PosteriorSamples& samples, const ModelContext& ctx);

}  // namespace spacewave
