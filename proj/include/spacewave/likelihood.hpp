#pragma once

#include "spacewave/config.hpp"
#include "spacewave/data_model.hpp"
#include "spacewave/kernel_basis.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace spacewave {

/// Every sampled quantity at one iteration. Blocks unused by the configured model stay at
/// their initial values and do not enter the likelihood.
struct ChainState {
    double alpha = 0.0;
    Eigen::VectorXd alpha_genus;    // N_g
    Eigen::VectorXd alpha_spatial;  // one per observed (site, genus) cell
    Eigen::MatrixXd B;              // p x J_beta
    Eigen::VectorXd gamma_star;     // J_gamma
    Eigen::MatrixXd gamma_genus;    // J_gamma x N_g (per-genus mode)
    double theta_beta = 50.0;
    Eigen::VectorXd theta_gamma;  // J_gamma
    double theta_eta = 50.0;
    Eigen::MatrixXd A;       // J_eta x r
    Eigen::MatrixXd w;       // N_s x r
    Eigen::MatrixXd z_wave;  // L x N_wave (spatial convolution variant)
    Eigen::VectorXd phi_w;   // r
    Eigen::VectorXd beta_sigma;
    double sigma2_alpha = 0.1;
    double sigma2_alpha_s = 1.0;
    double sigma2_beta = 1.0;
    double sigma2_gamma = 1.0;
    double sigma2_gamma_genus = 1.0;
    double sigma2_A = 1.0;
    double sigma2_theta_gamma = 0.5;
    double mu_theta_gamma = 3.0;
    double phi_alpha = 0.1;

    /// Variances and bandwidths positive, everything finite.
    void validate() const;
};

/// Named view of one block for serialization and averaging.
struct BlockRef {
    const char* name;
    double* data;
    Eigen::Index rows;
    Eigen::Index cols;
};

/// Visits every block in a fixed order (column-major data for matrices).
template <class F>
void visit_blocks(ChainState& s, F&& f) {
    auto scalar = [&](const char* name, double& v) { f(BlockRef{name, &v, 1, 1}); };
    auto vec = [&](const char* name, Eigen::VectorXd& v) { f(BlockRef{name, v.data(), v.size(), 1}); };
    auto mat = [&](const char* name, Eigen::MatrixXd& m) { f(BlockRef{name, m.data(), m.rows(), m.cols()}); };
    scalar("alpha", s.alpha);
    vec("alpha_genus", s.alpha_genus);
    vec("alpha_spatial", s.alpha_spatial);
    mat("B", s.B);
    vec("gamma_star", s.gamma_star);
    mat("gamma_genus", s.gamma_genus);
    scalar("theta_beta", s.theta_beta);
    vec("theta_gamma", s.theta_gamma);
    scalar("theta_eta", s.theta_eta);
    mat("A", s.A);
    mat("w", s.w);
    mat("z_wave", s.z_wave);
    vec("phi_w", s.phi_w);
    vec("beta_sigma", s.beta_sigma);
    scalar("sigma2_alpha", s.sigma2_alpha);
    scalar("sigma2_alpha_s", s.sigma2_alpha_s);
    scalar("sigma2_beta", s.sigma2_beta);
    scalar("sigma2_gamma", s.sigma2_gamma);
    scalar("sigma2_gamma_genus", s.sigma2_gamma_genus);
    scalar("sigma2_A", s.sigma2_A);
    scalar("sigma2_theta_gamma", s.sigma2_theta_gamma);
    scalar("mu_theta_gamma", s.mu_theta_gamma);
    scalar("phi_alpha", s.phi_alpha);
}

template <class F>
void visit_blocks(const ChainState& s, F&& f) {
    visit_blocks(const_cast<ChainState&>(s), [&](BlockRef b) { f(static_cast<const BlockRef&>(b)); });
}

/// Immutable per-fit data: responses, design, knot grids and precomputed fixed matrices.
struct ModelContext {
    ModelConfig config;
    WavelengthGrid grid;
    CoordinateSystem units = CoordinateSystem::lonlat;
    Eigen::MatrixXd Y;        // N_wave x N_rep
    Eigen::MatrixXd X_site;   // N_s x p (standardized)
    Eigen::MatrixXd X_rec;    // N_rep x p
    std::vector<std::string> covariate_names;
    Eigen::MatrixX2d coords;  // N_s x 2
    Eigen::MatrixXd site_dist;
    std::vector<int> rec_site;
    std::vector<int> rec_genus;
    std::vector<int> rec_cell;
    std::vector<DesignIndex::Cell> cells;
    std::vector<std::vector<int>> genus_cells;
    std::vector<std::vector<int>> site_records;
    std::vector<std::vector<int>> genus_records;
    std::vector<std::vector<int>> cell_records;
    std::vector<double> beta_knots;
    std::vector<double> gamma_knots;
    std::vector<double> eta_knots;
    std::vector<double> sigma_knots;
    Eigen::MatrixXd sigma_weights;  // N_wave x K_sigma
    Eigen::MatrixXd R_gamma;        // correlation of log-bandwidths
    Eigen::MatrixXd R_gamma_inv;
    Eigen::MatrixXd spatial_kernel;  // N_s x L (spatial convolution variant)
    Eigen::MatrixX2d spatial_knots;
    double spatial_bandwidth = 1.0;
    double phi_w_lo = 0.0;  // support of random decays
    double phi_w_hi = 0.0;
    Eigen::VectorXd default_phi_w;

    [[nodiscard]] int n_wave() const { return static_cast<int>(Y.rows()); }
    [[nodiscard]] int n_records() const { return static_cast<int>(Y.cols()); }
    [[nodiscard]] int n_sites() const { return static_cast<int>(coords.rows()); }
    [[nodiscard]] int n_genera() const { return static_cast<int>(genus_records.size()); }
    [[nodiscard]] int n_cells() const { return static_cast<int>(cells.size()); }
    [[nodiscard]] int n_covariates() const { return static_cast<int>(X_site.cols()); }
    [[nodiscard]] int j_beta() const;
    [[nodiscard]] int j_gamma() const { return static_cast<int>(gamma_knots.size()); }
    [[nodiscard]] int j_eta() const;
    [[nodiscard]] int rank() const;
    [[nodiscard]] int n_spatial_knots() const { return static_cast<int>(spatial_knots.rows()); }

    [[nodiscard]] bool has_alpha_spatial() const { return config.intercept_mode == InterceptMode::genus_spatial; }
    [[nodiscard]] bool has_gamma() const { return config.gamma_mode != GammaMode::none; }
    [[nodiscard]] bool has_eta() const { return config.eta_variant != EtaVariant::none; }
    [[nodiscard]] bool has_factor_eta() const {
        return has_eta() && config.eta_variant != EtaVariant::spatial_convolution;
    }
    /// A is sampled (factor, spatial_only, separable, lmc).
    [[nodiscard]] bool samples_A() const;
    /// A is lower triangular with positive diagonal.
    [[nodiscard]] bool lower_triangular_A() const;

    [[nodiscard]] Eigen::MatrixXd kernel_beta(double theta) const;
    [[nodiscard]] Eigen::MatrixXd kernel_gamma(const Eigen::VectorXd& thetas) const;
    [[nodiscard]] Eigen::MatrixXd kernel_eta(double theta) const;
    [[nodiscard]] Eigen::VectorXd sigma2(const Eigen::VectorXd& beta_sigma) const;
    /// Decays actually used for w in `state` (sampled or fixed).
    [[nodiscard]] Eigen::VectorXd decays(const ChainState& state) const;
};

[[nodiscard]] ModelContext make_context(const SpectraDataset& ds, const DesignIndex& design,
                                        const ModelConfig& config);

/// Checks block dimensions against the context.
void check_state(const ChainState& state, const ModelContext& ctx);

/// Per-term contributions to the mean, each N_wave x N_rep.
struct TermSurfaces {
    Eigen::MatrixXd intercept;  // alpha_i + alpha_i(s)
    Eigen::MatrixXd regression; // x(s)' beta(t)
    Eigen::MatrixXd gamma;      // gamma(t) or gamma_i(t)
    Eigen::MatrixXd eta;        // eta(s, t)

    [[nodiscard]] Eigen::MatrixXd total() const { return intercept + regression + gamma + eta; }
};

[[nodiscard]] TermSurfaces term_surfaces(const ChainState& state, const ModelContext& ctx);

/// N_wave x N_rep mean; column k is the model mean of record k.
[[nodiscard]] Eigen::MatrixXd mean_surface(const ChainState& state, const ModelContext& ctx);

/// eta(s, t) at every site: N_wave x N_s.
[[nodiscard]] Eigen::MatrixXd eta_site_surface(const ChainState& state, const ModelContext& ctx);

/// Gaussian log-likelihood of the responses, summed record-major with compensated accumulation.
[[nodiscard]] double log_likelihood(const ChainState& state, const ModelContext& ctx);
[[nodiscard]] double log_likelihood(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& sigma2);
/// Contribution of each record.
[[nodiscard]] Eigen::VectorXd record_log_likelihood(const ChainState& state, const ModelContext& ctx);

/// -2 log_likelihood.
[[nodiscard]] double deviance(const ChainState& state, const ModelContext& ctx);

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    [[nodiscard]] double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace spacewave
