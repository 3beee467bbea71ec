#include "spacewave/likelihood.hpp"

#include "spacewave/error.hpp"
#include "spacewave/spatial.hpp"

#include <cmath>
#include <numbers>

namespace spacewave {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::validation, "chain state: " + what);
}

}  // namespace

void ChainState::validate() const {
    for (double v : {sigma2_alpha, sigma2_alpha_s, sigma2_beta, sigma2_gamma, sigma2_gamma_genus, sigma2_A,
                     sigma2_theta_gamma, theta_beta, theta_eta, phi_alpha}) {
        require(v > 0.0 && std::isfinite(v), "variances, bandwidths and decays must be positive");
    }
    require((theta_gamma.array() > 0.0).all(), "theta_gamma must be positive");
    require((phi_w.array() > 0.0).all(), "phi_w must be positive");
    bool finite = true;
    visit_blocks(*this, [&](const BlockRef& b) {
        for (Eigen::Index i = 0; i < b.rows * b.cols; ++i) finite = finite && std::isfinite(b.data[i]);
    });
    require(finite, "all entries must be finite");
}

int ModelContext::j_beta() const {
    return config.beta_mode == BetaMode::functional ? static_cast<int>(beta_knots.size()) : 1;
}

int ModelContext::j_eta() const {
    switch (config.eta_variant) {
    case EtaVariant::none:
    case EtaVariant::spatial_convolution: return 0;
    case EtaVariant::spatial_only: return 1;
    default: return static_cast<int>(eta_knots.size());
    }
}

int ModelContext::rank() const {
    switch (config.eta_variant) {
    case EtaVariant::none:
    case EtaVariant::spatial_convolution: return 0;
    case EtaVariant::spatial_only: return 1;
    case EtaVariant::factor: return config.rank;
    default: return static_cast<int>(eta_knots.size());
    }
}

bool ModelContext::samples_A() const {
    switch (config.eta_variant) {
    case EtaVariant::factor:
    case EtaVariant::spatial_only:
    case EtaVariant::separable:
    case EtaVariant::lmc: return true;
    default: return false;
    }
}

bool ModelContext::lower_triangular_A() const {
    return config.eta_variant == EtaVariant::separable || config.eta_variant == EtaVariant::lmc;
}

Eigen::MatrixXd ModelContext::kernel_beta(double theta) const {
    if (config.beta_mode == BetaMode::scalar) {
        return Eigen::MatrixXd::Ones(n_wave(), 1);
    }
    return design_matrix(grid, KernelBasis(beta_knots, theta, config.kernel_family));
}

Eigen::MatrixXd ModelContext::kernel_gamma(const Eigen::VectorXd& thetas) const {
    return design_matrix(grid, KernelBasis(gamma_knots, std::vector<double>(thetas.data(), thetas.data() + thetas.size()),
                                           config.kernel_family));
}

Eigen::MatrixXd ModelContext::kernel_eta(double theta) const {
    if (config.eta_variant == EtaVariant::spatial_only) {
        return Eigen::MatrixXd::Ones(n_wave(), 1);
    }
    return design_matrix(grid, KernelBasis(eta_knots, theta, config.kernel_family));
}

Eigen::VectorXd ModelContext::sigma2(const Eigen::VectorXd& beta_sigma) const {
    return (sigma_weights * beta_sigma).array().exp();
}

Eigen::VectorXd ModelContext::decays(const ChainState& state) const {
    return state.phi_w;
}

ModelContext make_context(const SpectraDataset& ds, const DesignIndex& design, const ModelConfig& config) {
    config.validate();
    ds.validate();
    ModelContext ctx;
    ctx.config = config;
    ctx.grid = ds.grid;
    ctx.units = ds.sites.units;
    ctx.Y = ds.responses;
    ctx.X_site = design.centered_X;
    ctx.X_rec = design.record_covariates();
    ctx.covariate_names = ds.sites.covariate_names;
    ctx.coords = ds.sites.coords;
    ctx.site_dist = distance_matrix(ctx.coords, ctx.units);
    ctx.rec_site = design.m_s;
    ctx.rec_cell = design.m_sg;
    ctx.cells = design.cells;
    ctx.genus_cells = design.genus_cells;
    const auto n_rep = static_cast<int>(ds.n_records());
    ctx.rec_genus.resize(n_rep);
    ctx.site_records.assign(ds.n_sites(), {});
    ctx.genus_records.assign(ds.n_genera(), {});
    ctx.cell_records.assign(design.cells.size(), {});
    for (int k = 0; k < n_rep; ++k) {
        const auto& r = ds.records[k];
        ctx.rec_genus[k] = r.genus;
        ctx.site_records[r.site].push_back(k);
        ctx.genus_records[r.genus].push_back(k);
        ctx.cell_records[design.m_sg[k]].push_back(k);
    }

    ctx.beta_knots = make_knot_grid(config.beta_knots.lo, config.beta_knots.hi, config.beta_knots.spacing);
    ctx.gamma_knots = make_knot_grid(config.gamma_knots.lo, config.gamma_knots.hi, config.gamma_knots.spacing);
    ctx.eta_knots = make_knot_grid(config.eta_knots.lo, config.eta_knots.hi, config.eta_knots.spacing);
    ctx.sigma_knots = make_knot_grid(config.sigma_knots.lo, config.sigma_knots.hi, config.sigma_knots.spacing);
    ctx.sigma_weights = VarianceBasis(ctx.sigma_knots).weights(ctx.grid);

    const auto jg = static_cast<Eigen::Index>(ctx.gamma_knots.size());
    ctx.R_gamma.resize(jg, jg);
    for (Eigen::Index a = 0; a < jg; ++a) {
        for (Eigen::Index b = 0; b < jg; ++b) {
            ctx.R_gamma(a, b) = std::exp(-config.phi_gamma * std::abs(ctx.gamma_knots[a] - ctx.gamma_knots[b]));
        }
    }
    ctx.R_gamma_inv = factorize(ctx.R_gamma, "log-bandwidth correlation").inverse();

    std::tie(ctx.phi_w_lo, ctx.phi_w_hi) = decay_range(ctx.site_dist);
    const int r = ctx.rank();
    if (r > 0) {
        const bool single = config.phi_w_mode == PhiWMode::fixed_single ||
                            config.phi_w_mode == PhiWMode::random_single ||
                            config.eta_variant == EtaVariant::separable;
        if (!config.phi_w.empty()) {
            if (config.phi_w.size() == 1) {
                ctx.default_phi_w = Eigen::VectorXd::Constant(r, config.phi_w[0]);
            } else if (static_cast<int>(config.phi_w.size()) == r && !single) {
                ctx.default_phi_w = Eigen::Map<const Eigen::VectorXd>(config.phi_w.data(), r);
            } else {
                throw Error(ErrorKind::validation, "phi_w: expected 1 or " + std::to_string(r) + " decays");
            }
        } else {
            ctx.default_phi_w = default_decays(ctx.site_dist, r, single);
        }
        if (config.phi_w_mode == PhiWMode::random_single || config.phi_w_mode == PhiWMode::random_sequence) {
            ctx.phi_w_lo = std::min(ctx.phi_w_lo, ctx.default_phi_w.minCoeff() * 0.5);
            ctx.phi_w_hi = std::max(ctx.phi_w_hi, ctx.default_phi_w.maxCoeff() * 2.0);
        }
    }

    if (config.eta_variant == EtaVariant::spatial_convolution) {
        const int g = config.spatial_knots_per_side;
        const Eigen::Vector2d lo = ctx.coords.colwise().minCoeff();
        const Eigen::Vector2d hi = ctx.coords.colwise().maxCoeff();
        ctx.spatial_knots.resize(g * g, 2);
        for (int a = 0; a < g; ++a) {
            for (int b = 0; b < g; ++b) {
                const double fx = g == 1 ? 0.5 : a / static_cast<double>(g - 1);
                const double fy = g == 1 ? 0.5 : b / static_cast<double>(g - 1);
                ctx.spatial_knots(a * g + b, 0) = lo(0) + fx * (hi(0) - lo(0));
                ctx.spatial_knots(a * g + b, 1) = lo(1) + fy * (hi(1) - lo(1));
            }
        }
        double spacing = 0.0;
        if (g > 1) {
            spacing = std::max(site_distance(ctx.spatial_knots.row(0).transpose(), ctx.spatial_knots.row(g).transpose(), ctx.units),
                               site_distance(ctx.spatial_knots.row(0).transpose(), ctx.spatial_knots.row(1).transpose(), ctx.units));
        } else {
            spacing = site_distance(lo, hi, ctx.units);
        }
        ctx.spatial_bandwidth = spacing > 0.0 ? spacing : 1.0;
        const Eigen::MatrixXd d = cross_distance(ctx.coords, ctx.spatial_knots, ctx.units);
        ctx.spatial_kernel = (-0.5 * (d.array() / ctx.spatial_bandwidth).square()).exp().matrix();
    }
    return ctx;
}

void check_state(const ChainState& s, const ModelContext& ctx) {
    auto dims = [](const char* name, Eigen::Index rows, Eigen::Index cols, Eigen::Index er, Eigen::Index ec) {
        if (rows != er || cols != ec) {
            throw Error(ErrorKind::validation, std::string("chain state block ") + name + " has shape " +
                                                   std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                                                   std::to_string(er) + "x" + std::to_string(ec));
        }
    };
    dims("alpha_genus", s.alpha_genus.size(), 1, ctx.n_genera(), 1);
    dims("alpha_spatial", s.alpha_spatial.size(), 1, ctx.n_cells(), 1);
    dims("B", s.B.rows(), s.B.cols(), ctx.n_covariates(), ctx.j_beta());
    dims("gamma_star", s.gamma_star.size(), 1, ctx.j_gamma(), 1);
    dims("gamma_genus", s.gamma_genus.rows(), s.gamma_genus.cols(), ctx.j_gamma(), ctx.n_genera());
    dims("theta_gamma", s.theta_gamma.size(), 1, ctx.j_gamma(), 1);
    dims("A", s.A.rows(), s.A.cols(), ctx.j_eta(), ctx.rank());
    dims("w", s.w.rows(), s.w.cols(), ctx.n_sites(), ctx.rank());
    dims("z_wave", s.z_wave.rows(), s.z_wave.cols(), ctx.n_spatial_knots(),
         ctx.n_spatial_knots() > 0 ? ctx.n_wave() : 0);
    dims("phi_w", s.phi_w.size(), 1, ctx.rank(), 1);
    dims("beta_sigma", s.beta_sigma.size(), 1, static_cast<Eigen::Index>(ctx.sigma_knots.size()), 1);
}

Eigen::MatrixXd eta_site_surface(const ChainState& state, const ModelContext& ctx) {
    if (!ctx.has_eta()) {
        return Eigen::MatrixXd::Zero(ctx.n_wave(), ctx.n_sites());
    }
    if (ctx.config.eta_variant == EtaVariant::spatial_convolution) {
        return state.z_wave.transpose() * ctx.spatial_kernel.transpose();
    }
    const Eigen::MatrixXd KA = ctx.kernel_eta(state.theta_eta) * state.A;
    return KA * state.w.transpose();
}

TermSurfaces term_surfaces(const ChainState& state, const ModelContext& ctx) {
    check_state(state, ctx);
    const int n_wave = ctx.n_wave();
    const int n_rep = ctx.n_records();
    TermSurfaces t;
    t.intercept.resize(n_wave, n_rep);
    for (int k = 0; k < n_rep; ++k) {
        double level = state.alpha_genus(ctx.rec_genus[k]);
        if (ctx.has_alpha_spatial()) level += state.alpha_spatial(ctx.rec_cell[k]);
        t.intercept.col(k).setConstant(level);
    }
    if (ctx.n_covariates() > 0) {
        const Eigen::MatrixXd KB = ctx.kernel_beta(state.theta_beta) * state.B.transpose();  // N_wave x p
        t.regression = KB * ctx.X_rec.transpose();
    } else {
        t.regression = Eigen::MatrixXd::Zero(n_wave, n_rep);
    }
    t.gamma = Eigen::MatrixXd::Zero(n_wave, n_rep);
    if (ctx.has_gamma()) {
        const Eigen::MatrixXd Kg = ctx.kernel_gamma(state.theta_gamma);
        if (ctx.config.gamma_mode == GammaMode::global) {
            const Eigen::VectorXd g = Kg * state.gamma_star;
            t.gamma.colwise() = g;
        } else {
            const Eigen::MatrixXd g = Kg * state.gamma_genus;
            for (int k = 0; k < n_rep; ++k) t.gamma.col(k) = g.col(ctx.rec_genus[k]);
        }
    }
    t.eta = Eigen::MatrixXd::Zero(n_wave, n_rep);
    if (ctx.has_eta()) {
        const Eigen::MatrixXd e = eta_site_surface(state, ctx);
        for (int k = 0; k < n_rep; ++k) t.eta.col(k) = e.col(ctx.rec_site[k]);
    }
    return t;
}

Eigen::MatrixXd mean_surface(const ChainState& state, const ModelContext& ctx) {
    return term_surfaces(state, ctx).total();
}

double log_likelihood(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& sigma2) {
    const Eigen::ArrayXd log_s2 = sigma2.array().log();
    const Eigen::ArrayXd inv_s2 = sigma2.array().inverse();
    CompensatedSum total;
    for (Eigen::Index k = 0; k < residuals.cols(); ++k) {
        for (Eigen::Index m = 0; m < residuals.rows(); ++m) {
            const double r = residuals(m, k);
            total.add(-0.5 * (kLog2Pi + log_s2(m) + r * r * inv_s2(m)));
        }
    }
    return total.value();
}

double log_likelihood(const ChainState& state, const ModelContext& ctx) {
    return log_likelihood(ctx.Y - mean_surface(state, ctx), ctx.sigma2(state.beta_sigma));
}

Eigen::VectorXd record_log_likelihood(const ChainState& state, const ModelContext& ctx) {
    const Eigen::MatrixXd r = ctx.Y - mean_surface(state, ctx);
    const Eigen::VectorXd s2 = ctx.sigma2(state.beta_sigma);
    Eigen::VectorXd out(r.cols());
    for (Eigen::Index k = 0; k < r.cols(); ++k) {
        out(k) = log_likelihood(r.col(k), s2);
    }
    return out;
}

double deviance(const ChainState& state, const ModelContext& ctx) {
    return -2.0 * log_likelihood(state, ctx);
}

}  // namespace spacewave
