#pragma once

#include "spacewave/config.hpp"
#include "spacewave/data_model.hpp"
#include "spacewave/likelihood.hpp"
#include "spacewave/rng.hpp"
#include "spacewave/sampler.hpp"
#include "spacewave/spatial.hpp"
#include "spacewave/synth.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fixtures {

using namespace spacewave;

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("spacewave_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    os << text;
}

struct RecordSpec {
    int site;
    int genus;
};

/// Planar dataset with the given layout; responses are standard normal draws.
inline SpectraDataset make_dataset(const Eigen::MatrixX2d& coords, const Eigen::MatrixXd& covariates,
                                   int n_genera, const std::vector<RecordSpec>& recs, const WavelengthGrid& grid,
                                   std::uint64_t seed = 1) {
    SpectraDataset ds;
    ds.grid = grid;
    ds.sites.units = CoordinateSystem::planar;
    ds.sites.coords = coords;
    ds.sites.covariates = covariates;
    for (Eigen::Index s = 0; s < coords.rows(); ++s) ds.sites.ids.push_back("S" + std::to_string(s + 1));
    for (Eigen::Index j = 0; j < covariates.cols(); ++j) ds.sites.covariate_names.push_back("x" + std::to_string(j + 1));
    for (int g = 0; g < n_genera; ++g) ds.genus_ids.push_back("G" + std::to_string(g + 1));
    std::vector<int> reps(coords.rows() * n_genera, 0);
    for (const auto& r : recs) {
        const int n = ++reps[r.site * n_genera + r.genus];
        ds.records.push_back({r.site, r.genus, "r" + std::to_string(n)});
    }
    Rng rng(seed);
    ds.responses.resize(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(recs.size()));
    for (Eigen::Index i = 0; i < ds.responses.size(); ++i) ds.responses.data()[i] = draw_normal(rng);
    ds.validate();
    return ds;
}

/// A compact knot spec: lo..hi with `count` knots.
inline KnotSpec knots(double lo, double hi, int count) { return KnotSpec{lo, hi, (hi - lo) / (count - 1)}; }

/// Small structural config whose Gaussian blocks stay within 20 dimensions.
inline ModelConfig small_config(EtaVariant eta = EtaVariant::factor, int rank = 2) {
    ModelConfig c;
    c.intercept_mode = InterceptMode::genus_spatial;
    c.gamma_mode = GammaMode::global;
    c.beta_mode = BetaMode::functional;
    c.eta_variant = eta;
    c.rank = rank;
    c.beta_knots = knots(437.5, 962.5, 4);
    c.gamma_knots = knots(437.5, 962.5, 4);
    c.eta_knots = knots(437.5, 962.5, 4);
    c.sigma_knots = KnotSpec{440.0, 960.0, 130.0};
    c.spatial_knots_per_side = 2;
    c.mcmc.n_iter = 200;
    c.mcmc.n_burn = 100;
    c.mcmc.n_keep = 50;
    return c;
}

/// Simulated data for a config: 6 planar sites, 3 genera, 8 wavelengths.
struct Fit {
    SpectraDataset ds;
    DesignIndex design;
    ModelContext ctx;
    ChainState truth;
};

inline Fit simulate_fit(const ModelConfig& config, std::uint64_t seed = 11, int n_sites = 6, int n_genera = 3,
                        std::size_t n_wave = 8, int max_rep = 2) {
    SynthSpec spec;
    spec.n_sites = n_sites;
    spec.n_genera = n_genera;
    spec.grid = WavelengthGrid::linspace(450.0, 950.0, n_wave);
    spec.n_covariates = 2;
    spec.min_replicates = 1;
    spec.max_replicates = max_rep;
    spec.presence = 0.7;
    spec.config = config;
    spec.hyper.noise_level = 0.05;
    Rng rng(seed);
    SynthResult r = simulate(spec, rng);
    Fit f{std::move(r.data), {}, {}, std::move(r.truth)};
    f.design = build_design(f.ds);
    f.ctx = make_context(f.ds, f.design, config);
    return f;
}

/// Random state: every block filled with moderate values so conditionals are exercised away from zero.
inline ChainState random_state(const ModelContext& ctx, std::uint64_t seed) {
    Rng rng(seed);
    ChainState s = zero_state(ctx);
    visit_blocks(s, [&](BlockRef b) {
        for (Eigen::Index i = 0; i < b.rows * b.cols; ++i) b.data[i] = 0.3 * draw_normal(rng);
    });
    auto pos = [&](double lo, double hi) { return lo + (hi - lo) * draw_uniform(rng); };
    s.sigma2_alpha = pos(0.05, 0.5);
    s.sigma2_alpha_s = pos(0.2, 1.0);
    s.sigma2_beta = pos(0.2, 1.0);
    s.sigma2_gamma = pos(0.2, 1.0);
    s.sigma2_gamma_genus = pos(0.2, 1.0);
    s.sigma2_A = pos(0.2, 1.0);
    s.sigma2_theta_gamma = pos(0.2, 1.0);
    s.theta_beta = pos(60.0, 150.0);
    s.theta_eta = pos(60.0, 150.0);
    s.phi_alpha = pos(0.02, 0.2);
    for (Eigen::Index j = 0; j < s.theta_gamma.size(); ++j) s.theta_gamma(j) = pos(60.0, 150.0);
    s.mu_theta_gamma = pos(3.0, 5.0);
    if (ctx.rank() > 0) s.phi_w = ctx.default_phi_w;
    s.beta_sigma.array() = std::log(0.05) + 0.2 * s.beta_sigma.array();
    if (ctx.config.eta_variant == EtaVariant::independent) s.A = Eigen::MatrixXd::Identity(ctx.j_eta(), ctx.rank());
    if (ctx.lower_triangular_A()) {
        for (Eigen::Index k = 0; k < s.A.cols(); ++k) {
            for (Eigen::Index j = 0; j < std::min(k, s.A.rows()); ++j) s.A(j, k) = 0.0;
            s.A(k, k) = std::abs(s.A(k, k)) + 0.05;
        }
    }
    return s;
}

// ---------------------------------------------------------------- independent model evaluation

/// Model mean for every record written directly from the model formula, one entry at a time.
inline Eigen::MatrixXd oracle_mean(const ChainState& s, const ModelContext& ctx) {
    const int n_wave = ctx.n_wave();
    const int p = ctx.n_covariates();
    const Eigen::MatrixXd Kb = p > 0 ? ctx.kernel_beta(s.theta_beta) : Eigen::MatrixXd(n_wave, 0);
    const Eigen::MatrixXd Kg = ctx.has_gamma() ? ctx.kernel_gamma(s.theta_gamma) : Eigen::MatrixXd(n_wave, 0);
    const Eigen::MatrixXd Ke = ctx.has_factor_eta() ? ctx.kernel_eta(s.theta_eta) : Eigen::MatrixXd(n_wave, 0);
    Eigen::MatrixXd out(n_wave, ctx.n_records());
    for (int k = 0; k < ctx.n_records(); ++k) {
        const int site = ctx.rec_site[k];
        const int genus = ctx.rec_genus[k];
        for (int m = 0; m < n_wave; ++m) {
            double v = s.alpha_genus(genus);
            if (ctx.has_alpha_spatial()) v += s.alpha_spatial(ctx.rec_cell[k]);
            for (int c = 0; c < p; ++c) {
                for (Eigen::Index j = 0; j < Kb.cols(); ++j) v += ctx.X_rec(k, c) * Kb(m, j) * s.B(c, j);
            }
            for (Eigen::Index j = 0; j < Kg.cols(); ++j) {
                v += Kg(m, j) * (ctx.config.gamma_mode == GammaMode::per_genus ? s.gamma_genus(j, genus)
                                                                               : s.gamma_star(j));
            }
            for (Eigen::Index j = 0; j < Ke.cols(); ++j) {
                for (Eigen::Index l = 0; l < s.A.cols(); ++l) v += Ke(m, j) * s.A(j, l) * s.w(site, l);
            }
            if (ctx.config.eta_variant == EtaVariant::spatial_convolution) {
                for (int l = 0; l < ctx.n_spatial_knots(); ++l) v += ctx.spatial_kernel(site, l) * s.z_wave(l, m);
            }
            out(m, k) = v;
        }
    }
    return out;
}

inline double normal_logpdf(double x, double mean, double var) {
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + (x - mean) * (x - mean) / var);
}

inline double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    const Eigen::LDLT<Eigen::MatrixXd> f(cov);
    const Eigen::VectorXd d = x - mean;
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) +
                   f.vectorD().array().log().sum() + d.dot(f.solve(d)));
}

inline double inv_gamma_logpdf(double x, const InvGammaPrior& p) {
    return p.shape * std::log(p.scale) - std::lgamma(p.shape) - (p.shape + 1.0) * std::log(x) - p.scale / x;
}

inline double gamma_logpdf(double x, const GammaPrior& p) {
    return p.shape * std::log(p.rate) - std::lgamma(p.shape) + (p.shape - 1.0) * std::log(x) - p.rate * x;
}

inline Eigen::MatrixXd cell_distances(const ModelContext& ctx, int genus) {
    const auto& cells = ctx.genus_cells[genus];
    Eigen::MatrixXd d(cells.size(), cells.size());
    for (std::size_t a = 0; a < cells.size(); ++a) {
        for (std::size_t b = 0; b < cells.size(); ++b) {
            d(a, b) = ctx.site_dist(ctx.cells[cells[a]].site, ctx.cells[cells[b]].site);
        }
    }
    return d;
}

inline Eigen::MatrixXd exp_corr(const Eigen::MatrixXd& d, double phi) { return (-phi * d.array()).exp().matrix(); }

/// Data log-likelihood summed naively in long double.
inline double oracle_loglik(const ChainState& s, const ModelContext& ctx) {
    const Eigen::MatrixXd mu = oracle_mean(s, ctx);
    const Eigen::VectorXd s2 = (ctx.sigma_weights * s.beta_sigma).array().exp();
    long double total = 0.0L;
    for (int k = 0; k < ctx.n_records(); ++k) {
        for (int m = 0; m < ctx.n_wave(); ++m) {
            const long double r = static_cast<long double>(ctx.Y(m, k)) - mu(m, k);
            total += -0.5L * (std::log(2.0L * std::numbers::pi_v<long double>) + std::log((long double)s2(m)) +
                              r * r / s2(m));
        }
    }
    return static_cast<double>(total);
}

/// Unnormalized log joint density of the data and every active block, on the sampled scale.
inline double oracle_log_joint(const ChainState& s, const ModelContext& ctx) {
    const PriorConfig& pr = ctx.config.priors;
    double t = oracle_loglik(s, ctx);
    t += normal_logpdf(s.alpha, pr.alpha.mean, pr.alpha.var);
    for (int g = 0; g < ctx.n_genera(); ++g) t += normal_logpdf(s.alpha_genus(g), s.alpha, s.sigma2_alpha);
    t += inv_gamma_logpdf(s.sigma2_alpha, pr.sigma2_alpha);
    if (ctx.has_alpha_spatial()) {
        for (int g = 0; g < ctx.n_genera(); ++g) {
            const auto& cells = ctx.genus_cells[g];
            if (cells.empty()) continue;
            Eigen::VectorXd a(cells.size());
            for (std::size_t c = 0; c < cells.size(); ++c) a(c) = s.alpha_spatial(cells[c]);
            t += mvn_logpdf(a, Eigen::VectorXd::Zero(a.size()),
                            s.sigma2_alpha_s * exp_corr(cell_distances(ctx, g), s.phi_alpha));
        }
        t += inv_gamma_logpdf(s.sigma2_alpha_s, pr.sigma2_alpha_s);
    }
    if (ctx.n_covariates() > 0) {
        for (Eigen::Index i = 0; i < s.B.size(); ++i) t += normal_logpdf(s.B.data()[i], 0.0, s.sigma2_beta);
        t += inv_gamma_logpdf(s.sigma2_beta, pr.sigma2_beta);
        if (ctx.config.beta_mode == BetaMode::functional) t += gamma_logpdf(s.theta_beta, pr.theta_beta);
    }
    if (ctx.has_gamma()) {
        const int J = ctx.j_gamma();
        for (int j = 0; j < J; ++j) t += normal_logpdf(s.gamma_star(j), 0.0, s.sigma2_gamma);
        t += inv_gamma_logpdf(s.sigma2_gamma, pr.sigma2_gamma);
        if (ctx.config.gamma_mode == GammaMode::per_genus) {
            for (int g = 0; g < ctx.n_genera(); ++g) {
                for (int j = 0; j < J; ++j) t += normal_logpdf(s.gamma_genus(j, g), s.gamma_star(j), s.sigma2_gamma_genus);
            }
            t += inv_gamma_logpdf(s.sigma2_gamma_genus, pr.sigma2_gamma_genus);
        }
        const Eigen::VectorXd u = s.theta_gamma.array().log();
        t += mvn_logpdf(u, Eigen::VectorXd::Constant(J, s.mu_theta_gamma), s.sigma2_theta_gamma * ctx.R_gamma);
        t += normal_logpdf(s.mu_theta_gamma, pr.mu_theta_gamma.mean, pr.mu_theta_gamma.var);
        t += inv_gamma_logpdf(s.sigma2_theta_gamma, pr.sigma2_theta_gamma);
    }
    if (ctx.has_factor_eta()) {
        for (int j = 0; j < ctx.rank(); ++j) {
            t += mvn_logpdf(s.w.col(j), Eigen::VectorXd::Zero(ctx.n_sites()), exp_corr(ctx.site_dist, s.phi_w(j)));
        }
        if (ctx.samples_A()) {
            for (Eigen::Index k = 0; k < s.A.cols(); ++k) {
                for (Eigen::Index j = ctx.lower_triangular_A() ? k : 0; j < s.A.rows(); ++j) {
                    t += normal_logpdf(s.A(j, k), 0.0, s.sigma2_A);
                }
            }
            t += inv_gamma_logpdf(s.sigma2_A, pr.sigma2_A);
        }
        if (ctx.config.eta_variant != EtaVariant::spatial_only) t += gamma_logpdf(s.theta_eta, pr.theta_eta);
    }
    if (ctx.config.eta_variant == EtaVariant::spatial_convolution) {
        for (Eigen::Index i = 0; i < s.z_wave.size(); ++i) t += normal_logpdf(s.z_wave.data()[i], 0.0, s.sigma2_A);
        t += inv_gamma_logpdf(s.sigma2_A, pr.sigma2_A);
    }
    for (Eigen::Index k = 0; k < s.beta_sigma.size(); ++k) t += normal_logpdf(s.beta_sigma(k), 0.0, pr.beta_sigma_var);
    return t;
}

// ---------------------------------------------------------------- dense Gaussian posteriors

/// Posterior of x under y ~ N(D x, Sigma) and x ~ N(m0, S0), by dense normal equations.
inline Gaussian dense_posterior(const Eigen::MatrixXd& D, const Eigen::VectorXd& y, const Eigen::MatrixXd& Sigma,
                                const Eigen::VectorXd& m0, const Eigen::MatrixXd& S0) {
    const Eigen::MatrixXd S0_inv = S0.inverse();
    const Eigen::MatrixXd Dw = Sigma.inverse() * D;
    const Eigen::MatrixXd Q = S0_inv + D.transpose() * Dw;
    Gaussian g;
    g.cov = Q.inverse();
    g.cov = 0.5 * (g.cov + g.cov.transpose()).eval();
    g.mean = g.cov * (S0_inv * m0 + Dw.transpose() * y);
    return g;
}

inline Gaussian dense_posterior_diag(const Eigen::MatrixXd& D, const Eigen::VectorXd& y, const Eigen::VectorXd& noise,
                                     const Eigen::VectorXd& m0, const Eigen::MatrixXd& S0) {
    return dense_posterior(D, y, Eigen::MatrixXd(noise.asDiagonal()), m0, S0);
}

/// Likelihood part of a block that enters the mean linearly: D with one column per unit
/// perturbation of the block and the data with the block's contribution removed.
struct LinearData {
    Eigen::MatrixXd D;
    Eigen::VectorXd y;
    Eigen::VectorXd noise;
};

inline LinearData linear_data(const ChainState& s, const ModelContext& ctx, int dim,
                              const std::function<void(ChainState&, const Eigen::VectorXd&)>& set) {
    ChainState base = s;
    set(base, Eigen::VectorXd::Zero(dim));
    const Eigen::MatrixXd mu0 = oracle_mean(base, ctx);
    const Eigen::Index n = mu0.size();
    LinearData out;
    out.D.resize(n, dim);
    for (int i = 0; i < dim; ++i) {
        ChainState e = base;
        set(e, Eigen::VectorXd::Unit(dim, i));
        const Eigen::MatrixXd mu = oracle_mean(e, ctx) - mu0;
        out.D.col(i) = Eigen::Map<const Eigen::VectorXd>(mu.data(), n);
    }
    const Eigen::MatrixXd r = ctx.Y - mu0;
    out.y = Eigen::Map<const Eigen::VectorXd>(r.data(), n);
    const Eigen::VectorXd s2 = (ctx.sigma_weights * s.beta_sigma).array().exp();
    out.noise = s2.replicate(ctx.n_records(), 1);
    return out;
}

// ---------------------------------------------------------------- distribution checks

/// Two-sided one-sample Kolmogorov-Smirnov p-value (asymptotic with the Stephens correction).
inline double ks_pvalue(std::vector<double> x, const std::function<double(double)>& cdf) {
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = cdf(x[i]);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
    }
    const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
        p += term;
        if (std::abs(term) < 1e-16) break;
    }
    return std::clamp(p, 0.0, 1.0);
}

inline double normal_cdf(double x, double mean, double var) {
    return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * var));
}

}  // namespace fixtures
