#include "spacewave/sampler.hpp"

#include "spacewave/error.hpp"

#include <boost/math/distributions/gamma.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace spacewave {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double logit_jacobian(double x, double lo, double hi) { return std::log(x - lo) + std::log(hi - x); }

double to_logit(double x, double lo, double hi) {
    const double p = (x - lo) / (hi - lo);
    return std::log(p) - std::log1p(-p);
}

double from_logit(double u, double lo, double hi) { return lo + (hi - lo) / (1.0 + std::exp(-u)); }

double gamma_median(const GammaPrior& p) {
    return boost::math::median(boost::math::gamma_distribution<double>(p.shape, 1.0 / p.rate));
}

// Trailing principal block starting at `from`.
Eigen::MatrixXd sub_matrix(const Eigen::MatrixXd& m, Eigen::Index from) {
    const Eigen::Index n = m.rows() - from;
    return m.block(from, from, n, n);
}

}  // namespace

Gaussian Canonical::moments(const std::string& what) const {
    const JitteredCholesky f = factorize(precision, what);
    Gaussian g;
    g.cov = f.inverse();
    g.mean = f.solve(linear);
    return g;
}

double InvGammaConditional::log_density(double x) const {
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

std::string to_string(MhBlock b) {
    switch (b) {
    case MhBlock::phi_alpha: return "phi_alpha";
    case MhBlock::theta_beta: return "theta_beta";
    case MhBlock::theta_gamma: return "theta_gamma";
    case MhBlock::theta_eta: return "theta_eta";
    case MhBlock::beta_sigma: return "beta_sigma";
    case MhBlock::phi_w: return "phi_w";
    }
    return "?";
}

const std::vector<MhBlock>& mh_blocks() {
    static const std::vector<MhBlock> all{MhBlock::phi_alpha, MhBlock::theta_beta, MhBlock::theta_gamma,
                                          MhBlock::beta_sigma, MhBlock::theta_eta, MhBlock::phi_w};
    return all;
}

ChainState zero_state(const ModelContext& ctx) {
    ChainState s;
    s.alpha_genus = Eigen::VectorXd::Zero(ctx.n_genera());
    s.alpha_spatial = Eigen::VectorXd::Zero(ctx.n_cells());
    s.B = Eigen::MatrixXd::Zero(ctx.n_covariates(), ctx.j_beta());
    s.gamma_star = Eigen::VectorXd::Zero(ctx.j_gamma());
    s.gamma_genus = Eigen::MatrixXd::Zero(ctx.j_gamma(), ctx.n_genera());
    s.theta_gamma = Eigen::VectorXd::Constant(ctx.j_gamma(), 20.0);
    s.A = Eigen::MatrixXd::Zero(ctx.j_eta(), ctx.rank());
    s.w = Eigen::MatrixXd::Zero(ctx.n_sites(), ctx.rank());
    s.z_wave = Eigen::MatrixXd::Zero(ctx.n_spatial_knots(), ctx.n_spatial_knots() > 0 ? ctx.n_wave() : 0);
    s.phi_w = ctx.rank() > 0 ? ctx.default_phi_w : Eigen::VectorXd();
    s.beta_sigma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ctx.sigma_knots.size()));
    return s;
}

ChainState initial_state(const ModelContext& ctx, Rng& rng) {
    const PriorConfig& pr = ctx.config.priors;
    ChainState s = zero_state(ctx);
    s.alpha = ctx.Y.mean();
    s.alpha_genus.setConstant(s.alpha);
    s.theta_gamma.setConstant(std::exp(pr.mu_theta_gamma.mean));
    s.theta_beta = gamma_median(pr.theta_beta);
    s.theta_eta = gamma_median(pr.theta_eta);
    s.mu_theta_gamma = pr.mu_theta_gamma.mean;
    s.phi_alpha = std::sqrt(pr.phi_alpha_lo * pr.phi_alpha_hi);
    auto ig_mean = [](const InvGammaPrior& p) { return p.shape > 1.0 ? p.scale / (p.shape - 1.0) : p.scale; };
    s.sigma2_alpha = ig_mean(pr.sigma2_alpha);
    s.sigma2_alpha_s = ig_mean(pr.sigma2_alpha_s);
    s.sigma2_beta = ig_mean(pr.sigma2_beta);
    s.sigma2_gamma = ig_mean(pr.sigma2_gamma);
    s.sigma2_gamma_genus = ig_mean(pr.sigma2_gamma_genus);
    s.sigma2_A = ig_mean(pr.sigma2_A);
    s.sigma2_theta_gamma = ig_mean(pr.sigma2_theta_gamma);

    if (ctx.config.eta_variant == EtaVariant::independent) {
        s.A = Eigen::MatrixXd::Identity(ctx.j_eta(), ctx.rank());
    } else if (ctx.samples_A()) {
        for (Eigen::Index k = 0; k < s.A.cols(); ++k) {
            for (Eigen::Index j = 0; j < s.A.rows(); ++j) {
                const double v = 0.1 * draw_normal(rng);
                if (!ctx.lower_triangular_A()) {
                    s.A(j, k) = v;
                } else if (j == k) {
                    s.A(j, k) = std::abs(v);
                } else if (j > k) {
                    s.A(j, k) = v;
                }
            }
        }
    }

    // log of the variance pooled over genus-by-wavelength means
    const int n_rep = ctx.n_records();
    const int n_g = ctx.n_genera();
    double ss = 0.0;
    for (int g = 0; g < n_g; ++g) {
        const auto& recs = ctx.genus_records[g];
        if (recs.empty()) continue;
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(ctx.n_wave());
        for (int k : recs) mean += ctx.Y.col(k);
        mean /= static_cast<double>(recs.size());
        for (int k : recs) ss += (ctx.Y.col(k) - mean).squaredNorm();
    }
    double pooled = 0.0;
    if (n_rep > n_g) {
        pooled = ss / (static_cast<double>(n_rep - n_g) * ctx.n_wave());
    }
    if (!(pooled > 0.0)) {
        const double mu = ctx.Y.mean();
        pooled = (ctx.Y.array() - mu).square().mean();
    }
    if (!(pooled > 0.0)) pooled = 1e-2;
    s.beta_sigma.setConstant(std::log(pooled));
    check_state(s, ctx);
    return s;
}

GibbsSampler::GibbsSampler(const ModelContext& ctx, ChainState state, Rng rng)
    : ctx_(ctx), s_(std::move(state)), rng_(rng) {
    check_state(s_, ctx_);
    s_.validate();
    site_counts_.resize(ctx_.n_sites());
    for (int s = 0; s < ctx_.n_sites(); ++s) site_counts_[s] = static_cast<int>(ctx_.site_records[s].size());
    Eigen::VectorXd n = Eigen::Map<const Eigen::VectorXi>(site_counts_.data(), ctx_.n_sites()).cast<double>();
    XtX_ = ctx_.X_site.transpose() * n.asDiagonal() * ctx_.X_site;
    genus_dist_.resize(ctx_.n_genera());
    for (int g = 0; g < ctx_.n_genera(); ++g) {
        const auto& cells = ctx_.genus_cells[g];
        Eigen::MatrixXd d(cells.size(), cells.size());
        for (std::size_t a = 0; a < cells.size(); ++a) {
            for (std::size_t b = 0; b < cells.size(); ++b) {
                d(a, b) = ctx_.site_dist(ctx_.cells[cells[a]].site, ctx_.cells[cells[b]].site);
            }
        }
        genus_dist_[g] = d;
    }
    const McmcConfig& mc = ctx_.config.mcmc;
    adapt_.steps["phi_alpha"] = Eigen::VectorXd::Constant(1, mc.step.phi_alpha);
    adapt_.steps["theta_beta"] = Eigen::VectorXd::Constant(1, mc.step.theta_beta);
    adapt_.steps["theta_beta_collapsed"] = Eigen::VectorXd::Constant(1, mc.step.theta_beta);
    adapt_.steps["theta_gamma"] = Eigen::VectorXd::Constant(ctx_.j_gamma(), mc.step.theta_gamma);
    adapt_.steps["theta_eta"] = Eigen::VectorXd::Constant(1, mc.step.theta_eta);
    adapt_.steps["beta_sigma"] = Eigen::VectorXd::Constant(s_.beta_sigma.size(), mc.step.beta_sigma);
    adapt_.steps["phi_w"] = Eigen::VectorXd::Constant(std::max(1, ctx_.rank()), mc.step.phi_w);
    refresh();
}

void GibbsSampler::set_state(ChainState state) {
    check_state(state, ctx_);
    state.validate();
    s_ = std::move(state);
    refresh();
}

bool GibbsSampler::block_active(const std::string& name) const {
    if (ctx_.config.is_frozen(name)) return false;
    if (name == "alpha_spatial" || name == "sigma2_alpha_s" || name == "phi_alpha") {
        return ctx_.has_alpha_spatial() && ctx_.n_cells() > 0;
    }
    if (name == "B" || name == "sigma2_beta") return ctx_.n_covariates() > 0;
    if (name == "theta_beta") return ctx_.n_covariates() > 0 && ctx_.config.beta_mode == BetaMode::functional;
    if (name == "gamma" || name == "sigma2_gamma" || name == "mu_theta_gamma" || name == "sigma2_theta_gamma" ||
        name == "theta_gamma") {
        return ctx_.has_gamma();
    }
    if (name == "sigma2_gamma_genus") return ctx_.config.gamma_mode == GammaMode::per_genus;
    if (name == "w") return ctx_.has_eta();
    if (name == "A") return ctx_.samples_A();
    if (name == "sigma2_A") return ctx_.samples_A() || ctx_.config.eta_variant == EtaVariant::spatial_convolution;
    if (name == "theta_eta") {
        return ctx_.has_factor_eta() && ctx_.config.eta_variant != EtaVariant::spatial_only;
    }
    if (name == "phi_w") {
        return ctx_.has_factor_eta() && (ctx_.config.phi_w_mode == PhiWMode::random_single ||
                                         ctx_.config.phi_w_mode == PhiWMode::random_sequence);
    }
    return true;
}

bool GibbsSampler::mh_active(MhBlock block) const { return block_active(to_string(block)); }

void GibbsSampler::rebuild_sigma2() {
    sigma2_ = ctx_.sigma2(s_.beta_sigma);
    inv_s2_ = sigma2_.cwiseInverse();
}

void GibbsSampler::rebuild_alpha_corr() {
    alpha_corr_inv_.assign(ctx_.n_genera(), Eigen::MatrixXd());
    if (!ctx_.has_alpha_spatial()) return;
    for (int g = 0; g < ctx_.n_genera(); ++g) {
        if (genus_dist_[g].rows() == 0) continue;
        alpha_corr_inv_[g] = factorize(exp_corr_matrix(genus_dist_[g], s_.phi_alpha), "alpha_spatial correlation").inverse();
    }
}

void GibbsSampler::rebuild_w_precision() {
    w_precision_.clear();
    if (!ctx_.has_factor_eta()) return;
    for (int j = 0; j < ctx_.rank(); ++j) {
        w_precision_.push_back(factorize(exp_corr_matrix(ctx_.site_dist, s_.phi_w(j)), "w correlation").inverse());
    }
}

void GibbsSampler::refresh() {
    const int n_wave = ctx_.n_wave();
    rebuild_sigma2();
    rebuild_alpha_corr();
    rebuild_w_precision();
    if (ctx_.n_covariates() > 0) {
        Kb_ = ctx_.kernel_beta(s_.theta_beta);
        reg_site_ = (Kb_ * s_.B.transpose()) * ctx_.X_site.transpose();
    } else {
        Kb_.resize(n_wave, 0);
        reg_site_ = Eigen::MatrixXd::Zero(n_wave, ctx_.n_sites());
    }
    gamma_genus_ = Eigen::MatrixXd::Zero(n_wave, ctx_.n_genera());
    if (ctx_.has_gamma()) {
        Kg_ = ctx_.kernel_gamma(s_.theta_gamma);
        if (ctx_.config.gamma_mode == GammaMode::global) {
            gamma_genus_.colwise() = Kg_ * s_.gamma_star;
        } else {
            gamma_genus_ = Kg_ * s_.gamma_genus;
        }
    }
    if (ctx_.has_factor_eta()) Ke_ = ctx_.kernel_eta(s_.theta_eta);
    eta_site_ = eta_site_surface(s_, ctx_);
    resid_.resize(n_wave, ctx_.n_records());
    for (int k = 0; k < ctx_.n_records(); ++k) {
        double level = s_.alpha_genus(ctx_.rec_genus[k]);
        if (ctx_.has_alpha_spatial()) level += s_.alpha_spatial(ctx_.rec_cell[k]);
        const int site = ctx_.rec_site[k];
        resid_.col(k) = ctx_.Y.col(k) - reg_site_.col(site) - gamma_genus_.col(ctx_.rec_genus[k]) -
                        eta_site_.col(site);
        resid_.col(k).array() -= level;
    }
}

Eigen::MatrixXd GibbsSampler::site_residual_sums() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(ctx_.n_wave(), ctx_.n_sites());
    for (int k = 0; k < ctx_.n_records(); ++k) out.col(ctx_.rec_site[k]) += resid_.col(k);
    return out;
}

Eigen::VectorXd GibbsSampler::weighted_record_sums() const { return resid_.transpose() * inv_s2_; }

// ---------------------------------------------------------------- conditionals

Canonical GibbsSampler::conditional_alpha_genus(int genus) const {
    const double sum_inv = inv_s2_.sum();
    const Eigen::VectorXd c = weighted_record_sums();
    const auto& recs = ctx_.genus_records[genus];
    const double a = s_.alpha_genus(genus);
    Canonical out;
    out.precision = Eigen::MatrixXd::Constant(1, 1, 1.0 / s_.sigma2_alpha + recs.size() * sum_inv);
    double lin = s_.alpha / s_.sigma2_alpha;
    for (int k : recs) lin += c(k) + a * sum_inv;
    out.linear = Eigen::VectorXd::Constant(1, lin);
    return out;
}

Canonical GibbsSampler::conditional_alpha_spatial(int genus) const {
    const double sum_inv = inv_s2_.sum();
    const Eigen::VectorXd c = weighted_record_sums();
    const auto& cells = ctx_.genus_cells[genus];
    const auto n = static_cast<Eigen::Index>(cells.size());
    Canonical out;
    out.precision = alpha_corr_inv_[genus] / s_.sigma2_alpha_s;
    out.linear = Eigen::VectorXd::Zero(n);
    for (Eigen::Index a = 0; a < n; ++a) {
        const int cell = cells[a];
        const auto& recs = ctx_.cell_records[cell];
        out.precision(a, a) += static_cast<double>(recs.size()) * sum_inv;
        const double cur = s_.alpha_spatial(cell);
        for (int k : recs) out.linear(a) += c(k) + cur * sum_inv;
    }
    return out;
}

Canonical GibbsSampler::conditional_alpha() const {
    const NormalPrior& p = ctx_.config.priors.alpha;
    Canonical out;
    out.precision = Eigen::MatrixXd::Constant(1, 1, 1.0 / p.var + ctx_.n_genera() / s_.sigma2_alpha);
    out.linear = Eigen::VectorXd::Constant(1, p.mean / p.var + s_.alpha_genus.sum() / s_.sigma2_alpha);
    return out;
}

Canonical GibbsSampler::conditional_B() const { return conditional_B_at(s_.theta_beta); }

Canonical GibbsSampler::conditional_B_at(double theta) const {
    const int p = ctx_.n_covariates();
    const int J = ctx_.j_beta();
    const Eigen::MatrixXd K = theta == s_.theta_beta ? Kb_ : ctx_.kernel_beta(theta);
    const Eigen::MatrixXd DK = inv_s2_.asDiagonal() * K;
    const Eigen::MatrixXd KtDK = K.transpose() * DK;
    Eigen::MatrixXd partial = site_residual_sums();
    for (int s = 0; s < ctx_.n_sites(); ++s) partial.col(s) += site_counts_[s] * reg_site_.col(s);
    const Eigen::MatrixXd L = DK.transpose() * (partial * ctx_.X_site);  // J x p
    Canonical out;
    out.precision.resize(p * J, p * J);
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) out.precision.block(a * J, b * J, J, J) = XtX_(a, b) * KtDK;
    }
    out.precision.diagonal().array() += 1.0 / s_.sigma2_beta;
    out.linear = Eigen::Map<const Eigen::VectorXd>(L.data(), p * J);
    return out;
}

Canonical GibbsSampler::conditional_gamma_star() const {
    const int J = ctx_.j_gamma();
    Canonical out;
    if (ctx_.config.gamma_mode == GammaMode::per_genus) {
        out.precision = Eigen::MatrixXd::Identity(J, J) *
                        (ctx_.n_genera() / s_.sigma2_gamma_genus + 1.0 / s_.sigma2_gamma);
        out.linear = s_.gamma_genus.rowwise().sum() / s_.sigma2_gamma_genus;
        return out;
    }
    const Eigen::MatrixXd DK = inv_s2_.asDiagonal() * Kg_;
    const Eigen::VectorXd total = resid_.rowwise().sum() + ctx_.n_records() * gamma_genus_.col(0);
    out.precision = ctx_.n_records() * (Kg_.transpose() * DK);
    out.precision.diagonal().array() += 1.0 / s_.sigma2_gamma;
    out.linear = DK.transpose() * total;
    return out;
}

Canonical GibbsSampler::conditional_gamma_genus(int genus) const {
    const auto& recs = ctx_.genus_records[genus];
    const auto n = static_cast<double>(recs.size());
    const Eigen::MatrixXd DK = inv_s2_.asDiagonal() * Kg_;
    Eigen::VectorXd total = n * gamma_genus_.col(genus);
    for (int k : recs) total += resid_.col(k);
    Canonical out;
    out.precision = n * (Kg_.transpose() * DK);
    out.precision.diagonal().array() += 1.0 / s_.sigma2_gamma_genus;
    out.linear = DK.transpose() * total + s_.gamma_star / s_.sigma2_gamma_genus;
    return out;
}

Canonical GibbsSampler::conditional_w_site(int site) const {
    const int r = ctx_.rank();
    const Eigen::MatrixXd KA = Ke_ * s_.A;
    const Eigen::MatrixXd G = KA.transpose() * inv_s2_.asDiagonal();
    const double n = site_counts_[site];
    Eigen::VectorXd sum = n * eta_site_.col(site);
    for (int k : ctx_.site_records[site]) sum += resid_.col(k);
    Canonical out;
    out.precision = n * (G * KA);
    out.linear = G * sum;
    for (int j = 0; j < r; ++j) {
        const Eigen::MatrixXd& Q = w_precision_[j];
        out.precision(j, j) += Q(site, site);
        out.linear(j) -= Q.col(site).dot(s_.w.col(j)) - Q(site, site) * s_.w(site, j);
    }
    return out;
}

Canonical GibbsSampler::conditional_A_column(int k) const {
    const int J = ctx_.j_eta();
    const Eigen::MatrixXd SR = site_residual_sums();
    const Eigen::VectorXd wk = s_.w.col(k);
    double uu = 0.0;
    for (int s = 0; s < ctx_.n_sites(); ++s) uu += site_counts_[s] * wk(s) * wk(s);
    const Eigen::MatrixXd DK = inv_s2_.asDiagonal() * Ke_;
    const Eigen::MatrixXd KtDK = Ke_.transpose() * DK;
    Eigen::VectorXd lin = DK.transpose() * (SR * wk) + uu * (KtDK * s_.A.col(k));
    Eigen::MatrixXd prec = uu * KtDK;
    prec.diagonal().array() += 1.0 / s_.sigma2_A;
    const Eigen::Index from = ctx_.lower_triangular_A() ? k : 0;
    Canonical out;
    out.precision = sub_matrix(prec, from);
    out.linear = lin.tail(J - from);
    return out;
}

Canonical GibbsSampler::conditional_z_wave(int m) const {
    const Eigen::MatrixXd& Ks = ctx_.spatial_kernel;  // N_s x L
    Eigen::VectorXd site_sum(ctx_.n_sites());
    Eigen::VectorXd n(ctx_.n_sites());
    for (int s = 0; s < ctx_.n_sites(); ++s) {
        n(s) = site_counts_[s];
        site_sum(s) = n(s) * eta_site_(m, s);
    }
    for (int k = 0; k < ctx_.n_records(); ++k) site_sum(ctx_.rec_site[k]) += resid_(m, k);
    Canonical out;
    out.precision = inv_s2_(m) * (Ks.transpose() * n.asDiagonal() * Ks);
    out.precision.diagonal().array() += 1.0 / s_.sigma2_A;
    out.linear = inv_s2_(m) * (Ks.transpose() * site_sum);
    return out;
}

Canonical GibbsSampler::conditional_mu_theta_gamma() const {
    const NormalPrior& p = ctx_.config.priors.mu_theta_gamma;
    const Eigen::VectorXd u = s_.theta_gamma.array().log();
    const Eigen::VectorXd Ri1 = ctx_.R_gamma_inv.rowwise().sum();
    Canonical out;
    out.precision = Eigen::MatrixXd::Constant(1, 1, Ri1.sum() / s_.sigma2_theta_gamma + 1.0 / p.var);
    out.linear = Eigen::VectorXd::Constant(1, Ri1.dot(u) / s_.sigma2_theta_gamma + p.mean / p.var);
    return out;
}

GibbsSampler::LevelLayout GibbsSampler::level_layout() const {
    LevelLayout l;
    l.genus = block_active("alpha_genus");
    l.spatial = block_active("alpha_spatial");
    l.gamma = block_active("gamma");
    l.n_genus = l.genus ? ctx_.n_genera() : 0;
    l.n_cells = l.spatial ? ctx_.n_cells() : 0;
    l.n_groups = !l.gamma ? 0 : ctx_.config.gamma_mode == GammaMode::per_genus ? ctx_.n_genera() : 1;
    l.off_cells = l.n_genus;
    l.off_gamma = l.n_genus + l.n_cells;
    l.size = l.off_gamma + l.n_groups * ctx_.j_gamma();
    return l;
}

Canonical GibbsSampler::conditional_level() const {
    const LevelLayout l = level_layout();
    const int J = ctx_.j_gamma();
    const bool per_genus = ctx_.config.gamma_mode == GammaMode::per_genus;
    const double S = inv_s2_.sum();
    Canonical out;
    out.precision = Eigen::MatrixXd::Zero(l.size, l.size);
    out.linear = Eigen::VectorXd::Zero(l.size);

    // data terms: each record adds D_k' S^-1 D_k and D_k' S^-1 r_k, with r_k the residual
    // after adding back the current level terms
    Eigen::VectorXd u;
    Eigen::MatrixXd KtDK, KtD;
    if (l.gamma) {
        KtD = Kg_.transpose() * inv_s2_.asDiagonal();
        u = KtD.rowwise().sum();
        KtDK = KtD * Kg_;
    }
    std::vector<Eigen::VectorXd> group_resid(static_cast<std::size_t>(l.n_groups), Eigen::VectorXd::Zero(ctx_.n_wave()));
    std::vector<double> group_count(static_cast<std::size_t>(l.n_groups), 0.0);
    for (int k = 0; k < ctx_.n_records(); ++k) {
        const int g = ctx_.rec_genus[k];
        const int cell = ctx_.rec_cell[k];
        Eigen::VectorXd r = resid_.col(k);
        double shift = 0.0;
        if (l.genus) shift += s_.alpha_genus(g);
        if (l.spatial) shift += s_.alpha_spatial(cell);
        r.array() += shift;
        if (l.gamma) r += gamma_genus_.col(g);
        const double c = r.dot(inv_s2_);
        const Eigen::Index ia = g;
        const Eigen::Index ic = l.off_cells + cell;
        if (l.genus) {
            out.precision(ia, ia) += S;
            out.linear(ia) += c;
        }
        if (l.spatial) {
            out.precision(ic, ic) += S;
            out.linear(ic) += c;
        }
        if (l.genus && l.spatial) {
            out.precision(ia, ic) += S;
            out.precision(ic, ia) += S;
        }
        if (l.gamma) {
            const int h = per_genus ? g : 0;
            const Eigen::Index ig = l.off_gamma + h * J;
            group_resid[static_cast<std::size_t>(h)] += r;
            group_count[static_cast<std::size_t>(h)] += 1.0;
            if (l.genus) {
                out.precision.block(ig, ia, J, 1) += u;
                out.precision.block(ia, ig, 1, J) += u.transpose();
            }
            if (l.spatial) {
                out.precision.block(ig, ic, J, 1) += u;
                out.precision.block(ic, ig, 1, J) += u.transpose();
            }
        }
    }
    for (Eigen::Index h = 0; h < l.n_groups; ++h) {
        const Eigen::Index ig = l.off_gamma + h * J;
        out.precision.block(ig, ig, J, J) += group_count[static_cast<std::size_t>(h)] * KtDK;
        out.linear.segment(ig, J) += KtD * group_resid[static_cast<std::size_t>(h)];
    }

    // priors
    if (l.genus) {
        out.precision.diagonal().head(l.n_genus).array() += 1.0 / s_.sigma2_alpha;
        out.linear.head(l.n_genus).array() += s_.alpha / s_.sigma2_alpha;
    }
    if (l.spatial) {
        for (int g = 0; g < ctx_.n_genera(); ++g) {
            const auto& cells = ctx_.genus_cells[g];
            for (std::size_t a = 0; a < cells.size(); ++a) {
                for (std::size_t b = 0; b < cells.size(); ++b) {
                    out.precision(l.off_cells + cells[a], l.off_cells + cells[b]) +=
                        alpha_corr_inv_[g](a, b) / s_.sigma2_alpha_s;
                }
            }
        }
    }
    if (l.gamma) {
        const double v = per_genus ? s_.sigma2_gamma_genus : s_.sigma2_gamma;
        out.precision.diagonal().tail(l.n_groups * J).array() += 1.0 / v;
        if (per_genus) {
            for (Eigen::Index h = 0; h < l.n_groups; ++h) out.linear.segment(l.off_gamma + h * J, J) += s_.gamma_star / v;
        }
    }
    return out;
}

Canonical GibbsSampler::conditional_B_w() const {
    const int p = ctx_.n_covariates();
    const int J = ctx_.j_beta();
    const int r = ctx_.rank();
    const int ns = ctx_.n_sites();
    const Eigen::Index off = static_cast<Eigen::Index>(p) * J;
    const Eigen::MatrixXd KA = Ke_ * s_.A;
    const Eigen::MatrixXd DK = inv_s2_.asDiagonal() * Kb_;
    const Eigen::MatrixXd KtDK = Kb_.transpose() * DK;
    const Eigen::MatrixXd G = KA.transpose() * inv_s2_.asDiagonal();  // r x N_wave
    const Eigen::MatrixXd H = G * KA;
    const Eigen::MatrixXd C = DK.transpose() * KA;  // J x r
    Eigen::MatrixXd partial = site_residual_sums();
    for (int s = 0; s < ns; ++s) partial.col(s) += site_counts_[s] * (reg_site_.col(s) + eta_site_.col(s));
    Canonical out;
    out.precision = Eigen::MatrixXd::Zero(off + ns * r, off + ns * r);
    out.linear.resize(off + ns * r);
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) out.precision.block(a * J, b * J, J, J) = XtX_(a, b) * KtDK;
    }
    out.precision.diagonal().head(off).array() += 1.0 / s_.sigma2_beta;
    const Eigen::MatrixXd L = DK.transpose() * (partial * ctx_.X_site);
    out.linear.head(off) = Eigen::Map<const Eigen::VectorXd>(L.data(), off);
    const Eigen::MatrixXd GP = G * partial;
    for (int s = 0; s < ns; ++s) {
        const Eigen::Index ws = off + static_cast<Eigen::Index>(s) * r;
        const double n = site_counts_[s];
        out.precision.block(ws, ws, r, r) += n * H;
        for (int a = 0; a < p; ++a) {
            const Eigen::MatrixXd cross = n * ctx_.X_site(s, a) * C;
            out.precision.block(a * J, ws, J, r) += cross;
            out.precision.block(ws, a * J, r, J) += cross.transpose();
        }
        out.linear.segment(ws, r) = GP.col(s);
        for (int j = 0; j < r; ++j) {
            const Eigen::MatrixXd& Q = w_precision_[j];
            for (int t = 0; t < ns; ++t) out.precision(ws + j, off + static_cast<Eigen::Index>(t) * r + j) += Q(s, t);
        }
    }
    return out;
}

InvGammaConditional GibbsSampler::conditional_sigma2_alpha() const {
    const InvGammaPrior& p = ctx_.config.priors.sigma2_alpha;
    return {p.shape + 0.5 * ctx_.n_genera(), p.scale + 0.5 * (s_.alpha_genus.array() - s_.alpha).square().sum()};
}

InvGammaConditional GibbsSampler::conditional_sigma2_alpha_s() const {
    const InvGammaPrior& p = ctx_.config.priors.sigma2_alpha_s;
    double quad = 0.0;
    for (int g = 0; g < ctx_.n_genera(); ++g) {
        const auto& cells = ctx_.genus_cells[g];
        if (cells.empty()) continue;
        Eigen::VectorXd a(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) a(c) = s_.alpha_spatial(cells[c]);
        quad += a.dot(alpha_corr_inv_[g] * a);
    }
    return {p.shape + 0.5 * ctx_.n_cells(), p.scale + 0.5 * quad};
}

InvGammaConditional GibbsSampler::conditional_sigma2_beta() const {
    const InvGammaPrior& p = ctx_.config.priors.sigma2_beta;
    return {p.shape + 0.5 * static_cast<double>(s_.B.size()), p.scale + 0.5 * s_.B.squaredNorm()};
}

InvGammaConditional GibbsSampler::conditional_sigma2_gamma() const {
    const InvGammaPrior& p = ctx_.config.priors.sigma2_gamma;
    return {p.shape + 0.5 * static_cast<double>(s_.gamma_star.size()), p.scale + 0.5 * s_.gamma_star.squaredNorm()};
}

InvGammaConditional GibbsSampler::conditional_sigma2_gamma_genus() const {
    const InvGammaPrior& p = ctx_.config.priors.sigma2_gamma_genus;
    const double ss = (s_.gamma_genus.colwise() - s_.gamma_star).squaredNorm();
    return {p.shape + 0.5 * static_cast<double>(s_.gamma_genus.size()), p.scale + 0.5 * ss};
}

InvGammaConditional GibbsSampler::conditional_sigma2_A() const {
    const InvGammaPrior& p = ctx_.config.priors.sigma2_A;
    if (ctx_.config.eta_variant == EtaVariant::spatial_convolution) {
        return {p.shape + 0.5 * static_cast<double>(s_.z_wave.size()), p.scale + 0.5 * s_.z_wave.squaredNorm()};
    }
    const Eigen::Index J = s_.A.rows();
    const Eigen::Index r = s_.A.cols();
    const double n_free = ctx_.lower_triangular_A() ? static_cast<double>(J * (J + 1) / 2) : static_cast<double>(J * r);
    return {p.shape + 0.5 * n_free, p.scale + 0.5 * s_.A.squaredNorm()};
}

InvGammaConditional GibbsSampler::conditional_sigma2_theta_gamma() const {
    const InvGammaPrior& p = ctx_.config.priors.sigma2_theta_gamma;
    const Eigen::VectorXd q = s_.theta_gamma.array().log() - s_.mu_theta_gamma;
    return {p.shape + 0.5 * static_cast<double>(q.size()), p.scale + 0.5 * q.dot(ctx_.R_gamma_inv * q)};
}

// ---------------------------------------------------------------- Gibbs draws

void GibbsSampler::draw_alpha_genus() {
    for (int g = 0; g < ctx_.n_genera(); ++g) {
        const Canonical c = conditional_alpha_genus(g);
        const double v = sample_from_precision(c.precision, c.linear, rng_, "alpha_genus")(0);
        const double delta = v - s_.alpha_genus(g);
        s_.alpha_genus(g) = v;
        for (int k : ctx_.genus_records[g]) resid_.col(k).array() -= delta;
    }
}

void GibbsSampler::draw_alpha_spatial() {
    for (int g = 0; g < ctx_.n_genera(); ++g) {
        const auto& cells = ctx_.genus_cells[g];
        if (cells.empty()) continue;
        const Canonical c = conditional_alpha_spatial(g);
        const Eigen::VectorXd v = sample_from_precision(c.precision, c.linear, rng_, "alpha_spatial");
        for (std::size_t a = 0; a < cells.size(); ++a) {
            const double delta = v(a) - s_.alpha_spatial(cells[a]);
            s_.alpha_spatial(cells[a]) = v(a);
            for (int k : ctx_.cell_records[cells[a]]) resid_.col(k).array() -= delta;
        }
    }
}

void GibbsSampler::draw_alpha() {
    const Canonical c = conditional_alpha();
    s_.alpha = sample_from_precision(c.precision, c.linear, rng_, "alpha")(0);
}

void GibbsSampler::draw_B() {
    const Canonical c = conditional_B();
    set_B(sample_from_precision(c.precision, c.linear, rng_, "B"));
}

void GibbsSampler::set_B(const Eigen::VectorXd& v) {
    const int J = ctx_.j_beta();
    const int p = ctx_.n_covariates();
    for (int a = 0; a < p; ++a) s_.B.row(a) = v.segment(a * J, J).transpose();
    const Eigen::MatrixXd reg_new = (Kb_ * s_.B.transpose()) * ctx_.X_site.transpose();
    const Eigen::MatrixXd delta = reg_new - reg_site_;
    for (int k = 0; k < ctx_.n_records(); ++k) resid_.col(k) -= delta.col(ctx_.rec_site[k]);
    reg_site_ = reg_new;
}

void GibbsSampler::draw_gamma() {
    const Eigen::MatrixXd old = gamma_genus_;
    if (ctx_.config.gamma_mode == GammaMode::per_genus) {
        for (int g = 0; g < ctx_.n_genera(); ++g) {
            const Canonical c = conditional_gamma_genus(g);
            s_.gamma_genus.col(g) = sample_from_precision(c.precision, c.linear, rng_, "gamma_genus");
        }
        const Canonical c = conditional_gamma_star();
        s_.gamma_star = sample_from_precision(c.precision, c.linear, rng_, "gamma");
        gamma_genus_ = Kg_ * s_.gamma_genus;
    } else {
        const Canonical c = conditional_gamma_star();
        s_.gamma_star = sample_from_precision(c.precision, c.linear, rng_, "gamma");
        gamma_genus_.colwise() = Kg_ * s_.gamma_star;
    }
    const Eigen::MatrixXd delta = gamma_genus_ - old;
    for (int k = 0; k < ctx_.n_records(); ++k) resid_.col(k) -= delta.col(ctx_.rec_genus[k]);
}

void GibbsSampler::update_eta_sites(const Eigen::MatrixXd& new_eta_site) {
    const Eigen::MatrixXd delta = new_eta_site - eta_site_;
    for (int k = 0; k < ctx_.n_records(); ++k) resid_.col(k) -= delta.col(ctx_.rec_site[k]);
    eta_site_ = new_eta_site;
}

void GibbsSampler::draw_w() {
    const int r = ctx_.rank();
    const Eigen::MatrixXd KA = Ke_ * s_.A;
    const Eigen::MatrixXd G = KA.transpose() * inv_s2_.asDiagonal();
    const Eigen::MatrixXd H = G * KA;
    Eigen::MatrixXd partial = site_residual_sums();
    for (int s = 0; s < ctx_.n_sites(); ++s) partial.col(s) += site_counts_[s] * eta_site_.col(s);
    const Eigen::MatrixXd GP = G * partial;  // r x N_s
    for (int s = 0; s < ctx_.n_sites(); ++s) {
        Eigen::MatrixXd prec = site_counts_[s] * H;
        Eigen::VectorXd lin = GP.col(s);
        for (int j = 0; j < r; ++j) {
            const Eigen::MatrixXd& Q = w_precision_[j];
            prec(j, j) += Q(s, s);
            lin(j) -= Q.col(s).dot(s_.w.col(j)) - Q(s, s) * s_.w(s, j);
        }
        s_.w.row(s) = sample_from_precision(prec, lin, rng_, "w").transpose();
    }
    update_eta_sites(KA * s_.w.transpose());
}

void GibbsSampler::draw_z_wave() {
    for (int m = 0; m < ctx_.n_wave(); ++m) {
        const Canonical c = conditional_z_wave(m);
        s_.z_wave.col(m) = sample_from_precision(c.precision, c.linear, rng_, "z_wave");
    }
    update_eta_sites(s_.z_wave.transpose() * ctx_.spatial_kernel.transpose());
}

void GibbsSampler::draw_mu_theta_gamma() {
    const Canonical c = conditional_mu_theta_gamma();
    s_.mu_theta_gamma = sample_from_precision(c.precision, c.linear, rng_, "mu_theta_gamma")(0);
}

void GibbsSampler::draw_A() {
    const int J = ctx_.j_eta();
    for (int k = 0; k < ctx_.rank(); ++k) {
        const Canonical c = conditional_A_column(k);
        const Eigen::Index from = ctx_.lower_triangular_A() ? k : 0;
        Eigen::VectorXd v;
        if (ctx_.lower_triangular_A()) {
            // Positive diagonal: draw the leading element from its truncated marginal, the rest given it.
            const JitteredCholesky f = factorize(c.precision, "A");
            const Eigen::VectorXd mean = f.solve(c.linear);
            Eigen::VectorXd e0 = Eigen::VectorXd::Zero(c.linear.size());
            e0(0) = 1.0;
            const double var0 = f.solve(e0)(0);
            const double x0 = draw_truncated_normal(rng_, mean(0), std::sqrt(var0), 0.0);
            v.resize(c.linear.size());
            v(0) = x0;
            const Eigen::Index m = c.linear.size() - 1;
            if (m > 0) {
                const Eigen::MatrixXd Qrr = c.precision.bottomRightCorner(m, m);
                const Eigen::VectorXd brr = c.linear.tail(m) - c.precision.col(0).tail(m) * x0;
                v.tail(m) = sample_from_precision(Qrr, brr, rng_, "A");
            }
        } else {
            v = sample_from_precision(c.precision, c.linear, rng_, "A");
        }
        Eigen::VectorXd col = Eigen::VectorXd::Zero(J);
        col.tail(J - from) = v;
        const Eigen::VectorXd dA = col - s_.A.col(k);
        s_.A.col(k) = col;
        update_eta_sites(eta_site_ + (Ke_ * dA) * s_.w.col(k).transpose());
    }
}

void GibbsSampler::draw_level() {
    const LevelLayout l = level_layout();
    const int active = (l.genus ? 1 : 0) + (l.spatial ? 1 : 0) + (l.gamma ? 1 : 0);
    if (active < 2) return;
    const Canonical c = conditional_level();
    const Eigen::VectorXd v = sample_from_precision(c.precision, c.linear, rng_, "level");
    const int J = ctx_.j_gamma();
    Eigen::VectorXd genus_delta = Eigen::VectorXd::Zero(ctx_.n_genera());
    Eigen::VectorXd cell_delta = Eigen::VectorXd::Zero(ctx_.n_cells());
    if (l.genus) {
        genus_delta = v.head(l.n_genus) - s_.alpha_genus;
        s_.alpha_genus = v.head(l.n_genus);
    }
    if (l.spatial) {
        cell_delta = v.segment(l.off_cells, l.n_cells) - s_.alpha_spatial;
        s_.alpha_spatial = v.segment(l.off_cells, l.n_cells);
    }
    const Eigen::MatrixXd old_gamma = gamma_genus_;
    if (l.gamma) {
        if (ctx_.config.gamma_mode == GammaMode::per_genus) {
            for (int g = 0; g < ctx_.n_genera(); ++g) s_.gamma_genus.col(g) = v.segment(l.off_gamma + g * J, J);
            gamma_genus_ = Kg_ * s_.gamma_genus;
        } else {
            s_.gamma_star = v.segment(l.off_gamma, J);
            gamma_genus_.colwise() = Kg_ * s_.gamma_star;
        }
    }
    for (int k = 0; k < ctx_.n_records(); ++k) {
        const int g = ctx_.rec_genus[k];
        double shift = genus_delta(g);
        if (l.spatial) shift += cell_delta(ctx_.rec_cell[k]);
        resid_.col(k).array() -= shift;
        if (l.gamma) resid_.col(k) -= gamma_genus_.col(g) - old_gamma.col(g);
    }
}

void GibbsSampler::draw_B_w() {
    const int p = ctx_.n_covariates();
    const int J = ctx_.j_beta();
    const int r = ctx_.rank();
    const Canonical c = conditional_B_w();
    const Eigen::VectorXd v = sample_from_precision(c.precision, c.linear, rng_, "B and w");
    const Eigen::Index off = static_cast<Eigen::Index>(p) * J;
    set_B(v.head(off));
    for (int s = 0; s < ctx_.n_sites(); ++s) s_.w.row(s) = v.segment(off + static_cast<Eigen::Index>(s) * r, r).transpose();
    update_eta_sites(Ke_ * s_.A * s_.w.transpose());
}

void GibbsSampler::draw_variances() {
    auto draw = [&](const char* name, const InvGammaConditional& c, double& target) {
        if (!block_active(name)) return;
        target = draw_inv_gamma(rng_, c.shape, c.scale);
    };
    draw("sigma2_alpha", conditional_sigma2_alpha(), s_.sigma2_alpha);
    if (block_active("sigma2_alpha_s")) draw("sigma2_alpha_s", conditional_sigma2_alpha_s(), s_.sigma2_alpha_s);
    draw("sigma2_beta", conditional_sigma2_beta(), s_.sigma2_beta);
    draw("sigma2_gamma", conditional_sigma2_gamma(), s_.sigma2_gamma);
    draw("sigma2_gamma_genus", conditional_sigma2_gamma_genus(), s_.sigma2_gamma_genus);
    draw("sigma2_A", conditional_sigma2_A(), s_.sigma2_A);
    draw("sigma2_theta_gamma", conditional_sigma2_theta_gamma(), s_.sigma2_theta_gamma);
}

void GibbsSampler::gibbs_step() {
    if (block_active("alpha_genus")) draw_alpha_genus();
    if (block_active("alpha_spatial")) draw_alpha_spatial();
    if (block_active("alpha")) draw_alpha();
    if (block_active("B")) draw_B();
    if (block_active("gamma")) draw_gamma();
    if (block_active("w")) {
        if (ctx_.config.eta_variant == EtaVariant::spatial_convolution) {
            draw_z_wave();
        } else {
            draw_w();
        }
    }
    if (block_active("mu_theta_gamma")) draw_mu_theta_gamma();
    if (block_active("A")) draw_A();
    // Extra exact update of the level terms together; they trade off almost one for one
    // and mix slowly when drawn one block at a time.
    if (ctx_.config.mcmc.joint_level) draw_level();
    // Likewise for x(s)'beta(t) and eta, which can absorb each other across sites.
    if (ctx_.config.mcmc.joint_beta_eta && ctx_.has_factor_eta() && block_active("B") && block_active("w")) draw_B_w();
    draw_variances();
}

// ---------------------------------------------------------------- Metropolis-Hastings

bool GibbsSampler::accept(double log_ratio) {
    if (log_ratio >= 0.0) return true;
    return std::log(draw_uniform(rng_)) < log_ratio;
}

void GibbsSampler::record(const std::string& name, int component, bool accepted, bool adapting, double gain) {
    auto& counter = adapting ? adapt_.burn[name] : adapt_.kept[name];
    ++counter.proposed;
    if (accepted) ++counter.accepted;
    if (adapting) {
        double& step = adapt_.steps[name](component);
        step *= std::exp(gain * ((accepted ? 1.0 : 0.0) - ctx_.config.mcmc.target_acceptance));
    }
}

double GibbsSampler::gp_log_density(const Eigen::VectorXd& x, double phi, double var,
                                    const Eigen::MatrixXd& dist) const {
    if (x.size() == 0) return 0.0;
    const JitteredCholesky f = factorize(var * exp_corr_matrix(dist, phi), "GP density");
    const Eigen::VectorXd z = f.L.triangularView<Eigen::Lower>().solve(x);
    return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + f.log_det() + z.squaredNorm());
}

int GibbsSampler::mh_phi_alpha(bool adapting, double gain) {
    const double lo = ctx_.config.priors.phi_alpha_lo;
    const double hi = ctx_.config.priors.phi_alpha_hi;
    const double step = adapt_.steps["phi_alpha"](0);
    const double u = to_logit(s_.phi_alpha, lo, hi);
    const double u_new = u + step * draw_normal(rng_);
    const double phi_new = from_logit(u_new, lo, hi);
    bool ok = false;
    if (u_new == u || phi_new == s_.phi_alpha) {
        ok = true;
    } else if (phi_new > lo && phi_new < hi) {
        auto target = [&](double phi) {
            double t = logit_jacobian(phi, lo, hi);
            for (int g = 0; g < ctx_.n_genera(); ++g) {
                const auto& cells = ctx_.genus_cells[g];
                if (cells.empty()) continue;
                Eigen::VectorXd a(cells.size());
                for (std::size_t c = 0; c < cells.size(); ++c) a(c) = s_.alpha_spatial(cells[c]);
                t += gp_log_density(a, phi, s_.sigma2_alpha_s, genus_dist_[g]);
            }
            return t;
        };
        ok = accept(target(phi_new) - target(s_.phi_alpha));
    }
    if (ok && phi_new != s_.phi_alpha) {
        s_.phi_alpha = phi_new;
        rebuild_alpha_corr();
    }
    record("phi_alpha", 0, ok, adapting, gain);
    return ok ? 1 : 0;
}

int GibbsSampler::mh_theta_beta(bool adapting, double gain) {
    const GammaPrior& pr = ctx_.config.priors.theta_beta;
    const double step = adapt_.steps["theta_beta"](0);
    const double u = std::log(s_.theta_beta);
    const double u_new = u + step * draw_normal(rng_);
    const double th_new = std::exp(u_new);
    bool ok = true;
    Eigen::MatrixXd K_new, reg_new;
    if (u_new != u) {
        double log_ratio = pr.shape * (u_new - u) - pr.rate * (th_new - s_.theta_beta);
        if (!ctx_.config.mcmc.prior_only) {
            K_new = ctx_.kernel_beta(th_new);
            reg_new = (K_new * s_.B.transpose()) * ctx_.X_site.transpose();
            const Eigen::MatrixXd delta = reg_new - reg_site_;
            const Eigen::MatrixXd SR = site_residual_sums();
            for (int s = 0; s < ctx_.n_sites(); ++s) {
                log_ratio += (inv_s2_.array() *
                              (delta.col(s).array() * SR.col(s).array() -
                               0.5 * site_counts_[s] * delta.col(s).array().square()))
                                 .sum();
            }
        }
        ok = accept(log_ratio);
        if (ok) {
            s_.theta_beta = th_new;
            Kb_ = K_new.size() > 0 ? K_new : ctx_.kernel_beta(th_new);
            if (reg_new.size() == 0) reg_new = (Kb_ * s_.B.transpose()) * ctx_.X_site.transpose();
            const Eigen::MatrixXd delta = reg_new - reg_site_;
            for (int k = 0; k < ctx_.n_records(); ++k) resid_.col(k) -= delta.col(ctx_.rec_site[k]);
            reg_site_ = reg_new;
        }
    }
    record("theta_beta", 0, ok, adapting, gain);
    return ok ? 1 : 0;
}

double GibbsSampler::collapsed_theta_beta_log_target(double theta) const {
    const GammaPrior& pr = ctx_.config.priors.theta_beta;
    double t = pr.shape * std::log(theta) - pr.rate * theta;
    if (ctx_.config.mcmc.prior_only) return t;
    const Canonical c = conditional_B_at(theta);
    const Eigen::LLT<Eigen::MatrixXd> llt(c.precision);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd z = llt.matrixL().solve(c.linear);
    return t - llt.matrixL().toDenseMatrix().diagonal().array().log().sum() + 0.5 * z.squaredNorm();
}

int GibbsSampler::mh_theta_beta_collapsed(bool adapting, double gain) {
    const double step = adapt_.steps["theta_beta_collapsed"](0);
    const double u = std::log(s_.theta_beta);
    const double u_new = u + step * draw_normal(rng_);
    const double th_new = std::exp(u_new);
    bool ok = true;
    if (u_new != u && th_new != s_.theta_beta) {
        ok = accept(collapsed_theta_beta_log_target(th_new) - collapsed_theta_beta_log_target(s_.theta_beta));
        if (ok) {
            const Canonical c = conditional_B_at(th_new);
            const Eigen::MatrixXd K_new = ctx_.kernel_beta(th_new);
            s_.theta_beta = th_new;
            Kb_ = K_new;
            set_B(sample_from_precision(c.precision, c.linear, rng_, "B"));
        }
    }
    record("theta_beta_collapsed", 0, ok, adapting, gain);
    return ok ? 1 : 0;
}

int GibbsSampler::mh_theta_eta(bool adapting, double gain) {
    const GammaPrior& pr = ctx_.config.priors.theta_eta;
    const double step = adapt_.steps["theta_eta"](0);
    const double u = std::log(s_.theta_eta);
    const double u_new = u + step * draw_normal(rng_);
    const double th_new = std::exp(u_new);
    bool ok = true;
    if (u_new != u) {
        double log_ratio = pr.shape * (u_new - u) - pr.rate * (th_new - s_.theta_eta);
        const Eigen::MatrixXd K_new = ctx_.kernel_eta(th_new);
        const Eigen::MatrixXd eta_new = (K_new * s_.A) * s_.w.transpose();
        if (!ctx_.config.mcmc.prior_only) {
            const Eigen::MatrixXd delta = eta_new - eta_site_;
            const Eigen::MatrixXd SR = site_residual_sums();
            for (int s = 0; s < ctx_.n_sites(); ++s) {
                log_ratio += (inv_s2_.array() *
                              (delta.col(s).array() * SR.col(s).array() -
                               0.5 * site_counts_[s] * delta.col(s).array().square()))
                                 .sum();
            }
        }
        ok = accept(log_ratio);
        if (ok) {
            s_.theta_eta = th_new;
            Ke_ = K_new;
            update_eta_sites(eta_new);
        }
    }
    record("theta_eta", 0, ok, adapting, gain);
    return ok ? 1 : 0;
}

int GibbsSampler::mh_theta_gamma(bool adapting, double gain) {
    const int J = ctx_.j_gamma();
    const int n_g = ctx_.n_genera();
    const bool global = ctx_.config.gamma_mode == GammaMode::global;
    const bool use_data = !ctx_.config.mcmc.prior_only;
    Eigen::VectorXd& steps = adapt_.steps["theta_gamma"];
    // S1: residual sums per genus (one pooled column in global mode)
    const int groups = global ? 1 : n_g;
    Eigen::MatrixXd S1 = Eigen::MatrixXd::Zero(ctx_.n_wave(), groups);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(groups);
    if (use_data) {
        for (int k = 0; k < ctx_.n_records(); ++k) {
            const int g = global ? 0 : ctx_.rec_genus[k];
            S1.col(g) += resid_.col(k);
            counts(g) += 1.0;
        }
    }
    const Eigen::MatrixXd P = ctx_.R_gamma_inv / s_.sigma2_theta_gamma;
    Eigen::VectorXd u = s_.theta_gamma.array().log();
    Eigen::VectorXd Pq = P * (u.array() - s_.mu_theta_gamma).matrix();
    const Eigen::MatrixXd old_gamma = gamma_genus_;
    int accepted = 0;
    const auto& t = ctx_.grid.values();
    Eigen::VectorXd kcol(ctx_.n_wave());
    for (int j = 0; j < J; ++j) {
        const double d = steps(j) * draw_normal(rng_);
        const double u_new = u(j) + d;
        bool ok = true;
        if (u_new != u(j)) {
            const double delta_u = u_new - u(j);
            double log_ratio = -(delta_u * Pq(j) + 0.5 * delta_u * delta_u * P(j, j));
            const double th_new = std::exp(u_new);
            for (int m = 0; m < ctx_.n_wave(); ++m) {
                kcol(m) = kernel_value(t[m] - ctx_.gamma_knots[j], th_new, ctx_.config.kernel_family);
            }
            const Eigen::VectorXd dk = kcol - Kg_.col(j);
            if (use_data) {
                for (int g = 0; g < groups; ++g) {
                    const double coef = global ? s_.gamma_star(j) : s_.gamma_genus(j, g);
                    if (coef == 0.0) continue;
                    const Eigen::ArrayXd delta = dk.array() * coef;
                    log_ratio += (inv_s2_.array() * (delta * S1.col(g).array() - 0.5 * counts(g) * delta.square())).sum();
                }
            }
            ok = accept(log_ratio);
            if (ok) {
                Pq += delta_u * P.col(j);
                u(j) = u_new;
                s_.theta_gamma(j) = th_new;
                Kg_.col(j) = kcol;
                if (use_data) {
                    for (int g = 0; g < groups; ++g) {
                        const double coef = global ? s_.gamma_star(j) : s_.gamma_genus(j, g);
                        S1.col(g) -= counts(g) * coef * dk;
                    }
                }
            }
        }
        record("theta_gamma", j, ok, adapting, gain);
        accepted += ok ? 1 : 0;
    }
    if (global) {
        gamma_genus_.colwise() = Kg_ * s_.gamma_star;
    } else {
        gamma_genus_ = Kg_ * s_.gamma_genus;
    }
    const Eigen::MatrixXd delta = gamma_genus_ - old_gamma;
    for (int k = 0; k < ctx_.n_records(); ++k) resid_.col(k) -= delta.col(ctx_.rec_genus[k]);
    return accepted;
}

int GibbsSampler::mh_beta_sigma(bool adapting, double gain) {
    const int K = static_cast<int>(s_.beta_sigma.size());
    const bool use_data = !ctx_.config.mcmc.prior_only;
    const double prior_var = ctx_.config.priors.beta_sigma_var;
    const double n = ctx_.n_records();
    Eigen::VectorXd& steps = adapt_.steps["beta_sigma"];
    const Eigen::VectorXd SS = resid_.rowwise().squaredNorm();
    Eigen::VectorXd ls = ctx_.sigma_weights * s_.beta_sigma;
    const Eigen::MatrixXd& W = ctx_.sigma_weights;
    int accepted = 0;
    for (int c = 0; c < K; ++c) {
        const double d = steps(c) * draw_normal(rng_);
        bool ok = true;
        if (d != 0.0) {
            const double b_old = s_.beta_sigma(c);
            const double b_new = b_old + d;
            double log_ratio = -(b_new * b_new - b_old * b_old) / (2.0 * prior_var);
            if (use_data) {
                for (int m = 0; m < ctx_.n_wave(); ++m) {
                    const double wt = W(m, c);
                    if (wt == 0.0) continue;
                    const double l_new = ls(m) + wt * d;
                    log_ratio += -0.5 * n * (l_new - ls(m)) - 0.5 * SS(m) * (std::exp(-l_new) - std::exp(-ls(m)));
                }
            }
            ok = accept(log_ratio);
            if (ok) {
                s_.beta_sigma(c) = b_new;
                ls += W.col(c) * d;
            }
        }
        record("beta_sigma", c, ok, adapting, gain);
        accepted += ok ? 1 : 0;
    }
    rebuild_sigma2();
    return accepted;
}

int GibbsSampler::mh_phi_w(bool adapting, double gain) {
    const double lo = ctx_.phi_w_lo;
    const double hi = ctx_.phi_w_hi;
    const int r = ctx_.rank();
    Eigen::VectorXd& steps = adapt_.steps["phi_w"];
    const bool single = ctx_.config.phi_w_mode == PhiWMode::random_single ||
                        ctx_.config.eta_variant == EtaVariant::separable;
    int accepted = 0;
    if (single) {
        const double cur = s_.phi_w(0);
        const double u = to_logit(cur, lo, hi);
        const double u_new = u + steps(0) * draw_normal(rng_);
        const double phi_new = from_logit(u_new, lo, hi);
        bool ok = true;
        if (u_new != u && phi_new != cur) {
            ok = false;
            if (phi_new > lo && phi_new < hi) {
                double log_ratio = logit_jacobian(phi_new, lo, hi) - logit_jacobian(cur, lo, hi);
                for (int j = 0; j < r; ++j) {
                    log_ratio += gp_log_density(s_.w.col(j), phi_new, 1.0, ctx_.site_dist) -
                                 gp_log_density(s_.w.col(j), cur, 1.0, ctx_.site_dist);
                }
                ok = accept(log_ratio);
            }
            if (ok) {
                s_.phi_w.setConstant(phi_new);
                rebuild_w_precision();
            }
        }
        record("phi_w", 0, ok, adapting, gain);
        return ok ? 1 : 0;
    }
    for (int j = 0; j < r; ++j) {
        const double cur = s_.phi_w(j);
        const double u = to_logit(cur, lo, hi);
        const double u_new = u + steps(j) * draw_normal(rng_);
        const double phi_new = from_logit(u_new, lo, hi);
        bool ok = true;
        if (u_new != u && phi_new != cur) {
            ok = false;
            const bool ordered = (j == 0 || phi_new > s_.phi_w(j - 1)) && (j + 1 == r || phi_new < s_.phi_w(j + 1));
            if (ordered && phi_new > lo && phi_new < hi) {
                const double log_ratio = logit_jacobian(phi_new, lo, hi) - logit_jacobian(cur, lo, hi) +
                                         gp_log_density(s_.w.col(j), phi_new, 1.0, ctx_.site_dist) -
                                         gp_log_density(s_.w.col(j), cur, 1.0, ctx_.site_dist);
                ok = accept(log_ratio);
            }
            if (ok) {
                s_.phi_w(j) = phi_new;
                w_precision_[j] = factorize(exp_corr_matrix(ctx_.site_dist, phi_new), "w correlation").inverse();
            }
        }
        record("phi_w", j, ok, adapting, gain);
        accepted += ok ? 1 : 0;
    }
    return accepted;
}

double GibbsSampler::mh_log_target(MhBlock block) const {
    const PriorConfig& pr = ctx_.config.priors;
    const bool use_data = !ctx_.config.mcmc.prior_only;
    const double data = use_data ? log_likelihood(s_, ctx_) : 0.0;
    switch (block) {
    case MhBlock::phi_alpha: {
        double t = logit_jacobian(s_.phi_alpha, pr.phi_alpha_lo, pr.phi_alpha_hi);
        for (int g = 0; g < ctx_.n_genera(); ++g) {
            const auto& cells = ctx_.genus_cells[g];
            Eigen::VectorXd a(cells.size());
            for (std::size_t c = 0; c < cells.size(); ++c) a(c) = s_.alpha_spatial(cells[c]);
            t += gp_log_density(a, s_.phi_alpha, s_.sigma2_alpha_s, genus_dist_[g]);
        }
        return t;
    }
    case MhBlock::theta_beta:
        return pr.theta_beta.shape * std::log(s_.theta_beta) - pr.theta_beta.rate * s_.theta_beta + data;
    case MhBlock::theta_eta:
        return pr.theta_eta.shape * std::log(s_.theta_eta) - pr.theta_eta.rate * s_.theta_eta + data;
    case MhBlock::theta_gamma: {
        const Eigen::VectorXd q = s_.theta_gamma.array().log() - s_.mu_theta_gamma;
        return -0.5 * q.dot(ctx_.R_gamma_inv * q) / s_.sigma2_theta_gamma + data;
    }
    case MhBlock::beta_sigma:
        return -s_.beta_sigma.squaredNorm() / (2.0 * pr.beta_sigma_var) + data;
    case MhBlock::phi_w: {
        double t = 0.0;
        for (int j = 0; j < ctx_.rank(); ++j) {
            t += logit_jacobian(s_.phi_w(j), ctx_.phi_w_lo, ctx_.phi_w_hi) +
                 gp_log_density(s_.w.col(j), s_.phi_w(j), 1.0, ctx_.site_dist);
        }
        return t;
    }
    }
    return 0.0;
}

int GibbsSampler::mh_step(MhBlock block, bool adapting, double adapt_gain) {
    if (!mh_active(block)) return 0;
    switch (block) {
    case MhBlock::phi_alpha: return mh_phi_alpha(adapting, adapt_gain);
    case MhBlock::theta_beta: return mh_theta_beta(adapting, adapt_gain);
    case MhBlock::theta_gamma: return mh_theta_gamma(adapting, adapt_gain);
    case MhBlock::theta_eta: return mh_theta_eta(adapting, adapt_gain);
    case MhBlock::beta_sigma: return mh_beta_sigma(adapting, adapt_gain);
    case MhBlock::phi_w: return mh_phi_w(adapting, adapt_gain);
    }
    return 0;
}

void GibbsSampler::sweep(bool adapting, double adapt_gain) {
    refresh();
    gibbs_step();
    for (MhBlock b : mh_blocks()) mh_step(b, adapting, adapt_gain);
    // B and its bandwidth are tightly coupled; moving theta_beta with B integrated out mixes far better.
    if (ctx_.config.mcmc.collapsed_theta_beta && !ctx_.config.mcmc.prior_only && mh_active(MhBlock::theta_beta) &&
        block_active("B")) {
        mh_theta_beta_collapsed(adapting, adapt_gain);
    }
}

// ---------------------------------------------------------------- chain driver

ChainRunner::ChainRunner(const ModelContext& ctx, std::optional<ChainState> init)
    : ctx_(ctx), sampler_(ctx, init ? *init : [&] {
          Rng r(derive_seed(ctx.config.mcmc.seed, 0));
          return initial_state(ctx, r);
      }(), Rng(ctx.config.mcmc.seed)) {}

void ChainRunner::advance(std::int64_t n) {
    const McmcConfig& mc = ctx_.config.mcmc;
    const std::int64_t thin = mc.thin();
    for (std::int64_t step = 0; step < n && iteration_ < mc.n_iter; ++step) {
        const std::int64_t it = iteration_ + 1;
        const bool adapting = mc.adapt && it <= mc.n_burn;
        const double gain = 1.0 / std::pow(static_cast<double>(it), 0.6);
        try {
            sampler_.sweep(adapting, gain);
        } catch (const Error& e) {
            throw Error(e.kind(), "iteration " + std::to_string(it) + ": " + e.what());
        }
        iteration_ = it;
        if (it > mc.n_burn && (it - mc.n_burn) % thin == 0 && static_cast<std::int64_t>(kept_.size()) < mc.n_keep) {
            kept_.push_back(sampler_.state());
            kept_iterations_.push_back(it);
        }
    }
}

PosteriorSamples ChainRunner::samples() const {
    const McmcConfig& mc = ctx_.config.mcmc;
    PosteriorSamples out;
    out.schedule = {mc.n_iter, mc.n_burn, mc.thin(), mc.n_keep, mc.seed};
    out.draws = kept_;
    out.iterations = kept_iterations_;
    const AdaptState& a = sampler_.adapt();
    for (MhBlock b : mh_blocks()) {
        if (!sampler_.mh_active(b)) continue;
        const std::string name = to_string(b);
        auto it = a.kept.find(name);
        if (it == a.kept.end() || it->second.proposed == 0) it = a.burn.find(name);
        out.acceptance[name] = it == a.burn.end() ? 0.0 : it->second.rate();
        out.step_sizes[name] = a.steps.at(name);
    }
    return out;
}

PosteriorSamples run_chain(const ModelContext& ctx, std::optional<ChainState> init) {
    ChainRunner runner(ctx, std::move(init));
    runner.run();
    return runner.samples();
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[6] = {'S', 'W', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

class BinWriter {
public:
    explicit BinWriter(const std::filesystem::path& p) : os_(p, std::ios::binary) {
        if (!os_) throw Error(ErrorKind::io, "cannot write " + p.string());
    }
    template <class T>
    void pod(const T& v) { os_.write(reinterpret_cast<const char*>(&v), sizeof(T)); }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void doubles(const double* p, std::size_t n) {
        os_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    }
    void vec(const Eigen::VectorXd& v) {
        pod<std::int64_t>(v.size());
        doubles(v.data(), static_cast<std::size_t>(v.size()));
    }
    void state(const ChainState& s) {
        visit_blocks(s, [&](const BlockRef& b) {
            str(b.name);
            pod<std::int64_t>(b.rows);
            pod<std::int64_t>(b.cols);
            doubles(b.data, static_cast<std::size_t>(b.rows * b.cols));
        });
    }
    void raw(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }
    void close(const std::filesystem::path& p) {
        os_.close();
        if (!os_) throw Error(ErrorKind::io, "failed writing " + p.string());
    }

private:
    std::ofstream os_;
};

class BinReader {
public:
    explicit BinReader(const std::filesystem::path& p) : is_(p, std::ios::binary), path_(p.string()) {
        if (!is_) throw Error(ErrorKind::io, "cannot read " + path_);
    }
    template <class T>
    T pod() {
        T v{};
        is_.read(reinterpret_cast<char*>(&v), sizeof(T));
        check();
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        if (n > (1u << 26)) throw Error(ErrorKind::parse, path_ + ": corrupt checkpoint");
        std::string s(n, '\0');
        is_.read(s.data(), static_cast<std::streamsize>(n));
        check();
        return s;
    }
    void doubles(double* p, std::size_t n) {
        is_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
        check();
    }
    Eigen::VectorXd vec() {
        const auto n = pod<std::int64_t>();
        if (n < 0 || n > (1 << 26)) throw Error(ErrorKind::parse, path_ + ": corrupt checkpoint");
        Eigen::VectorXd v(n);
        doubles(v.data(), static_cast<std::size_t>(n));
        return v;
    }
    void state(ChainState& s) {
        visit_blocks(s, [&](const BlockRef& b) {
            const std::string name = str();
            const auto rows = pod<std::int64_t>();
            const auto cols = pod<std::int64_t>();
            if (name != b.name || rows != b.rows || cols != b.cols) {
                throw Error(ErrorKind::validation, path_ + ": checkpoint block " + name +
                                                       " does not match the model dimensions");
            }
            doubles(b.data, static_cast<std::size_t>(rows * cols));
        });
    }
    void raw(char* p, std::size_t n) {
        is_.read(p, static_cast<std::streamsize>(n));
        check();
    }

private:
    void check() {
        if (!is_) throw Error(ErrorKind::parse, path_ + ": truncated checkpoint");
    }
    std::ifstream is_;
    std::string path_;
};

void write_counters(BinWriter& w, const std::map<std::string, AcceptanceCounter>& m) {
    w.pod<std::uint64_t>(m.size());
    for (const auto& [k, c] : m) {
        w.str(k);
        w.pod(c.proposed);
        w.pod(c.accepted);
    }
}

std::map<std::string, AcceptanceCounter> read_counters(BinReader& r) {
    std::map<std::string, AcceptanceCounter> m;
    const auto n = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string k = r.str();
        AcceptanceCounter c;
        c.proposed = r.pod<std::int64_t>();
        c.accepted = r.pod<std::int64_t>();
        m[k] = c;
    }
    return m;
}

}  // namespace

void ChainRunner::save_checkpoint(const std::filesystem::path& path) const {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        BinWriter w(tmp);
        w.raw(kMagic, sizeof(kMagic));
        w.pod(kCheckpointVersion);
        w.str(config_hash(ctx_.config));
        w.pod<std::int64_t>(iteration_);
        w.str(serialize_rng(sampler_.rng()));
        const AdaptState& a = sampler_.adapt();
        w.pod<std::uint64_t>(a.steps.size());
        for (const auto& [k, v] : a.steps) {
            w.str(k);
            w.vec(v);
        }
        write_counters(w, a.burn);
        write_counters(w, a.kept);
        w.state(sampler_.state());
        w.pod<std::uint64_t>(kept_.size());
        for (std::size_t i = 0; i < kept_.size(); ++i) {
            w.pod<std::int64_t>(kept_iterations_[i]);
            w.state(kept_[i]);
        }
        w.close(tmp);
    }
    std::filesystem::rename(tmp, path);
}

ChainRunner ChainRunner::resume(const ModelContext& ctx, const std::filesystem::path& path) {
    BinReader r(path);
    char magic[sizeof(kMagic)];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw Error(ErrorKind::parse, path.string() + ": not a checkpoint file");
    }
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::parse, path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    if (r.str() != config_hash(ctx.config)) {
        throw Error(ErrorKind::validation, path.string() + ": checkpoint was written for a different config");
    }
    const auto iteration = r.pod<std::int64_t>();
    Rng rng;
    deserialize_rng(rng, r.str());
    AdaptState adapt;
    const auto n_steps = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_steps; ++i) {
        const std::string k = r.str();
        adapt.steps[k] = r.vec();
    }
    adapt.burn = read_counters(r);
    adapt.kept = read_counters(r);
    ChainState state = zero_state(ctx);
    r.state(state);
    ChainRunner runner(ctx, state);
    runner.iteration_ = iteration;
    runner.sampler_.rng() = rng;
    runner.sampler_.adapt() = adapt;
    const auto n_kept = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_kept; ++i) {
        runner.kept_iterations_.push_back(r.pod<std::int64_t>());
        ChainState k = zero_state(ctx);
        r.state(k);
        runner.kept_.push_back(std::move(k));
    }
    return runner;
}

// ---------------------------------------------------------------- DIC

ChainState mean_state(const std::vector<ChainState>& draws) {
    if (draws.empty()) throw Error(ErrorKind::validation, "mean_state: no draws");
    ChainState out = draws.front();
    const auto n = static_cast<double>(draws.size());
    // Accumulate deviations from the first draw so identical draws average to themselves exactly.
    std::vector<BlockRef> out_blocks;
    visit_blocks(out, [&](BlockRef b) { out_blocks.push_back(b); });
    std::vector<std::vector<double>> acc(out_blocks.size());
    for (std::size_t i = 0; i < out_blocks.size(); ++i) {
        acc[i].assign(static_cast<std::size_t>(out_blocks[i].rows * out_blocks[i].cols), 0.0);
    }
    for (const ChainState& d : draws) {
        std::size_t i = 0;
        visit_blocks(d, [&](const BlockRef& b) {
            for (std::size_t e = 0; e < acc[i].size(); ++e) acc[i][e] += b.data[e] - out_blocks[i].data[e];
            ++i;
        });
    }
    for (std::size_t i = 0; i < out_blocks.size(); ++i) {
        for (std::size_t e = 0; e < acc[i].size(); ++e) out_blocks[i].data[e] += acc[i][e] / n;
    }
    return out;
}

DicResult dic(const PosteriorSamples& samples, const ModelContext& ctx) {
    if (samples.draws.size() < 2) throw Error(ErrorKind::validation, "dic needs at least two kept draws");
    std::vector<double> dev;
    dev.reserve(samples.draws.size());
    for (const ChainState& s : samples.draws) dev.push_back(deviance(s, ctx));
    double shift = 0.0;
    for (double d : dev) shift += d - dev.front();
    DicResult r;
    r.d_bar = dev.front() + shift / static_cast<double>(dev.size());
    r.d_hat = deviance(mean_state(samples.draws), ctx);
    r.p_d = r.d_bar - r.d_hat;
    r.dic = r.d_bar + r.p_d;
    return r;
}

}  // namespace spacewave
