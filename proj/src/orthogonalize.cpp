#include "spacewave/orthogonalize.hpp"

#include "spacewave/error.hpp"
#include "spacewave/parallel.hpp"

#include <cmath>

namespace spacewave {

namespace {

// (M'M)^{-1} M' after checking full column rank.
Eigen::MatrixXd left_solve(const Eigen::MatrixXd& M, const std::vector<std::string>& names, const std::string& what) {
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
    if (qr.rank() < M.cols()) {
        std::string cols;
        const auto perm = qr.colsPermutation().indices();
        for (Eigen::Index i = qr.rank(); i < M.cols(); ++i) {
            const int c = perm(i);
            if (!cols.empty()) cols += ", ";
            cols += static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)]
                                                                 : "column " + std::to_string(c);
        }
        throw Error(ErrorKind::numerical, what + " is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                                              std::to_string(M.cols()) + "); dependent: " + cols);
    }
    const Eigen::MatrixXd gram = M.transpose() * M;
    return gram.llt().solve(M.transpose());
}

double population_variance(const Eigen::Ref<const Eigen::MatrixXd>& x) {
    if (x.size() == 0) return 0.0;
    const double mean = x.mean();
    return (x.array() - mean).square().mean();
}

TermSurfaces raw_terms(const ChainState& s, const ModelContext& ctx) {
    TermSurfaces t = term_surfaces(s, ctx);
    t.intercept.array() -= s.alpha;
    return t;
}

}  // namespace

Eigen::MatrixXd ProjectionPair::coefficients(const Eigen::MatrixXd& E) const {
    return K_solve * E * X_solve.transpose();
}

Eigen::MatrixXd ProjectionPair::apply(const Eigen::MatrixXd& E) const {
    return K * coefficients(E) * X.transpose();
}

Eigen::MatrixXd ProjectionPair::apply_complement(const Eigen::MatrixXd& E) const {
    return E - apply(E);
}

ProjectionPair build_projections(const Eigen::MatrixXd& X, const Eigen::MatrixXd& K,
                                 const std::vector<std::string>& x_names, const std::vector<std::string>& k_names) {
    if (X.cols() == 0 || K.cols() == 0) throw Error(ErrorKind::validation, "projection needs at least one column");
    ProjectionPair p;
    p.X = X;
    p.K = K;
    p.X_solve = left_solve(X, x_names, "covariate matrix");
    p.K_solve = left_solve(K, k_names, "coefficient kernel matrix");
    return p;
}

Eigen::MatrixXd materialized_projection(const ProjectionPair& p) {
    const Eigen::MatrixXd PX = p.P_X();
    const Eigen::MatrixXd PK = p.P_K();
    Eigen::MatrixXd out(PX.rows() * PK.rows(), PX.cols() * PK.cols());
    for (Eigen::Index i = 0; i < PX.rows(); ++i) {
        for (Eigen::Index j = 0; j < PX.cols(); ++j) {
            out.block(i * PK.rows(), j * PK.cols(), PK.rows(), PK.cols()) = PX(i, j) * PK;
        }
    }
    return out;
}

std::string to_string(Term t) {
    switch (t) {
        case Term::epsilon: return "epsilon";
        case Term::regression: return "regression";
        case Term::intercept: return "intercept";
        case Term::gamma: return "gamma";
        case Term::eta: return "eta";
    }
    return "unknown";
}

UnconfoundedDraw unconfound_draw(const ChainState& state, const ModelContext& ctx) {
    UnconfoundedDraw out;
    out.raw = raw_terms(state, ctx);
    out.B_star = state.B;
    const bool fixed_gamma = ctx.config.gamma_fixed_effect && ctx.config.gamma_mode == GammaMode::global;
    const int p = ctx.n_covariates();
    const int n_rep = ctx.n_records();

    TermSurfaces& o = out.orthogonalized;
    if (p == 0 && !fixed_gamma) {
        out.eta_star = out.raw.gamma + out.raw.intercept + out.raw.eta;
        o = out.raw;
        return out;
    }
    const Eigen::MatrixXd K = ctx.kernel_beta(state.theta_beta);
    Eigen::MatrixXd X = ctx.X_rec;
    std::vector<std::string> x_names = ctx.covariate_names;
    Eigen::MatrixXd B = state.B;
    Eigen::MatrixXd gamma_rest = out.raw.gamma;
    if (fixed_gamma) {
        X.resize(n_rep, p + 1);
        X.col(0).setOnes();
        X.rightCols(p) = ctx.X_rec;
        x_names.insert(x_names.begin(), "(intercept)");
    }
    std::vector<std::string> k_names;
    const auto& knots = ctx.config.beta_mode == BetaMode::functional ? ctx.beta_knots : std::vector<double>{};
    for (double k : knots) k_names.push_back("knot " + format_double(k));
    const ProjectionPair proj = build_projections(X, K, x_names, k_names);

    Eigen::VectorXd c;
    if (fixed_gamma) {
        c = proj.K_solve * out.raw.gamma.col(0);
        gamma_rest.colwise() -= K * c;
        B.resize(p + 1, K.cols());
        B.row(0) = c.transpose();
        B.bottomRows(p) = state.B;
    }
    out.eta_star = gamma_rest + out.raw.intercept + out.raw.eta;
    const Eigen::MatrixXd B_star = B + proj.coefficients(out.eta_star).transpose();

    o.intercept = proj.apply_complement(out.raw.intercept);
    o.eta = proj.apply_complement(out.raw.eta);
    o.gamma = proj.apply_complement(gamma_rest);
    if (fixed_gamma) {
        out.gamma_coef = B_star.row(0).transpose();
        out.B_star = B_star.bottomRows(p);
        o.gamma.colwise() += K * out.gamma_coef;
    } else {
        out.B_star = B_star;
    }
    o.regression = p > 0 ? Eigen::MatrixXd(K * out.B_star.transpose() * ctx.X_rec.transpose())
                         : Eigen::MatrixXd::Zero(ctx.n_wave(), n_rep);
    return out;
}

std::vector<UnconfoundedDraw> unconfound(const PosteriorSamples& samples, const ModelContext& ctx, int threads) {
    std::vector<UnconfoundedDraw> out(samples.draws.size());
    parallel_for(static_cast<int>(out.size()), threads, [&](int d) {
        UnconfoundedDraw u = unconfound_draw(samples.draws[static_cast<std::size_t>(d)], ctx);
        u.eta_star.resize(0, 0);
        u.orthogonalized = {};
        u.raw = {};
        out[static_cast<std::size_t>(d)] = std::move(u);
    });
    return out;
}

void decompose(const TermSurfaces& terms, const Eigen::MatrixXd& residual, Eigen::RowVectorXd& overall,
               Eigen::MatrixXd& by_wavelength) {
    const std::array<const Eigen::MatrixXd*, 5> parts = {&residual, &terms.regression, &terms.intercept, &terms.gamma,
                                                         &terms.eta};
    overall.resize(static_cast<Eigen::Index>(parts.size()));
    by_wavelength.resize(residual.rows(), static_cast<Eigen::Index>(parts.size()));
    for (std::size_t j = 0; j < parts.size(); ++j) overall(static_cast<Eigen::Index>(j)) = population_variance(*parts[j]);
    const double total = overall.sum();
    if (total > 0.0) {
        overall /= total;
    } else {
        overall.setZero();
    }
    const Eigen::Index n_wave = residual.rows();
    for (Eigen::Index m = 0; m < n_wave; ++m) {
        for (std::size_t j = 0; j < parts.size(); ++j) {
            by_wavelength(m, static_cast<Eigen::Index>(j)) = population_variance(parts[j]->row(m));
        }
        const double row_total = by_wavelength.row(m).sum();
        if (row_total > 0.0) {
            by_wavelength.row(m) /= row_total;
        } else {
            by_wavelength.row(m).setZero();
        }
    }
}

VarianceDecomposition variance_decomposition(const PosteriorSamples& samples, const ModelContext& ctx,
                                             bool orthogonalized, int threads) {
    VarianceDecomposition out;
    out.orthogonalized = orthogonalized;
    const auto n = static_cast<Eigen::Index>(samples.draws.size());
    out.overall.resize(n, static_cast<Eigen::Index>(kTerms.size()));
    out.by_wavelength.assign(static_cast<std::size_t>(n),
                             Eigen::MatrixXd(ctx.n_wave(), static_cast<Eigen::Index>(kTerms.size())));
    parallel_for(static_cast<int>(n), threads, [&](int d) {
        const ChainState& s = samples.draws[static_cast<std::size_t>(d)];
        TermSurfaces terms;
        if (orthogonalized) {
            terms = unconfound_draw(s, ctx).orthogonalized;
        } else {
            terms = raw_terms(s, ctx);
        }
        const Eigen::MatrixXd residual = ctx.Y - mean_surface(s, ctx);
        Eigen::RowVectorXd overall(static_cast<Eigen::Index>(kTerms.size()));
        decompose(terms, residual, overall, out.by_wavelength[static_cast<std::size_t>(d)]);
        out.overall.row(d) = overall;
    });
    return out;
}

Eigen::VectorXd covariate_importance(const Eigen::MatrixXd& B, const Eigen::MatrixXd& K) {
    const Eigen::MatrixXd beta = K * B.transpose();  // N_wave x p
    return beta.cwiseAbs().colwise().mean().transpose();
}

Eigen::MatrixXd covariate_importance(const PosteriorSamples& samples, const ModelContext& ctx,
                                     const std::vector<UnconfoundedDraw>* unconfounded) {
    if (unconfounded && unconfounded->size() != samples.draws.size()) {
        throw Error(ErrorKind::validation, "unconfounded draws do not match the samples");
    }
    const auto n = static_cast<Eigen::Index>(samples.draws.size());
    Eigen::MatrixXd out(n, ctx.n_covariates());
    for (Eigen::Index d = 0; d < n; ++d) {
        const ChainState& s = samples.draws[static_cast<std::size_t>(d)];
        const Eigen::MatrixXd& B = unconfounded ? (*unconfounded)[static_cast<std::size_t>(d)].B_star : s.B;
        out.row(d) = covariate_importance(B, ctx.kernel_beta(s.theta_beta)).transpose();
    }
    return out;
}

}  // namespace spacewave
