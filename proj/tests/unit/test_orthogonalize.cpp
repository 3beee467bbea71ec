#include "fixtures.hpp"

#include "spacewave/error.hpp"
#include "spacewave/orthogonalize.hpp"

#include <doctest.h>

using namespace fixtures;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = draw_normal(rng);
    return m;
}

/// Hat matrix from the thin SVD: U U'.
Eigen::MatrixXd svd_hat(const Eigen::MatrixXd& X) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU);
    return svd.matrixU() * svd.matrixU().transpose();
}

PosteriorSamples random_samples(const ModelContext& ctx, int n, std::uint64_t seed) {
    PosteriorSamples s;
    for (int i = 0; i < n; ++i) s.draws.push_back(random_state(ctx, seed + static_cast<std::uint64_t>(i)));
    return s;
}

}  // namespace

TEST_SUITE("orthogonalize") {

TEST_CASE("a single column gives a rank-one projector") {
    const Eigen::VectorXd x = Eigen::Vector4d(1.0, -2.0, 0.5, 3.0);
    const ProjectionPair p = build_projections(x, Eigen::MatrixXd::Ones(3, 1));
    const Eigen::MatrixXd want = x * x.transpose() / x.squaredNorm();
    CHECK((p.P_X() - want).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((p.P_K() - Eigen::MatrixXd::Constant(3, 3, 1.0 / 3.0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("projectors fix their span and match the hat matrix") {
    const Eigen::MatrixXd X = random_matrix(6, 2, 1);
    const Eigen::MatrixXd K = random_matrix(5, 3, 2);
    const ProjectionPair p = build_projections(X, K);
    for (const auto& [P, M] : {std::pair{p.P_X(), X}, std::pair{p.P_K(), K}}) {
        CHECK((P * M - M).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((P * P - P).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((P - P.transpose()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((P - svd_hat(M)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("rank deficiency names the dependent column") {
    Eigen::MatrixXd X(5, 3);
    X.col(0) << 1, 2, 3, 4, 5;
    X.col(1) << 0, 1, 0, 1, 0;
    X.col(2) = X.col(0) - 2.0 * X.col(1);
    try {
        (void)build_projections(X, Eigen::MatrixXd::Ones(2, 1), {"elev", "soil", "mix"});
        FAIL("expected a rank error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(e.kind() == ErrorKind::numerical);
        CHECK(msg.find("rank 2 of 3") != std::string::npos);
        const bool named = msg.find("elev") != std::string::npos || msg.find("soil") != std::string::npos ||
                           msg.find("mix") != std::string::npos;
        CHECK(named);
    }
}

TEST_CASE("the factored projection equals the Kronecker product") {
    const Eigen::MatrixXd X = random_matrix(12, 3, 5);
    const Eigen::MatrixXd K = random_matrix(8, 2, 6);
    const ProjectionPair p = build_projections(X, K);
    const Eigen::MatrixXd P = materialized_projection(p);
    REQUIRE(P.rows() == 96);
    const Eigen::MatrixXd E = random_matrix(8, 12, 7);
    const Eigen::MatrixXd PE = p.apply(E);
    const Eigen::VectorXd want = P * Eigen::Map<const Eigen::VectorXd>(E.data(), E.size());
    CHECK((Eigen::Map<const Eigen::VectorXd>(PE.data(), PE.size()) - want).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((P * (Eigen::MatrixXd::Identity(96, 96) - P)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((p.apply(p.apply_complement(E))).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("surfaces inside the span are removed entirely") {
    const Eigen::MatrixXd X = random_matrix(10, 2, 8);
    const Eigen::MatrixXd K = random_matrix(6, 3, 9);
    const ProjectionPair p = build_projections(X, K);
    const Eigen::MatrixXd C = random_matrix(3, 2, 10);
    const Eigen::MatrixXd E = K * C * X.transpose();
    CHECK(p.apply_complement(E).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((p.coefficients(E) - C).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("two sites, two wavelengths, one covariate, one knot") {
    // eta* rows are wavelengths, columns records
    Eigen::MatrixXd X(2, 1), K(2, 1), E(2, 2);
    X << 1.0, 2.0;
    K << 1.0, 0.5;
    E << 1.0, 2.0, 3.0, 4.0;
    const ProjectionPair p = build_projections(X, K);
    // (x'x)^-1 x' eta*' k (k'k)^-1 = (1 (1 + 1.5) + 2 (2 + 2)) / (5 * 1.25) = 1.68
    CHECK(p.coefficients(E)(0, 0) == doctest::Approx(1.68).epsilon(1e-14));
    const double b_star = 0.3 + p.coefficients(E)(0, 0);
    CHECK(b_star == doctest::Approx(1.98).epsilon(1e-14));
}

TEST_CASE("no random effects leave B unchanged") {
    const Fit f = simulate_fit(small_config(EtaVariant::factor), 4);
    ChainState s = random_state(f.ctx, 3);
    s.alpha_genus.setConstant(s.alpha);
    s.alpha_spatial.setZero();
    s.gamma_star.setZero();
    s.w.setZero();
    const UnconfoundedDraw u = unconfound_draw(s, f.ctx);
    CHECK(u.eta_star.cwiseAbs().maxCoeff() == 0.0);
    CHECK(u.B_star == s.B);
}

TEST_CASE("B star matches the normal-equations formula") {
    for (EtaVariant v : {EtaVariant::factor, EtaVariant::spatial_convolution}) {
        const Fit f = simulate_fit(small_config(v), 6, 8, 3, 12, 2);
        const ModelContext& ctx = f.ctx;
        const ChainState s = random_state(ctx, 11);
        const Eigen::MatrixXd Kb = ctx.kernel_beta(s.theta_beta);
        const Eigen::MatrixXd X = ctx.X_rec;
        // eta* from the entrywise mean with the intercept and regression parts removed
        const Eigen::MatrixXd eta_star =
            (oracle_mean(s, ctx).array() - s.alpha).matrix() - Kb * s.B.transpose() * X.transpose();
        const Eigen::MatrixXd want = s.B + ((X.transpose() * X).inverse() * X.transpose() * eta_star.transpose() * Kb *
                                            (Kb.transpose() * Kb).inverse());
        const UnconfoundedDraw u = unconfound_draw(s, ctx);
        CHECK((u.B_star - want).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((u.eta_star - eta_star).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("orthogonalizing reshuffles but never changes the fit") {
    for (bool fixed : {false, true}) {
        ModelConfig c = small_config(EtaVariant::factor);
        c.gamma_fixed_effect = fixed;
        const Fit f = simulate_fit(c, 12);
        for (std::uint64_t seed = 1; seed <= 4; ++seed) {
            const ChainState s = random_state(f.ctx, seed);
            const UnconfoundedDraw u = unconfound_draw(s, f.ctx);
            const Eigen::MatrixXd refit = (u.orthogonalized.total().array() + s.alpha).matrix();
            CHECK((refit - mean_surface(s, f.ctx)).cwiseAbs().maxCoeff() < 1e-9);
            CHECK(((u.raw.total().array() + s.alpha).matrix() - mean_surface(s, f.ctx)).cwiseAbs().maxCoeff() < 1e-12);
            if (fixed) {
                CHECK(u.gamma_coef.size() == f.ctx.j_beta());
            } else {
                CHECK(u.gamma_coef.size() == 0);
            }
            // the random parts are orthogonal to the covariate-kernel span
            const ProjectionPair p = build_projections(f.ctx.X_rec, f.ctx.kernel_beta(s.theta_beta));
            CHECK(p.apply(u.orthogonalized.eta).cwiseAbs().maxCoeff() < 1e-9);
            CHECK(p.apply(u.orthogonalized.intercept).cwiseAbs().maxCoeff() < 1e-9);
        }
    }
}

TEST_CASE("proportions are normalized") {
    const Fit f = simulate_fit(small_config(), 14);
    const PosteriorSamples s = random_samples(f.ctx, 5, 20);
    for (bool orth : {false, true}) {
        const VarianceDecomposition vd = variance_decomposition(s, f.ctx, orth);
        REQUIRE(vd.overall.rows() == 5);
        CHECK((vd.overall.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-10);
        CHECK(vd.overall.minCoeff() >= 0.0);
        CHECK(vd.overall.maxCoeff() <= 1.0);
        for (const auto& bw : vd.by_wavelength) {
            CHECK((bw.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("only noise means all variance is noise") {
    TermSurfaces t;
    t.intercept = t.regression = t.gamma = t.eta = Eigen::MatrixXd::Zero(4, 6);
    const Eigen::MatrixXd resid = random_matrix(4, 6, 3);
    Eigen::RowVectorXd overall;
    Eigen::MatrixXd bw;
    decompose(t, resid, overall, bw);
    CHECK(overall(0) == 1.0);
    CHECK(overall.tail(4).cwiseAbs().maxCoeff() == 0.0);
    CHECK((bw.col(0).array() == 1.0).all());
}

TEST_CASE("a constant shift of the responses leaves proportions alone") {
    Fit f = simulate_fit(small_config(), 15);
    const PosteriorSamples s = random_samples(f.ctx, 4, 40);
    ModelContext shifted = f.ctx;
    shifted.Y.array() += 3.25;
    for (bool orth : {false, true}) {
        const VarianceDecomposition a = variance_decomposition(s, f.ctx, orth);
        const VarianceDecomposition b = variance_decomposition(s, shifted, orth);
        CHECK((a.overall - b.overall).cwiseAbs().maxCoeff() < 1e-10);
        for (std::size_t d = 0; d < a.by_wavelength.size(); ++d) {
            CHECK((a.by_wavelength[d] - b.by_wavelength[d]).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("a dominant eta is recovered as the largest term") {
    ModelConfig c = small_config(EtaVariant::factor);
    c.mcmc.n_iter = 1200;
    c.mcmc.n_burn = 600;
    c.mcmc.n_keep = 200;
    SynthSpec spec;
    spec.config = c;
    spec.n_sites = 12;
    spec.grid = WavelengthGrid::linspace(450, 950, 20);
    spec.hyper.sigma2_A = 1.0;
    spec.hyper.sigma2_alpha = 0.01;
    spec.hyper.sigma2_alpha_s = 0.01;
    spec.hyper.sigma2_beta = 0.005;
    spec.hyper.sigma2_gamma = 0.01;
    Rng rng(2);
    const SynthResult r = simulate(spec, rng);
    const DesignIndex d = build_design(r.data);
    const ModelContext ctx = make_context(r.data, d, c);
    const PosteriorSamples samples = run_chain(ctx);
    for (bool orth : {false, true}) {
        const VarianceDecomposition vd = variance_decomposition(samples, ctx, orth);
        int largest = 0;
        for (Eigen::Index i = 0; i < vd.overall.rows(); ++i) {
            Eigen::Index arg = 0;
            vd.overall.row(i).maxCoeff(&arg);
            largest += arg == static_cast<Eigen::Index>(Term::eta) ? 1 : 0;
        }
        const double share = static_cast<double>(largest) / static_cast<double>(vd.overall.rows());
        MESSAGE(std::string(orth ? "orthogonalized" : "raw") << " eta largest in " << share);
        CHECK(share >= 0.95);
    }
}

TEST_CASE("covariate importance") {
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(500, 1);
    CHECK(covariate_importance(Eigen::MatrixXd::Constant(1, 1, -0.7), ones)(0) == doctest::Approx(0.7));

    const Eigen::MatrixXd K = random_matrix(50, 4, 3);
    const Eigen::MatrixXd B = random_matrix(2, 4, 4);
    CHECK((covariate_importance(B, K) - covariate_importance(Eigen::MatrixXd(-B), K)).cwiseAbs().maxCoeff() == 0.0);

    const WavelengthGrid grid = WavelengthGrid::linspace(450, 950, 500);
    Eigen::MatrixXd ramp(500, 1);
    double want = 0.0;
    for (std::size_t m = 0; m < grid.size(); ++m) {
        ramp(static_cast<Eigen::Index>(m), 0) = 2.0 * (grid[m] - 450.0) / 500.0 - 1.0;
        want += std::abs(ramp(static_cast<Eigen::Index>(m), 0));
    }
    want /= 500.0;
    const double got = covariate_importance(Eigen::MatrixXd::Ones(1, 1), ramp)(0);
    CHECK(std::abs(got - want) < 1e-12);
    CHECK(got == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("importance over draws uses B or B star") {
    const Fit f = simulate_fit(small_config(), 18);
    const PosteriorSamples s = random_samples(f.ctx, 3, 60);
    const std::vector<UnconfoundedDraw> u = unconfound(s, f.ctx);
    const Eigen::MatrixXd raw = covariate_importance(s, f.ctx);
    const Eigen::MatrixXd star = covariate_importance(s, f.ctx, &u);
    CHECK(raw.rows() == 3);
    CHECK(raw.cols() == f.ctx.n_covariates());
    for (int d = 0; d < 3; ++d) {
        const Eigen::MatrixXd K = f.ctx.kernel_beta(s.draws[d].theta_beta);
        CHECK((raw.row(d).transpose() - covariate_importance(s.draws[d].B, K)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((star.row(d).transpose() - covariate_importance(u[d].B_star, K)).cwiseAbs().maxCoeff() == 0.0);
    }
    const std::vector<UnconfoundedDraw> parallel = unconfound(s, f.ctx, 3);
    for (int d = 0; d < 3; ++d) CHECK(parallel[d].B_star == u[d].B_star);
}

}  // TEST_SUITE
