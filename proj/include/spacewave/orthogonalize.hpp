#pragma once

#include "spacewave/likelihood.hpp"
#include "spacewave/sampler.hpp"

#include <Eigen/Dense>

#include <array>
#include <string>
#include <vector>

namespace spacewave {

/// Projections onto the column spaces of the record-expanded covariates X (N_rep x p) and the
/// coefficient kernel K (N_wave x J). P = P_X kron P_K acts on vec of an N_wave x N_rep surface E
/// as P_K E P_X, which is how it is always applied.
struct ProjectionPair {
    Eigen::MatrixXd X;
    Eigen::MatrixXd K;
    Eigen::MatrixXd X_solve;  // (X'X)^{-1} X', p x N_rep
    Eigen::MatrixXd K_solve;  // (K'K)^{-1} K', J x N_wave

    [[nodiscard]] Eigen::MatrixXd P_X() const { return X * X_solve; }
    [[nodiscard]] Eigen::MatrixXd P_K() const { return K * K_solve; }

    /// Coefficients of P E: the J x p matrix C with P_K E P_X = K C X'.
    [[nodiscard]] Eigen::MatrixXd coefficients(const Eigen::MatrixXd& E) const;
    /// P_K E P_X without forming either N_rep x N_rep or the full Kronecker product.
    [[nodiscard]] Eigen::MatrixXd apply(const Eigen::MatrixXd& E) const;
    /// E - P E.
    [[nodiscard]] Eigen::MatrixXd apply_complement(const Eigen::MatrixXd& E) const;
};

/// Throws Error(numerical) naming the dependent columns when X or K is rank deficient.
[[nodiscard]] ProjectionPair build_projections(const Eigen::MatrixXd& X, const Eigen::MatrixXd& K,
                                               const std::vector<std::string>& x_names = {},
                                               const std::vector<std::string>& k_names = {});

/// The (N_rep N_wave)^2 matrix P_X kron P_K. Only for checking small cases.
[[nodiscard]] Eigen::MatrixXd materialized_projection(const ProjectionPair& p);

enum class Term { epsilon, regression, intercept, gamma, eta };
inline constexpr std::array<Term, 5> kTerms = {Term::epsilon, Term::regression, Term::intercept, Term::gamma,
                                               Term::eta};
[[nodiscard]] std::string to_string(Term t);

/// One draw after orthogonalization.
struct UnconfoundedDraw {
    Eigen::MatrixXd B_star;        // p x J
    Eigen::VectorXd gamma_coef;    // J; row of the augmented B* for gamma as a fixed effect, else empty
    Eigen::MatrixXd eta_star;      // sum of the mean-zero random surfaces, N_wave x N_rep
    /// Mean-zero surfaces, N_wave x N_rep each. `regression` is K B*' X' and the random terms are
    /// projected onto the complement of span(X kron K); in fixed-effect mode `gamma` also carries
    /// the fitted fixed part K c.
    TermSurfaces orthogonalized;
    TermSurfaces raw;  // intercept is alpha_i + alpha_i(s) - alpha
};

/// B* = B + (X'X)^{-1} X' eta*' K (K'K)^{-1} with X the record-expanded covariates. With
/// config.gamma_fixed_effect and a global gamma, X gains a leading column of ones and gamma(t)
/// contributes its least-squares kernel fit as that column's coefficients.
[[nodiscard]] UnconfoundedDraw unconfound_draw(const ChainState& state, const ModelContext& ctx);

/// B* for every kept draw; the surfaces are dropped to keep memory flat.
[[nodiscard]] std::vector<UnconfoundedDraw> unconfound(const PosteriorSamples& samples, const ModelContext& ctx,
                                                       int threads = 1);

struct VarianceDecomposition {
    bool orthogonalized = false;
    Eigen::MatrixXd overall;  // n_draws x 5 proportions, columns in kTerms order
    std::vector<Eigen::MatrixXd> by_wavelength;  // per draw, N_wave x 5 between-spectrum proportions
};

/// Empirical variance of each term over all (record, wavelength) cells, as proportions of the
/// total; and at each wavelength the variance across records.
[[nodiscard]] VarianceDecomposition variance_decomposition(const PosteriorSamples& samples, const ModelContext& ctx,
                                                           bool orthogonalized, int threads = 1);

/// Proportions for one set of surfaces; epsilon is `residual`.
void decompose(const TermSurfaces& terms, const Eigen::MatrixXd& residual, Eigen::RowVectorXd& overall,
               Eigen::MatrixXd& by_wavelength);

/// Mean over the grid of |beta_j(t)| for each covariate; beta = K B'.
[[nodiscard]] Eigen::VectorXd covariate_importance(const Eigen::MatrixXd& B, const Eigen::MatrixXd& K);

/// n_draws x p importance for the kept draws of B (or of B* when `unconfounded` is given).
[[nodiscard]] Eigen::MatrixXd covariate_importance(const PosteriorSamples& samples, const ModelContext& ctx,
                                                   const std::vector<UnconfoundedDraw>* unconfounded = nullptr);

}  // namespace spacewave
