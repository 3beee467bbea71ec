#pragma once

#include "spacewave/config.hpp"
#include "spacewave/data_model.hpp"
#include "spacewave/kernel_basis.hpp"
#include "spacewave/rng.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace spacewave {

/// exp(-phi * d) applied entrywise to a distance matrix.
[[nodiscard]] Eigen::MatrixXd exp_corr_matrix(const Eigen::MatrixXd& distances, double phi);
[[nodiscard]] Eigen::MatrixXd exp_corr_matrix(const Eigen::MatrixX2d& coords, CoordinateSystem units, double phi);

/// Cholesky factor of a symmetric matrix after the jitter ladder:
/// none, then 1e-10, 1e-9, ..., 1e-6 times trace/n added to the diagonal.
struct JitteredCholesky {
    Eigen::MatrixXd L;  // lower triangular
    double jitter = 0.0;

    [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
    [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
    [[nodiscard]] Eigen::MatrixXd inverse() const;
    [[nodiscard]] double log_det() const;
};

/// Throws Error(numerical) naming `what` when every rung of the ladder fails.
[[nodiscard]] JitteredCholesky factorize(const Eigen::MatrixXd& cov, const std::string& what = "covariance");

struct Gaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// mean + L z with L L' = cov (after jitter).
[[nodiscard]] Eigen::VectorXd chol_sample(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng);

/// Draw from the Gaussian with the given precision matrix and linear term b: N(Q^{-1} b, Q^{-1}).
[[nodiscard]] Eigen::VectorXd sample_from_precision(const Eigen::MatrixXd& precision, const Eigen::VectorXd& b,
                                                    Rng& rng, const std::string& what);

/// Kriging for a zero-mean GP with covariance sigma2 * exp(-phi d).
[[nodiscard]] Gaussian gp_conditional(const Eigen::MatrixX2d& observed_coords, const Eigen::VectorXd& observed_values,
                                      const Eigen::MatrixX2d& query_coords, double phi, double sigma2,
                                      CoordinateSystem units);

/// z(s) = A w(s) with independent unit-variance exponential GPs w_j.
struct LatentFactorField {
    Eigen::MatrixXd A;       // J x r
    Eigen::VectorXd decays;  // r
    EtaVariant variant = EtaVariant::factor;

    void validate() const;
    /// Separable variant: Cov(z(s), z(s')) = exp(-phi d) V with A = chol(V).
    static LatentFactorField separable(const Eigen::MatrixXd& V, double phi);
};

/// cov(eta(s,t), eta(s',t')) = K(t)' A diag(rho_j(d)) A' K(t').
[[nodiscard]] double eta_cov(double t, double t_prime, const Eigen::Vector2d& s, const Eigen::Vector2d& s_prime,
                             const LatentFactorField& field, const KernelBasis& basis, CoordinateSystem units);

/// Default decays: one value (geometric midpoint) or r log-spaced values on [3/d_max, 3/d_min].
[[nodiscard]] Eigen::VectorXd default_decays(const Eigen::MatrixXd& distances, int r, bool single);
/// [3/d_max, 3/d_min] over positive pairwise distances.
[[nodiscard]] std::pair<double, double> decay_range(const Eigen::MatrixXd& distances);

}  // namespace spacewave
