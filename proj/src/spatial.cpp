#include "spacewave/spatial.hpp"

#include "spacewave/error.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace spacewave {

Eigen::MatrixXd exp_corr_matrix(const Eigen::MatrixXd& distances, double phi) {
    if (!(phi > 0.0)) {
        throw Error(ErrorKind::validation, "decay must be positive");
    }
    return (-phi * distances.array()).exp().matrix();
}

Eigen::MatrixXd exp_corr_matrix(const Eigen::MatrixX2d& coords, CoordinateSystem units, double phi) {
    return exp_corr_matrix(distance_matrix(coords, units), phi);
}

Eigen::VectorXd JitteredCholesky::solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd y = L.triangularView<Eigen::Lower>().solve(b);
    return L.transpose().triangularView<Eigen::Upper>().solve(y);
}

Eigen::MatrixXd JitteredCholesky::solve(const Eigen::MatrixXd& b) const {
    Eigen::MatrixXd y = L.triangularView<Eigen::Lower>().solve(b);
    return L.transpose().triangularView<Eigen::Upper>().solve(y);
}

Eigen::MatrixXd JitteredCholesky::inverse() const {
    return solve(Eigen::MatrixXd::Identity(L.rows(), L.cols()).eval());
}

double JitteredCholesky::log_det() const {
    return 2.0 * L.diagonal().array().log().sum();
}

JitteredCholesky factorize(const Eigen::MatrixXd& cov, const std::string& what) {
    const Eigen::Index n = cov.rows();
    if (n != cov.cols()) {
        throw Error(ErrorKind::numerical, what + ": matrix is not square");
    }
    JitteredCholesky out;
    if (n == 0) {
        out.L.resize(0, 0);
        return out;
    }
    if (!cov.allFinite()) {
        throw Error(ErrorKind::numerical, what + ": matrix has non-finite entries");
    }
    const double trace = cov.trace();
    const double scale = trace > 0.0 ? trace / static_cast<double>(n) : 1.0;
    double jitter = 0.0;
    for (int rung = 0; rung <= 5; ++rung) {
        if (rung > 0) jitter = scale * std::pow(10.0, -11 + rung);
        Eigen::MatrixXd m = cov;
        m.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) {
            out.L = llt.matrixL();
            out.jitter = jitter;
            return out;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
    std::ostringstream os;
    os << what << ": Cholesky failed after maximum jitter " << scale * 1e-6 << " (n=" << n
       << ", min eigenvalue " << eig.eigenvalues().minCoeff() << ", max eigenvalue " << eig.eigenvalues().maxCoeff()
       << ")";
    throw Error(ErrorKind::numerical, os.str());
}

Eigen::VectorXd chol_sample(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng) {
    if (mean.size() != cov.rows()) {
        throw Error(ErrorKind::validation, "chol_sample: mean and covariance sizes differ");
    }
    const JitteredCholesky f = factorize(cov, "chol_sample");
    return mean + f.L * draw_normal_vector(rng, mean.size());
}

Eigen::VectorXd sample_from_precision(const Eigen::MatrixXd& precision, const Eigen::VectorXd& b, Rng& rng,
                                      const std::string& what) {
    const JitteredCholesky f = factorize(precision, what);
    const Eigen::VectorXd mean = f.solve(b);
    // Q = L L'  =>  x = mean + L'^{-1} z has covariance Q^{-1}.
    const Eigen::VectorXd z = draw_normal_vector(rng, b.size());
    return mean + f.L.transpose().triangularView<Eigen::Upper>().solve(z);
}

Gaussian gp_conditional(const Eigen::MatrixX2d& observed_coords, const Eigen::VectorXd& observed_values,
                        const Eigen::MatrixX2d& query_coords, double phi, double sigma2, CoordinateSystem units) {
    if (!(sigma2 > 0.0)) {
        throw Error(ErrorKind::validation, "gp_conditional: variance must be positive");
    }
    const Eigen::MatrixXd c_oo = sigma2 * exp_corr_matrix(distance_matrix(observed_coords, units), phi);
    const Eigen::MatrixXd c_qo = sigma2 * exp_corr_matrix(cross_distance(query_coords, observed_coords, units), phi);
    const Eigen::MatrixXd c_qq = sigma2 * exp_corr_matrix(distance_matrix(query_coords, units), phi);
    Gaussian g;
    if (observed_coords.rows() == 0) {
        g.mean = Eigen::VectorXd::Zero(query_coords.rows());
        g.cov = c_qq;
        return g;
    }
    const JitteredCholesky f = factorize(c_oo, "gp_conditional");
    const Eigen::MatrixXd w = f.solve(Eigen::MatrixXd(c_qo.transpose()));  // C_oo^{-1} C_oq
    g.mean = w.transpose() * observed_values;
    g.cov = c_qq - c_qo * w;
    g.cov = 0.5 * (g.cov + g.cov.transpose()).eval();
    return g;
}

void LatentFactorField::validate() const {
    if (A.cols() != decays.size()) {
        throw Error(ErrorKind::validation, "loading columns must match the number of decays");
    }
    for (Eigen::Index j = 0; j < decays.size(); ++j) {
        if (!(decays(j) > 0.0)) {
            throw Error(ErrorKind::validation, "decays must be positive");
        }
        if ((variant == EtaVariant::factor || variant == EtaVariant::lmc) && j > 0 && !(decays(j) > decays(j - 1))) {
            throw Error(ErrorKind::validation, "decays must be strictly increasing");
        }
    }
}

LatentFactorField LatentFactorField::separable(const Eigen::MatrixXd& V, double phi) {
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    if (llt.info() != Eigen::Success) {
        throw Error(ErrorKind::validation, "separable V must be positive definite");
    }
    LatentFactorField f;
    f.A = llt.matrixL();
    f.decays = Eigen::VectorXd::Constant(V.rows(), phi);
    f.variant = EtaVariant::separable;
    return f;
}

double eta_cov(double t, double t_prime, const Eigen::Vector2d& s, const Eigen::Vector2d& s_prime,
               const LatentFactorField& field, const KernelBasis& basis, CoordinateSystem units) {
    field.validate();
    const double d = site_distance(s, s_prime, units);
    const Eigen::VectorXd a = field.A.transpose() * basis.weights(t);
    const Eigen::VectorXd b = field.A.transpose() * basis.weights(t_prime);
    const Eigen::ArrayXd rho = (-field.decays.array() * d).exp();
    return (a.array() * rho * b.array()).sum();
}

std::pair<double, double> decay_range(const Eigen::MatrixXd& distances) {
    double d_min = std::numeric_limits<double>::infinity();
    double d_max = 0.0;
    for (Eigen::Index i = 0; i < distances.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < distances.cols(); ++j) {
            const double d = distances(i, j);
            if (d > 0.0) {
                d_min = std::min(d_min, d);
                d_max = std::max(d_max, d);
            }
        }
    }
    if (!(d_max > 0.0)) {
        // Degenerate layout (one site or all coincident): any decay gives the same correlations.
        return {1.0, 1.0};
    }
    return {3.0 / d_max, 3.0 / d_min};
}

Eigen::VectorXd default_decays(const Eigen::MatrixXd& distances, int r, bool single) {
    const auto [lo, hi] = decay_range(distances);
    Eigen::VectorXd out(r);
    if (single || r == 1 || hi <= lo) {
        out.setConstant(std::sqrt(lo * hi));
        if (!single && r > 1) {
            // Distinct values are still required for the ordered variants.
            for (int j = 0; j < r; ++j) out(j) *= std::pow(1.5, j - (r - 1) / 2.0);
        }
        return out;
    }
    const double l0 = std::log(lo);
    const double l1 = std::log(hi);
    for (int j = 0; j < r; ++j) {
        out(j) = std::exp(l0 + (l1 - l0) * j / static_cast<double>(r - 1));
    }
    return out;
}

}  // namespace spacewave
