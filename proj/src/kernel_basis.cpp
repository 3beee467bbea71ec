#include "spacewave/kernel_basis.hpp"

#include "spacewave/error.hpp"

#include <algorithm>
#include <cmath>

namespace spacewave {

double kernel_value(double d, double theta, KernelFamily family) {
    if (!(theta > 0.0)) {
        throw Error(ErrorKind::validation, "kernel bandwidth must be positive");
    }
    const double u = d / theta;
    switch (family) {
    case KernelFamily::gaussian: return std::exp(-0.5 * u * u);
    case KernelFamily::double_exponential: return std::exp(-std::abs(u));
    }
    return 0.0;
}

namespace {

void check_knots(const std::vector<double>& knots) {
    if (knots.empty()) {
        throw Error(ErrorKind::validation, "kernel basis needs at least one knot");
    }
    for (std::size_t i = 1; i < knots.size(); ++i) {
        if (!(knots[i] > knots[i - 1])) {
            throw Error(ErrorKind::validation, "knots must be strictly increasing");
        }
    }
}

}  // namespace

KernelBasis::KernelBasis(std::vector<double> knots, double bandwidth, KernelFamily family)
    : KernelBasis(knots, std::vector<double>(knots.size(), bandwidth), family) {}

KernelBasis::KernelBasis(std::vector<double> knots, std::vector<double> bandwidths, KernelFamily family)
    : knots_(std::move(knots)), bandwidths_(std::move(bandwidths)), family_(family) {
    check_knots(knots_);
    if (bandwidths_.size() != knots_.size()) {
        throw Error(ErrorKind::validation, "need one bandwidth per knot");
    }
    for (double b : bandwidths_) {
        if (!(b > 0.0) || !std::isfinite(b)) {
            throw Error(ErrorKind::validation, "kernel bandwidths must be positive and finite");
        }
    }
}

Eigen::VectorXd KernelBasis::weights(double t) const {
    Eigen::VectorXd k(static_cast<Eigen::Index>(knots_.size()));
    for (std::size_t j = 0; j < knots_.size(); ++j) {
        k(static_cast<Eigen::Index>(j)) = kernel_value(t - knots_[j], bandwidths_[j], family_);
    }
    return k;
}

Eigen::MatrixXd design_matrix(const std::vector<double>& wavelengths, const KernelBasis& basis) {
    Eigen::MatrixXd K(static_cast<Eigen::Index>(wavelengths.size()), static_cast<Eigen::Index>(basis.size()));
    for (std::size_t m = 0; m < wavelengths.size(); ++m) {
        K.row(static_cast<Eigen::Index>(m)) = basis.weights(wavelengths[m]).transpose();
    }
    return K;
}

Eigen::MatrixXd design_matrix(const WavelengthGrid& grid, const KernelBasis& basis) {
    return design_matrix(grid.values(), basis);
}

VarianceBasis::VarianceBasis(std::vector<double> knots) : knots_(std::move(knots)) {
    check_knots(knots_);
    if (knots_.size() < 2) {
        throw Error(ErrorKind::validation, "variance basis needs at least two knots");
    }
}

Eigen::MatrixXd VarianceBasis::weights(const WavelengthGrid& grid) const {
    const auto K = static_cast<Eigen::Index>(knots_.size());
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid.size()), K);
    for (std::size_t m = 0; m < grid.size(); ++m) {
        const double t = grid[m];
        if (t < knots_.front() || t > knots_.back()) {
            throw Error(ErrorKind::validation, "wavelength " + format_double(t) + " lies outside the variance knots [" +
                                                   format_double(knots_.front()) + ", " +
                                                   format_double(knots_.back()) + "]");
        }
        auto upper = std::upper_bound(knots_.begin(), knots_.end(), t);
        Eigen::Index hi = std::min<Eigen::Index>(static_cast<Eigen::Index>(upper - knots_.begin()), K - 1);
        Eigen::Index lo = hi - 1;
        const double frac = (t - knots_[lo]) / (knots_[hi] - knots_[lo]);
        W(static_cast<Eigen::Index>(m), lo) = 1.0 - frac;
        W(static_cast<Eigen::Index>(m), hi) += frac;
    }
    return W;
}

Eigen::VectorXd variance_curve(const Eigen::VectorXd& coeffs, const VarianceBasis& basis, const WavelengthGrid& grid) {
    if (static_cast<std::size_t>(coeffs.size()) != basis.size()) {
        throw Error(ErrorKind::validation, "variance coefficients must match the knot count");
    }
    if (!coeffs.allFinite()) {
        throw Error(ErrorKind::validation, "variance coefficients must be finite");
    }
    return (basis.weights(grid) * coeffs).array().exp();
}

}  // namespace spacewave
