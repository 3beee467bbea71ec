#pragma once

#include "spacewave/config.hpp"
#include "spacewave/data_model.hpp"

#include <Eigen/Dense>

#include <vector>

namespace spacewave {

/// Peak-1 kernel weight at signed distance `d` (nm) for bandwidth `theta` (nm).
[[nodiscard]] double kernel_value(double d, double theta, KernelFamily family);

/// Wavelength knots with either one shared bandwidth or one bandwidth per knot.
class KernelBasis {
public:
    KernelBasis(std::vector<double> knots, double bandwidth, KernelFamily family);
    KernelBasis(std::vector<double> knots, std::vector<double> bandwidths, KernelFamily family);

    [[nodiscard]] std::size_t size() const { return knots_.size(); }
    [[nodiscard]] const std::vector<double>& knots() const { return knots_; }
    [[nodiscard]] const std::vector<double>& bandwidths() const { return bandwidths_; }
    [[nodiscard]] KernelFamily family() const { return family_; }

    /// K(t): the J kernel weights at wavelength t.
    [[nodiscard]] Eigen::VectorXd weights(double t) const;

private:
    std::vector<double> knots_;
    std::vector<double> bandwidths_;  // one per knot
    KernelFamily family_;
};

/// N_wave x J; entry (m, j) = k(grid[m] - knot_j; theta_j). No row normalization.
[[nodiscard]] Eigen::MatrixXd design_matrix(const WavelengthGrid& grid, const KernelBasis& basis);
[[nodiscard]] Eigen::MatrixXd design_matrix(const std::vector<double>& wavelengths, const KernelBasis& basis);

/// Piecewise-linear hat functions on a knot grid; carries log sigma^2(t).
class VarianceBasis {
public:
    explicit VarianceBasis(std::vector<double> knots);

    [[nodiscard]] std::size_t size() const { return knots_.size(); }
    [[nodiscard]] const std::vector<double>& knots() const { return knots_; }

    /// N_wave x K interpolation weights. Throws when a wavelength lies outside the knots.
    [[nodiscard]] Eigen::MatrixXd weights(const WavelengthGrid& grid) const;

private:
    std::vector<double> knots_;
};

/// sigma^2(t) = exp(K_sigma(t)' coeffs) on the grid.
[[nodiscard]] Eigen::VectorXd variance_curve(const Eigen::VectorXd& coeffs, const VarianceBasis& basis,
                                             const WavelengthGrid& grid);

}  // namespace spacewave
