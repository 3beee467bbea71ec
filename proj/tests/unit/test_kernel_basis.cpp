#include "fixtures.hpp"

#include "spacewave/error.hpp"
#include "spacewave/kernel_basis.hpp"

#include <doctest.h>

using namespace spacewave;

TEST_SUITE("kernel_basis") {

TEST_CASE("kernel values at zero and one bandwidth") {
    CHECK(kernel_value(0.0, 30.0, KernelFamily::gaussian) == 1.0);
    CHECK(kernel_value(0.0, 30.0, KernelFamily::double_exponential) == 1.0);
    CHECK(kernel_value(30.0, 30.0, KernelFamily::gaussian) == doctest::Approx(0.60653065971).epsilon(1e-10));
    CHECK(kernel_value(30.0, 30.0, KernelFamily::double_exponential) == doctest::Approx(0.36787944117).epsilon(1e-10));
    CHECK_THROWS_AS((void)kernel_value(1.0, 0.0, KernelFamily::gaussian), Error);
    CHECK_THROWS_AS((void)kernel_value(1.0, -2.0, KernelFamily::double_exponential), Error);
}

TEST_CASE("kernels are symmetric and decay in distance") {
    for (KernelFamily f : {KernelFamily::gaussian, KernelFamily::double_exponential}) {
        double prev = 2.0;
        for (double d = 0.0; d < 200.0; d += 3.7) {
            const double v = kernel_value(d, 25.0, f);
            CHECK(v == kernel_value(-d, 25.0, f));
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("single knot at a single wavelength") {
    const KernelBasis b({500.0}, 10.0, KernelFamily::gaussian);
    const Eigen::MatrixXd K = design_matrix(std::vector<double>{500.0}, b);
    CHECK(K.rows() == 1);
    CHECK(K.cols() == 1);
    CHECK(K(0, 0) == 1.0);
}

TEST_CASE("each row peaks at the nearest knot") {
    const auto knots = make_knot_grid(437.5, 962.5, 25);
    const WavelengthGrid grid = WavelengthGrid::linspace(450, 950, 500);
    const Eigen::MatrixXd K = design_matrix(grid, KernelBasis(knots, 30.0, KernelFamily::gaussian));
    CHECK(K.rows() == 500);
    CHECK(K.cols() == 22);
    for (Eigen::Index m = 0; m < K.rows(); ++m) {
        Eigen::Index arg = 0;
        K.row(m).maxCoeff(&arg);
        std::size_t nearest = 0;
        for (std::size_t j = 1; j < knots.size(); ++j) {
            if (std::abs(grid[m] - knots[j]) < std::abs(grid[m] - knots[nearest])) nearest = j;
        }
        CHECK(static_cast<std::size_t>(arg) == nearest);
    }
}

TEST_CASE("very wide bandwidths flatten the basis") {
    const auto knots = make_knot_grid(437.5, 962.5, 25);
    const Eigen::MatrixXd K = design_matrix(WavelengthGrid::linspace(450, 950, 500),
                                            KernelBasis(knots, 1e6, KernelFamily::gaussian));
    CHECK((K.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("per-knot bandwidths reduce to a shared bandwidth") {
    const auto knots = make_knot_grid(437.5, 962.5, 25);
    const WavelengthGrid grid = WavelengthGrid::linspace(450, 950, 500);
    const Eigen::MatrixXd a = design_matrix(grid, KernelBasis(knots, 42.0, KernelFamily::gaussian));
    const Eigen::MatrixXd b = design_matrix(grid, KernelBasis(knots, std::vector<double>(knots.size(), 42.0),
                                                              KernelFamily::gaussian));
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(KernelBasis(knots, std::vector<double>(3, 1.0), KernelFamily::gaussian), Error);
    CHECK_THROWS_AS(KernelBasis({500.0, 480.0}, 1.0, KernelFamily::gaussian), Error);
}

TEST_CASE("hat weights partition unity") {
    const VarianceBasis vb(make_knot_grid(440, 960, 20));
    const Eigen::MatrixXd W = vb.weights(WavelengthGrid::linspace(450, 950, 500));
    CHECK(W.cols() == 27);
    CHECK((W.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(W.minCoeff() >= 0.0);
    CHECK_THROWS_AS((void)vb.weights(WavelengthGrid::linspace(430, 950, 10)), Error);
}

TEST_CASE("variance curves") {
    const VarianceBasis vb(make_knot_grid(440, 960, 20));
    const WavelengthGrid grid = WavelengthGrid::linspace(450, 950, 500);
    CHECK((variance_curve(Eigen::VectorXd::Zero(27), vb, grid).array() - 1.0).abs().maxCoeff() == 0.0);
    CHECK((variance_curve(Eigen::VectorXd::Constant(27, std::log(4.0)), vb, grid).array() - 4.0).abs().maxCoeff() <
          1e-12);
    // coefficients linear in knot index make log sigma^2 linear in wavelength
    Eigen::VectorXd c(27);
    for (int k = 0; k < 27; ++k) c(k) = -3.0 + 0.1 * k;
    const Eigen::VectorXd s2 = variance_curve(c, vb, grid);
    for (std::size_t m = 0; m < grid.size(); ++m) {
        const double want = -3.0 + 0.1 * (grid[m] - 440.0) / 20.0;
        CHECK(std::abs(std::log(s2(static_cast<Eigen::Index>(m))) - want) < 1e-12);
    }
    CHECK_THROWS_AS((void)variance_curve(Eigen::VectorXd::Zero(5), vb, grid), Error);
}

}  // TEST_SUITE
