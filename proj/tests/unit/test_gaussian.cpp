#include <doctest.h>

#include <cmath>
#include <numbers>

#include "gaussmarkov/gaussian.hpp"
#include "support.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd diag2(double a, double b)
{
    MatrixXd m = MatrixXd::Zero(2, 2);
    m(0, 0) = a;
    m(1, 1) = b;
    return m;
}

VectorXd scalar(double v) { return VectorXd::Constant(1, v); }
MatrixXd scalar_m(double v) { return MatrixXd::Constant(1, 1, v); }

/// Conditional mean and variance of Y given X = x from the bivariate normal
/// density on a fine y-grid (trapezoid): ratio of joint to marginal.
std::pair<double, double> grid_conditional(double mx, double my, double vx, double vy, double cxy, double x)
{
    const double sd = std::sqrt(vy);
    const double lo = my - 40 * sd - 10 * std::abs(x - mx), hi = my + 40 * sd + 10 * std::abs(x - mx);
    const int n = 200000;
    const double h = (hi - lo) / n;
    const double det = vx * vy - cxy * cxy;
    double z0 = 0, z1 = 0, z2 = 0;
    for (int i = 0; i <= n; ++i) {
        const double y = lo + h * i;
        const double dx = x - mx, dy = y - my;
        const double quad = (vy * dx * dx - 2 * cxy * dx * dy + vx * dy * dy) / det;
        const double w = (i == 0 || i == n ? 0.5 : 1.0) * std::exp(-0.5 * quad);
        z0 += w;
        z1 += w * y;
        z2 += w * y * y;
    }
    const double mean = z1 / z0;
    return {mean, z2 / z0 - mean * mean};
}

}  // namespace

TEST_CASE("psd_sqrt")
{
    CHECK(gm::psd_sqrt(MatrixXd(MatrixXd::Identity(3, 3))).isApprox(MatrixXd::Identity(3, 3)));
    CHECK((gm::psd_sqrt(diag2(4, 9)) - diag2(2, 3)).norm() < 1e-14);
    gm::NormalStream rng(11, 0);
    for (int n : {1, 3, 8}) {
        const MatrixXd c = testing::random_spd(rng, n);
        const MatrixXd s = gm::psd_sqrt(c);
        CHECK((s - s.transpose()).norm() == 0.0);
        CHECK((s * s - c).norm() / c.norm() < 1e-10);
    }
    MatrixXd nonsym = diag2(1, 1);
    nonsym(0, 1) = 0.5;
    CHECK_THROWS_AS(gm::psd_sqrt(nonsym), gm::ValidationError);
    CHECK_THROWS_AS(gm::psd_sqrt(diag2(1, -1)), gm::NotPsdError);
    // round-off negativity is clamped
    CHECK(gm::psd_sqrt(diag2(1, -1e-14))(1, 1) == 0.0);
}

TEST_CASE("pseudo_inverse_sqrt")
{
    CHECK((gm::pseudo_inverse_sqrt(diag2(4, 0)) - diag2(0.5, 0)).norm() < 1e-15);
    CHECK(gm::pseudo_inverse_sqrt(MatrixXd(MatrixXd::Identity(2, 2))).isApprox(MatrixXd::Identity(2, 2)));
    CHECK((gm::pseudo_inverse_sqrt(diag2(9, 1e-18), 1e-12) - diag2(1.0 / 3, 0)).norm() < 1e-15);
    CHECK(gm::pseudo_inverse_sqrt(MatrixXd(MatrixXd::Zero(3, 3))).isZero(0));
}

TEST_CASE("pseudo-inverse square root times square root is the range projector")
{
    gm::NormalStream rng(12, 0);
    for (int n : {2, 5, 8})
        for (int rank : {1, n / 2, n}) {
            const MatrixXd c = testing::random_spd(rng, n, 0.0, rank);
            const MatrixXd p = gm::pseudo_inverse_sqrt(c) * gm::psd_sqrt(c);
            CHECK((p - gm::range_projector(c)).norm() < 1e-10);
            CHECK(gm::numerical_rank(c) == rank);
            CHECK((p * p - p).norm() < 1e-10);
        }
}

TEST_CASE("regression operator")
{
    {
        gm::JointGaussian<double> j(VectorXd::Zero(2), VectorXd::Zero(1), diag2(1, 2), scalar_m(1), MatrixXd::Zero(2, 1));
        CHECK(gm::regression_operator(j).K.isZero(0));
    }
    {
        gm::JointGaussian<double> j(scalar(0), scalar(0), scalar_m(1), scalar_m(1), scalar_m(0.5));
        CHECK(std::abs(gm::regression_operator(j).K(0, 0) - 0.5) < 1e-15);
    }
    gm::NormalStream rng(13, 0);
    for (int trial = 0; trial < 10; ++trial) {
        const MatrixXd joint = testing::random_spd(rng, 4, 0.05);
        gm::JointGaussian<double> j(VectorXd::Zero(2), VectorXd::Zero(2), joint.topLeftCorner(2, 2),
                                    joint.bottomRightCorner(2, 2), joint.topRightCorner(2, 2));
        const auto r = gm::regression_operator(j);
        CHECK((gm::psd_sqrt(j.c_x()) * r.K - j.cross()).norm() < 1e-10);
        CHECK(r.K_adjoint == r.K.transpose());
    }
}

TEST_CASE("cross-covariance outside the range of C_X is rejected")
{
    // C_X = diag(1, 0) but Y correlates with the null direction; the block
    // matrix is not PSD so construction already fails.
    CHECK_THROWS_AS(gm::JointGaussian<double>(VectorXd::Zero(2), scalar(0), diag2(1, 0), scalar_m(1),
                                              (MatrixXd(2, 1) << 0.0, 0.3).finished()),
                    gm::NotPsdError);
    // With a large C_Y the block passes the relative PSD tolerance while the
    // cross-covariance still points into the null space of C_X.
    const MatrixXd cx = diag2(1, 0);
    const MatrixXd cross = (MatrixXd(2, 1) << 0.0, 0.1).finished();
    gm::JointGaussian<double> j(VectorXd::Zero(2), scalar(0), cx, scalar_m(1e6), cross);
    CHECK_THROWS_AS(gm::regression_operator(j, 1e-12), gm::InconsistentJointError);
}

TEST_CASE("conditional Gaussian closed cases")
{
    {
        gm::JointGaussian<double> j(scalar(0), scalar(0), scalar_m(1), scalar_m(1), scalar_m(0.5));
        const auto c = gm::conditional(j, scalar(2));
        CHECK(std::abs(c.mean()(0) - 1.0) < 1e-15);
        CHECK(std::abs(c.cov()(0, 0) - 0.75) < 1e-15);
    }
    {
        gm::JointGaussian<double> j(VectorXd::Ones(2), scalar(3), diag2(1, 2), scalar_m(5), MatrixXd::Zero(2, 1));
        const auto c = gm::conditional(j, (VectorXd(2) << -4, 7).finished());
        CHECK(c.mean()(0) == 3.0);
        CHECK(c.cov()(0, 0) == 5.0);
    }
}

TEST_CASE("conditional matches the grid-density oracle in one dimension")
{
    gm::NormalStream rng(14, 0);
    for (int trial = 0; trial < 5; ++trial) {
        const MatrixXd c = testing::random_spd(rng, 2, 0.05);
        const double mx = rng(), my = rng(), x = mx + 2 * rng();
        gm::JointGaussian<double> j(scalar(mx), scalar(my), scalar_m(c(0, 0)), scalar_m(c(1, 1)), scalar_m(c(0, 1)));
        const auto cond = gm::conditional(j, scalar(x));
        const auto [mean, var] = grid_conditional(mx, my, c(0, 0), c(1, 1), c(0, 1), x);
        CHECK(std::abs(cond.mean()(0) - mean) < 1e-6);
        CHECK(std::abs(cond.cov()(0, 0) - var) < 1e-6);
    }
}

TEST_CASE("conditional covariance is PSD and independent of the observation")
{
    gm::NormalStream rng(15, 0);
    for (int nx = 1; nx <= 8; nx += 3)
        for (int ny = 1; ny <= 8; ny += 3)
            for (int rank : {nx + ny, std::max(1, (nx + ny) / 2)}) {
                const MatrixXd joint = testing::random_spd(rng, nx + ny, 0.0, rank);
                gm::JointGaussian<double> j(VectorXd::Zero(nx), VectorXd::Zero(ny), joint.topLeftCorner(nx, nx),
                                            joint.bottomRightCorner(ny, ny), joint.topRightCorner(nx, ny));
                const auto a = gm::conditional(j, testing::gaussian_matrix(rng, nx, 1).col(0).eval());
                const auto b = gm::conditional(j, testing::gaussian_matrix(rng, nx, 1).col(0).eval());
                CHECK(gm::is_psd(a.cov()));
                CHECK(a.cov() == b.cov());
            }
}

TEST_CASE("affine pushforward and convolution")
{
    gm::GaussianMeasure<double> mu(scalar(1), scalar_m(1));
    const auto doubled = gm::affine_pushforward(mu, scalar_m(2), scalar(0));
    CHECK(doubled.mean()(0) == 2.0);
    CHECK(doubled.cov()(0, 0) == 4.0);
    const auto point = gm::affine_pushforward(mu, scalar_m(0), scalar(3));
    CHECK(point.mean()(0) == 3.0);
    CHECK(point.cov()(0, 0) == 0.0);
    const auto same = gm::affine_pushforward(mu, scalar_m(1), scalar(0));
    CHECK(same.mean() == mu.mean());
    CHECK(same.cov() == mu.cov());

    gm::GaussianMeasure<double> unit(scalar(0), scalar_m(1));
    CHECK(gm::convolve(unit, unit).cov()(0, 0) == 2.0);
    const auto neutral = gm::convolve(mu, gm::GaussianMeasure<double>::point_mass(scalar(0)));
    CHECK(neutral.mean() == mu.mean());
    CHECK(neutral.cov() == mu.cov());
    CHECK_THROWS_AS(gm::convolve(unit, gm::GaussianMeasure<double>(VectorXd::Zero(2), MatrixXd::Identity(2, 2))),
                    gm::ValidationError);
}

TEST_CASE("convolution matches sums of independent draws")
{
    gm::NormalStream rng(16, 0);
    const gm::GaussianMeasure<double> a(testing::gaussian_matrix(rng, 2, 1).col(0), testing::random_spd(rng, 2));
    const gm::GaussianMeasure<double> b(testing::gaussian_matrix(rng, 2, 1).col(0), testing::random_spd(rng, 2));
    const int n = 100000;
    const MatrixXd s = gm::sample(a, 1, n) + gm::sample(b, 2, n);
    const auto c = gm::convolve(a, b);
    const VectorXd mean = s.rowwise().mean();
    const MatrixXd centred = s.colwise() - mean;
    const MatrixXd cov = centred * centred.transpose() / (n - 1);
    for (int i = 0; i < 2; ++i) {
        CHECK(std::abs(mean(i) - c.mean()(i)) < 4 * std::sqrt(c.cov()(i, i) / n));
        CHECK(std::abs(cov(i, i) - c.cov()(i, i)) < 4 * c.cov()(i, i) * std::sqrt(2.0 / n));
    }
}

TEST_CASE("sampling")
{
    const gm::GaussianMeasure<double> point = gm::GaussianMeasure<double>::point_mass(VectorXd::Constant(2, 1.5));
    CHECK((gm::sample(point, 3, 10).array() == 1.5).all());

    const gm::GaussianMeasure<double> unit(scalar(0), scalar_m(1));
    const int n = 100000;
    const MatrixXd s = gm::sample(unit, 5, n);
    const double mean = s.mean();
    const double var = (s.array() - mean).square().sum() / (n - 1);
    CHECK(std::abs(mean) < 4 / std::sqrt(double(n)));
    CHECK(std::abs(var - 1) < 4 * std::sqrt(2.0 / n));
    CHECK(gm::sample(unit, 5, 100) == gm::sample(unit, 5, 100));
}

TEST_CASE("tower property and independence of the regression split")
{
    gm::NormalStream rng(17, 0);
    const int nx = 3, ny = 2, n = 100000;
    const MatrixXd joint = testing::random_spd(rng, nx + ny, 0.05);
    const VectorXd m = testing::gaussian_matrix(rng, nx + ny, 1).col(0);
    gm::JointGaussian<double> j(m.head(nx), m.tail(ny), joint.topLeftCorner(nx, nx), joint.bottomRightCorner(ny, ny),
                                joint.topRightCorner(nx, ny));
    const auto r = gm::regression_operator(j);
    const MatrixXd draws = gm::sample(gm::GaussianMeasure<double>(m, joint), 99, n);
    const MatrixXd u = r.K_adjoint * r.cx_inv_sqrt * (draws.topRows(nx).colwise() - j.m_x());
    const MatrixXd v = draws.bottomRows(ny) - u;

    // tower: mean of E(Y|X) over X draws is m_Y
    const VectorXd tower = (u.colwise() + j.m_y()).rowwise().mean();
    for (int i = 0; i < ny; ++i) CHECK(std::abs(tower(i) - j.m_y()(i)) < 4 * std::sqrt(j.c_y()(i, i) / n));

    const MatrixXd uc = u.colwise() - u.rowwise().mean();
    const MatrixXd vc = v.colwise() - v.rowwise().mean();
    for (int a = 0; a < ny; ++a)
        for (int b = 0; b < ny; ++b) {
            const double cov = uc.row(a).dot(vc.row(b)) / n;
            const double se = std::sqrt(uc.row(a).squaredNorm() / n * vc.row(b).squaredNorm() / n / n);
            CHECK(std::abs(cov) < 4 * se);
        }
}
