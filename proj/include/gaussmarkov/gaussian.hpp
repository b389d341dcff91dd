#pragma once

// Finite-dimensional Gaussian measures and conditional-Gaussian regression.
//
// Square roots and pseudo-inverses all go through the symmetric
// eigensolver: for a PSD matrix C = V diag(s) V^T we clamp eigenvalues
// below kPsdTolerance * max(s) to zero and apply scalar functions to the
// spectrum.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "gaussmarkov/errors.hpp"
#include "gaussmarkov/rng.hpp"

namespace gm {

/// Relative eigenvalue floor below which a symmetric matrix counts as PSD.
inline constexpr double kPsdTolerance = 1e-10;
/// Default relative rank threshold for pseudo-inverses.
inline constexpr double kPinvTolerance = 1e-12;

namespace detail {

template <typename Derived>
typename Derived::Scalar max_abs_coeff(const Eigen::MatrixBase<Derived>& m)
{
    return m.size() == 0 ? typename Derived::Scalar(0) : m.cwiseAbs().maxCoeff();
}

template <typename Scalar>
void require_square_symmetric(const Eigen::MatrixX<Scalar>& c, const char* what)
{
    require(c.rows() == c.cols(), std::string(what) + ": matrix is not square");
    const Scalar scale = std::max(max_abs_coeff(c), Scalar(1e-300));
    const Scalar asym = max_abs_coeff(c - c.transpose());
    if (asym > Scalar(1e-10) * scale)
        throw ValidationError(std::string(what) + ": matrix is not symmetric");
}

}  // namespace detail

/// Symmetrized copy, (C + C^T) / 2.
template <typename Derived>
Eigen::MatrixX<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& c)
{
    return (c + c.transpose()) / typename Derived::Scalar(2);
}

/// Eigenpairs of a validated PSD matrix; eigenvalues ascending and clamped at zero.
template <typename Scalar>
struct PsdSpectrum {
    Eigen::VectorX<Scalar> values;
    Eigen::MatrixX<Scalar> vectors;

    Scalar max_value() const { return values.size() ? values.maxCoeff() : Scalar(0); }
};

template <typename Scalar>
PsdSpectrum<Scalar> psd_spectrum(const Eigen::MatrixX<Scalar>& c)
{
    detail::require_square_symmetric(c, "psd_spectrum");
    PsdSpectrum<Scalar> out;
    if (c.rows() == 0) return out;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixX<Scalar>> es(symmetrized(c));
    out.values = es.eigenvalues();
    out.vectors = es.eigenvectors();
    const Scalar top = std::max(out.values.cwiseAbs().maxCoeff(), Scalar(0));
    const Scalar floor = Scalar(kPsdTolerance) * top;
    if (out.values.minCoeff() < -floor) throw NotPsdError("matrix has a negative eigenvalue beyond tolerance");
    for (Eigen::Index i = 0; i < out.values.size(); ++i)
        if (out.values(i) < floor) out.values(i) = Scalar(0);
    return out;
}

template <typename Scalar>
bool is_psd(const Eigen::MatrixX<Scalar>& c)
{
    try {
        psd_spectrum(c);
        return true;
    } catch (const Error&) {
        return false;
    }
}

/// Symmetric S with S * S = C.
template <typename Scalar>
Eigen::MatrixX<Scalar> psd_sqrt(const Eigen::MatrixX<Scalar>& c)
{
    const auto sp = psd_spectrum(c);
    if (c.rows() == 0) return c;
    return symmetrized(sp.vectors * sp.values.cwiseSqrt().asDiagonal() * sp.vectors.transpose());
}

/// C^{-1/2} on the numerical range of C, zero on its complement.
template <typename Scalar>
Eigen::MatrixX<Scalar> pseudo_inverse_sqrt(const Eigen::MatrixX<Scalar>& c,
                                           Scalar rel_tol = Scalar(kPinvTolerance))
{
    const auto sp = psd_spectrum(c);
    const Eigen::Index n = c.rows();
    if (n == 0) return c;
    const Scalar cut = rel_tol * sp.max_value();
    Eigen::VectorX<Scalar> inv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar s = sp.values(i);
        inv(i) = (s > Scalar(0) && s >= cut) ? Scalar(1) / std::sqrt(s) : Scalar(0);
    }
    return symmetrized(sp.vectors * inv.asDiagonal() * sp.vectors.transpose());
}

/// Orthogonal projector onto span of eigenvectors with eigenvalue >= rel_tol * max.
template <typename Scalar>
Eigen::MatrixX<Scalar> range_projector(const Eigen::MatrixX<Scalar>& c,
                                       Scalar rel_tol = Scalar(kPinvTolerance))
{
    const auto sp = psd_spectrum(c);
    const Eigen::Index n = c.rows();
    const Scalar cut = rel_tol * sp.max_value();
    Eigen::MatrixX<Scalar> p = Eigen::MatrixX<Scalar>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        if (sp.values(i) > Scalar(0) && sp.values(i) >= cut)
            p += sp.vectors.col(i) * sp.vectors.col(i).transpose();
    return p;
}

/// Numerical rank: eigenvalues >= rel_tol * max.
template <typename Scalar>
Eigen::Index numerical_rank(const Eigen::MatrixX<Scalar>& c, Scalar rel_tol = Scalar(kPinvTolerance))
{
    const auto sp = psd_spectrum(c);
    const Scalar cut = rel_tol * sp.max_value();
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < sp.values.size(); ++i)
        if (sp.values(i) > Scalar(0) && sp.values(i) >= cut) ++r;
    return r;
}

/// N(mean, cov) on R^N. The covariance is symmetrized and PSD-checked on construction.
template <typename Scalar = double>
class GaussianMeasure {
public:
    using Vector = Eigen::VectorX<Scalar>;
    using Matrix = Eigen::MatrixX<Scalar>;

    GaussianMeasure(Vector mean, const Matrix& cov) : mean_(std::move(mean))
    {
        detail::require(cov.rows() == mean_.size() && cov.cols() == mean_.size(),
                        "GaussianMeasure: mean and covariance shapes disagree");
        detail::require_square_symmetric(cov, "GaussianMeasure");
        cov_ = symmetrized(cov);
        psd_spectrum(cov_);
    }

    static GaussianMeasure point_mass(const Vector& x)
    {
        return GaussianMeasure(x, Matrix::Zero(x.size(), x.size()));
    }

    const Vector& mean() const noexcept { return mean_; }
    const Matrix& cov() const noexcept { return cov_; }
    Eigen::Index dim() const noexcept { return mean_.size(); }

private:
    Vector mean_;
    Matrix cov_;
};

/// Jointly Gaussian (X, Y). `cross` is E[(X - m_X)(Y - m_Y)^T], shape N_X x N_Y;
/// it plays the role of C_YX in the regression K = C_X^{-1/2} C_YX.
template <typename Scalar = double>
class JointGaussian {
public:
    using Vector = Eigen::VectorX<Scalar>;
    using Matrix = Eigen::MatrixX<Scalar>;

    JointGaussian(Vector m_x, Vector m_y, const Matrix& c_x, const Matrix& c_y, Matrix cross)
        : m_x_(std::move(m_x)), m_y_(std::move(m_y)), cross_(std::move(cross))
    {
        const auto nx = m_x_.size();
        const auto ny = m_y_.size();
        detail::require(c_x.rows() == nx && c_x.cols() == nx, "JointGaussian: C_X shape");
        detail::require(c_y.rows() == ny && c_y.cols() == ny, "JointGaussian: C_Y shape");
        detail::require(cross_.rows() == nx && cross_.cols() == ny, "JointGaussian: cross-covariance shape");
        detail::require_square_symmetric(c_x, "JointGaussian C_X");
        detail::require_square_symmetric(c_y, "JointGaussian C_Y");
        c_x_ = symmetrized(c_x);
        c_y_ = symmetrized(c_y);
        try {
            psd_spectrum(joint_covariance());
        } catch (const NotPsdError&) {
            throw NotPsdError("JointGaussian: block covariance is not PSD");
        }
    }

    const Vector& m_x() const noexcept { return m_x_; }
    const Vector& m_y() const noexcept { return m_y_; }
    const Matrix& c_x() const noexcept { return c_x_; }
    const Matrix& c_y() const noexcept { return c_y_; }
    /// E[(X - m_X)(Y - m_Y)^T]
    const Matrix& cross() const noexcept { return cross_; }

    Matrix joint_covariance() const
    {
        const auto nx = m_x_.size();
        const auto ny = m_y_.size();
        Matrix c(nx + ny, nx + ny);
        c.topLeftCorner(nx, nx) = c_x_;
        c.topRightCorner(nx, ny) = cross_;
        c.bottomLeftCorner(ny, nx) = cross_.transpose();
        c.bottomRightCorner(ny, ny) = c_y_;
        return c;
    }

private:
    Vector m_x_, m_y_;
    Matrix c_x_, c_y_, cross_;
};

template <typename Scalar>
struct RegressionOperator {
    Eigen::MatrixX<Scalar> K;          ///< C_X^{-1/2} C_YX, N_X x N_Y
    Eigen::MatrixX<Scalar> K_adjoint;  ///< K^T = C_XY C_X^{-1/2}
    Eigen::MatrixX<Scalar> cx_inv_sqrt;
    Scalar range_residual;             ///< ||(I - P_ran) C_YX||_F
};

/// Regression operator of Y on X. Throws InconsistentJointError when the
/// cross-covariance has a component outside the numerical range of C_X.
template <typename Scalar>
RegressionOperator<Scalar> regression_operator(const JointGaussian<Scalar>& j,
                                               Scalar rel_tol = Scalar(kPinvTolerance))
{
    RegressionOperator<Scalar> r;
    r.cx_inv_sqrt = pseudo_inverse_sqrt(j.c_x(), rel_tol);
    r.K = r.cx_inv_sqrt * j.cross();
    r.K_adjoint = r.K.transpose();

    const auto proj = range_projector(j.c_x(), rel_tol);
    const Eigen::MatrixX<Scalar> outside = j.cross() - proj * j.cross();
    r.range_residual = outside.size() ? outside.norm() : Scalar(0);

    // A direction dropped at eigenvalue s <= rel_tol * s_max carries at most
    // sqrt(s * ||C_Y||) of cross-covariance (Cauchy-Schwarz).
    const Scalar sx = j.c_x().size() ? j.c_x().norm() : Scalar(0);
    const Scalar sy = j.c_y().size() ? j.c_y().norm() : Scalar(0);
    const Scalar allowance = Scalar(10) * std::sqrt(std::max(rel_tol, Scalar(1e-300)) * sx * sy) +
                             Scalar(1e-12) * std::sqrt(sx * sy);
    if (r.range_residual > allowance)
        throw InconsistentJointError("cross-covariance leaves Im(C_X^{1/2}); not a joint Gaussian");
    return r;
}

/// Law of Y given X = x_obs.
template <typename Scalar>
GaussianMeasure<Scalar> conditional(const JointGaussian<Scalar>& j, const Eigen::VectorX<Scalar>& x_obs,
                                    Scalar rel_tol = Scalar(kPinvTolerance))
{
    detail::require(x_obs.size() == j.m_x().size(), "conditional: observation has wrong length");
    const auto r = regression_operator(j, rel_tol);
    Eigen::VectorX<Scalar> mean = j.m_y() + r.K_adjoint * (r.cx_inv_sqrt * (x_obs - j.m_x()));
    // The Schur complement can come out slightly indefinite when Y is (nearly)
    // determined by X; round-off is judged against the scale of C_Y.
    Eigen::MatrixX<Scalar> cov = symmetrized(j.c_y() - r.K_adjoint * r.K);
    if (cov.rows() > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixX<Scalar>> es(cov);
        const Scalar floor = Scalar(kPsdTolerance) * std::max(detail::max_abs_coeff(j.c_y()), Scalar(1e-300));
        if (es.eigenvalues().minCoeff() < -floor)
            throw InconsistentJointError("conditional: covariance of Y given X is not positive semidefinite");
        if (es.eigenvalues().minCoeff() < Scalar(0))
            cov = symmetrized(es.eigenvectors() * es.eigenvalues().cwiseMax(Scalar(0)).asDiagonal() *
                              es.eigenvectors().transpose());
    }
    return GaussianMeasure<Scalar>(std::move(mean), std::move(cov));
}

template <typename Scalar>
GaussianMeasure<Scalar> affine_pushforward(const GaussianMeasure<Scalar>& mu, const Eigen::MatrixX<Scalar>& T,
                                           const Eigen::VectorX<Scalar>& c)
{
    detail::require(T.cols() == mu.dim() && T.rows() == c.size(), "affine_pushforward: shape mismatch");
    return GaussianMeasure<Scalar>(T * mu.mean() + c, symmetrized(T * mu.cov() * T.transpose()));
}

template <typename Scalar>
GaussianMeasure<Scalar> convolve(const GaussianMeasure<Scalar>& a, const GaussianMeasure<Scalar>& b)
{
    detail::require(a.dim() == b.dim(), "convolve: dimension mismatch");
    return GaussianMeasure<Scalar>(a.mean() + b.mean(), a.cov() + b.cov());
}

/// n independent draws as the columns of an N x n matrix; stream 0 of `seed`.
template <typename Scalar>
Eigen::MatrixX<Scalar> sample(const GaussianMeasure<Scalar>& mu, std::uint64_t seed, Eigen::Index n)
{
    const Eigen::MatrixX<Scalar> s = psd_sqrt(mu.cov());
    NormalStream rng(seed, 0);
    Eigen::MatrixX<Scalar> out(mu.dim(), n);
    for (Eigen::Index k = 0; k < n; ++k)
        out.col(k) = mu.mean() + s * rng.normal_vector<Scalar>(mu.dim());
    return out;
}

}  // namespace gm
