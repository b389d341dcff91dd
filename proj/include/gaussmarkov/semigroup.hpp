#pragma once

// Forward map from a generator triple (A, b_V, Q) to the Gaussian
// transition kernels mu(t, x) = N(m(t, x), Q(t)):
//
//   L(t)    = exp(tA)
//   g(t)    = int_0^t exp(sA) b_V ds          (= m(t, 0))
//   m(t, x) = L(t) x + g(t)
//   Q(t)    = int_0^t L(s) Q L(s)^T ds        (Lyapunov flow, Q(0) = 0)
//   Q(s, t) = L(t - s) Q(s)                    (cross-covariance, s <= t)

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "gaussmarkov/errors.hpp"
#include "gaussmarkov/gaussian.hpp"

namespace gm {

namespace detail {

inline void require_time(double t, const char* what)
{
    if (!(t >= 0.0) || !std::isfinite(t)) throw ValidationError(std::string(what) + ": time must be >= 0");
}

}  // namespace detail

/// Largest eigenvalue of the symmetric part of A by shifted power iteration.
/// Bounds the real part of every eigenvalue of A from above.
template <typename Scalar>
Scalar numerical_abscissa_estimate(const Eigen::MatrixX<Scalar>& a, int iterations = 500)
{
    const Eigen::Index n = a.rows();
    if (n == 0) return Scalar(0);
    const Eigen::MatrixX<Scalar> sym = symmetrized(a);
    const Scalar shift = sym.cwiseAbs().rowwise().sum().maxCoeff();
    const Eigen::MatrixX<Scalar> shifted = sym + shift * Eigen::MatrixX<Scalar>::Identity(n, n);
    Eigen::VectorX<Scalar> v = Eigen::VectorX<Scalar>::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) += Scalar(0.01) * Scalar(i);
    v.normalize();
    Scalar rayleigh = v.dot(shifted * v);
    for (int it = 0; it < iterations; ++it) {
        Eigen::VectorX<Scalar> w = shifted * v;
        const Scalar nw = w.norm();
        if (nw == Scalar(0)) break;
        v = w / nw;
        const Scalar next = v.dot(shifted * v);
        if (std::abs(next - rayleigh) <= Scalar(1e-14) * std::max(Scalar(1), std::abs(next))) {
            rayleigh = next;
            break;
        }
        rayleigh = next;
    }
    return rayleigh - shift;
}

/// Default shift lambda = 1 + max(0, abscissa estimate).
template <typename Scalar>
Scalar default_lambda(const Eigen::MatrixX<Scalar>& a)
{
    return Scalar(1) + std::max(Scalar(0), numerical_abscissa_estimate(a));
}

/// Generator triple at Galerkin truncation N: drift matrix A, drift vector
/// b_V, diffusion covariance Q_diff, and a shift lambda above the spectrum of A.
template <typename Scalar = double>
class GeneratorModel {
public:
    using Vector = Eigen::VectorX<Scalar>;
    using Matrix = Eigen::MatrixX<Scalar>;

    GeneratorModel(Matrix a, Vector b_v, const Matrix& q_diff, Scalar lambda)
        : a_(std::move(a)), b_v_(std::move(b_v)), lambda_(lambda)
    {
        const auto n = a_.rows();
        detail::require(n > 0, "GeneratorModel: dimension must be positive");
        detail::require(a_.cols() == n, "GeneratorModel: A must be square");
        detail::require(b_v_.size() == n, "GeneratorModel: b_V has wrong length");
        detail::require(q_diff.rows() == n && q_diff.cols() == n, "GeneratorModel: Q_diff has wrong shape");
        detail::require(a_.allFinite() && b_v_.allFinite() && q_diff.allFinite(),
                        "GeneratorModel: non-finite entries");
        detail::require_square_symmetric(q_diff, "GeneratorModel Q_diff");
        q_diff_ = symmetrized(q_diff);
        psd_spectrum(q_diff_);
        detail::require(lambda_ > Scalar(0) && std::isfinite(static_cast<double>(lambda_)),
                        "GeneratorModel: lambda must be positive");
        const Scalar top = Eigen::EigenSolver<Matrix>(a_, false).eigenvalues().real().maxCoeff();
        detail::require(lambda_ > top, "GeneratorModel: lambda must exceed the spectral abscissa of A");
    }

    GeneratorModel(Matrix a, Vector b_v, const Matrix& q_diff)
        : GeneratorModel(a, std::move(b_v), q_diff, default_lambda(a))
    {}

    Eigen::Index dim() const noexcept { return a_.rows(); }
    const Matrix& A() const noexcept { return a_; }
    const Vector& b_V() const noexcept { return b_v_; }
    const Matrix& Q_diff() const noexcept { return q_diff_; }
    Scalar lambda() const noexcept { return lambda_; }

    GeneratorModel with_lambda(Scalar lambda) const { return GeneratorModel(a_, b_v_, q_diff_, lambda); }

private:
    Matrix a_;
    Vector b_v_;
    Matrix q_diff_;
    Scalar lambda_;
};

/// L(t) = exp(tA).
template <typename Scalar>
Eigen::MatrixX<Scalar> evolution_operator(const GeneratorModel<Scalar>& model, Scalar t)
{
    detail::require_time(static_cast<double>(t), "evolution_operator");
    if (t == Scalar(0)) return Eigen::MatrixX<Scalar>::Identity(model.dim(), model.dim());
    return (t * model.A()).exp();
}

namespace detail {

/// exp(t [[A, b], [0, 0]]) = [[L(t), g(t)], [0, 1]]; valid for singular A.
template <typename Scalar>
Eigen::MatrixX<Scalar> augmented_flow(const GeneratorModel<Scalar>& model, Scalar t)
{
    const auto n = model.dim();
    Eigen::MatrixX<Scalar> m = Eigen::MatrixX<Scalar>::Zero(n + 1, n + 1);
    if (t == Scalar(0)) return Eigen::MatrixX<Scalar>::Identity(n + 1, n + 1);
    m.topLeftCorner(n, n) = t * model.A();
    m.topRightCorner(n, 1) = t * model.b_V();
    return m.exp();
}

template <typename Scalar>
Eigen::MatrixX<Scalar> lyapunov_rk4(const Eigen::MatrixX<Scalar>& a, const Eigen::MatrixX<Scalar>& c, Scalar t,
                                    long steps)
{
    const auto n = a.rows();
    const Scalar h = t / static_cast<Scalar>(steps);
    Eigen::MatrixX<Scalar> q = Eigen::MatrixX<Scalar>::Zero(n, n);
    Eigen::MatrixX<Scalar> k1(n, n), k2(n, n), k3(n, n), k4(n, n), tmp(n, n), aq(n, n);
    auto rhs = [&](const Eigen::MatrixX<Scalar>& x, Eigen::MatrixX<Scalar>& out) {
        aq.noalias() = a * x;
        out = aq + aq.transpose() + c;
    };
    for (long s = 0; s < steps; ++s) {
        rhs(q, k1);
        tmp = q + (h / 2) * k1;
        rhs(tmp, k2);
        tmp = q + (h / 2) * k2;
        rhs(tmp, k3);
        tmp = q + h * k3;
        rhs(tmp, k4);
        q += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return q;
}

}  // namespace detail

/// g(t) = int_0^t exp(sA) b_V ds.
template <typename Scalar>
Eigen::VectorX<Scalar> drift_trace(const GeneratorModel<Scalar>& model, Scalar t)
{
    detail::require_time(static_cast<double>(t), "drift_trace");
    if (t == Scalar(0) || model.b_V().isZero(0)) return Eigen::VectorX<Scalar>::Zero(model.dim());
    return detail::augmented_flow(model, t).topRightCorner(model.dim(), 1);
}

/// m(t, x) = L(t) x + g(t).
template <typename Scalar>
Eigen::VectorX<Scalar> mean(const GeneratorModel<Scalar>& model, Scalar t, const Eigen::VectorX<Scalar>& x)
{
    detail::require(x.size() == model.dim(), "mean: state has wrong length");
    detail::require_time(static_cast<double>(t), "mean");
    if (t == Scalar(0)) return x;
    const auto flow = detail::augmented_flow(model, t);
    const auto n = model.dim();
    return flow.topLeftCorner(n, n) * x + flow.topRightCorner(n, 1);
}

/// Q(t) from the Lyapunov flow dQ/dt = AQ + QA^T + Q_diff, Q(0) = 0, by
/// fixed-step RK4. The step count doubles until halving the step moves Q(t)
/// by less than 1e-10 (relative to max(1, ||Q||_F)).
template <typename Scalar>
Eigen::MatrixX<Scalar> covariance(const GeneratorModel<Scalar>& model, Scalar t)
{
    detail::require_time(static_cast<double>(t), "covariance");
    const auto n = model.dim();
    if (t == Scalar(0) || model.Q_diff().isZero(0)) return Eigen::MatrixX<Scalar>::Zero(n, n);
    const Scalar rate = model.A().cwiseAbs().rowwise().sum().maxCoeff();
    long steps = std::max<long>(1, static_cast<long>(std::ceil(static_cast<double>(t * rate) / 0.01)));
    Eigen::MatrixX<Scalar> coarse = detail::lyapunov_rk4(model.A(), model.Q_diff(), t, steps);
    for (int refinements = 0; refinements < 24; ++refinements) {
        steps *= 2;
        Eigen::MatrixX<Scalar> fine = detail::lyapunov_rk4(model.A(), model.Q_diff(), t, steps);
        const Scalar change = (fine - coarse).norm();
        coarse = std::move(fine);
        if (change < Scalar(1e-10) * std::max(Scalar(1), coarse.norm())) break;
    }
    return symmetrized(coarse);
}

/// Q(s, t) = L(t - s) Q(s): covariance of Z(t) fluctuations against Z(s) fluctuations,
/// i.e. E[(Z(t) - m(t)) (Z(s) - m(s))^T].
template <typename Scalar>
Eigen::MatrixX<Scalar> cross_covariance(const GeneratorModel<Scalar>& model, Scalar s, Scalar t)
{
    detail::require_time(static_cast<double>(s), "cross_covariance");
    detail::require(s <= t, "cross_covariance: requires s <= t");
    return evolution_operator(model, t - s) * covariance(model, s);
}

template <typename Scalar>
GaussianMeasure<Scalar> kernel(const GeneratorModel<Scalar>& model, Scalar t, const Eigen::VectorX<Scalar>& x)
{
    return GaussianMeasure<Scalar>(mean(model, t, x), covariance(model, t));
}

/// b_H = (lambda I - A)^{-1} b_V.
template <typename Scalar>
Eigen::VectorX<Scalar> b_H(const GeneratorModel<Scalar>& model)
{
    const auto n = model.dim();
    const Eigen::MatrixX<Scalar> shifted = model.lambda() * Eigen::MatrixX<Scalar>::Identity(n, n) - model.A();
    Eigen::FullPivLU<Eigen::MatrixX<Scalar>> lu(shifted);
    if (!lu.isInvertible() || lu.rcond() < Scalar(1e-14)) throw SingularOperatorError("lambda I - A is singular");
    return lu.solve(model.b_V());
}

/// Numerical rank of Q(t); full rank for t > 0 is the finite-dimensional
/// reading of Im Q(t) = H.
template <typename Scalar>
Eigen::Index covariance_rank(const GeneratorModel<Scalar>& model, Scalar t, Scalar rel_tol = Scalar(1e-10))
{
    return numerical_rank(covariance(model, t), rel_tol);
}

template <typename Scalar>
struct ChapmanKolmogorovReport {
    Scalar s{}, t{};
    Scalar mean_residual{};  ///< ||m(t, m(s, x)) - m(s + t, x)||
    Scalar cov_residual{};   ///< ||Q(t) + L(t) Q(s) L(t)^T - Q(s + t)||_F
    bool pass = false;
};

template <typename Scalar>
ChapmanKolmogorovReport<Scalar> verify_chapman_kolmogorov(const GeneratorModel<Scalar>& model, Scalar s, Scalar t,
                                                          const Eigen::VectorX<Scalar>& x, Scalar tol)
{
    ChapmanKolmogorovReport<Scalar> r;
    r.s = s;
    r.t = t;
    const Eigen::VectorX<Scalar> composed = mean(model, t, mean(model, s, x));
    r.mean_residual = (composed - mean(model, s + t, x)).norm();
    const auto lt = evolution_operator(model, t);
    const Eigen::MatrixX<Scalar> q_flow = covariance(model, t) + lt * covariance(model, s) * lt.transpose();
    r.cov_residual = (q_flow - covariance(model, s + t)).norm();
    r.pass = r.mean_residual < tol && r.cov_residual < tol;
    return r;
}

/// The family {mu(t, x)} with L(t), g(t), Q(t) cached per exact time value.
/// Safe for concurrent use: lookups take a shared lock, inserts an exclusive one.
template <typename Scalar = double>
class TransitionKernel {
public:
    using Vector = Eigen::VectorX<Scalar>;
    using Matrix = Eigen::MatrixX<Scalar>;

    struct Entry {
        Matrix evolution;
        Vector drift;
        Matrix cov;
    };

    explicit TransitionKernel(GeneratorModel<Scalar> model) : model_(std::move(model)) {}

    TransitionKernel(const TransitionKernel&) = delete;
    TransitionKernel& operator=(const TransitionKernel&) = delete;

    const GeneratorModel<Scalar>& model() const noexcept { return model_; }

    const Entry& at(Scalar t) const
    {
        detail::require_time(static_cast<double>(t), "TransitionKernel");
        {
            std::shared_lock lock(mutex_);
            if (auto it = cache_.find(t); it != cache_.end()) return it->second;
        }
        const auto n = model_.dim();
        const auto flow = detail::augmented_flow(model_, t);
        Entry e{flow.topLeftCorner(n, n), flow.topRightCorner(n, 1), covariance(model_, t)};
        std::unique_lock lock(mutex_);
        return cache_.try_emplace(t, std::move(e)).first->second;
    }

    Vector mean(Scalar t, const Vector& x) const
    {
        detail::require(x.size() == model_.dim(), "TransitionKernel::mean: state has wrong length");
        const auto& e = at(t);
        return e.evolution * x + e.drift;
    }

    GaussianMeasure<Scalar> operator()(Scalar t, const Vector& x) const
    {
        return GaussianMeasure<Scalar>(mean(t, x), at(t).cov);
    }

    std::size_t cached_times() const
    {
        std::shared_lock lock(mutex_);
        return cache_.size();
    }

private:
    GeneratorModel<Scalar> model_;
    mutable std::shared_mutex mutex_;
    mutable std::map<Scalar, Entry> cache_;
};

}  // namespace gm
