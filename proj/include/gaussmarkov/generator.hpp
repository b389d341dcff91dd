#pragma once

// Cylindrical test functions phi(x) = f(<x, h_1>, ..., <x, h_n>) and the
// generator of the transition semigroup P_t phi(x) = E phi(Z_t^x):
//
//   L phi(x) = 1/2 Tr(Q D^2 phi(x)) + <x, A^T D phi(x)> + <b_H, (lambda - A^T) D phi(x)>
//
// which equals 1/2 Tr(Q D^2 phi) + <Ax + b_V, D phi> for every admissible lambda.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gaussmarkov/errors.hpp"
#include "gaussmarkov/gaussian.hpp"
#include "gaussmarkov/rng.hpp"
#include "gaussmarkov/semigroup.hpp"

namespace gm {

/// Smooth profile f: R^n -> R with its first two derivatives.
template <typename Scalar = double>
struct Profile {
    std::function<Scalar(const Eigen::VectorX<Scalar>&)> value;
    std::function<Eigen::VectorX<Scalar>(const Eigen::VectorX<Scalar>&)> gradient;
    std::function<Eigen::MatrixX<Scalar>(const Eigen::VectorX<Scalar>&)> hessian;
};

/// Stated sup-norms of f, |grad f| and ||hess f||_2.
template <typename Scalar = double>
struct ProfileBounds {
    Scalar value{}, gradient{}, hessian{};
};

template <typename Scalar = double>
class CylindricalFunction {
public:
    using Vector = Eigen::VectorX<Scalar>;
    using Matrix = Eigen::MatrixX<Scalar>;

    CylindricalFunction(std::string id, Matrix directions, Profile<Scalar> f, ProfileBounds<Scalar> bounds)
        : id_(std::move(id)), directions_(std::move(directions)), f_(std::move(f)), bounds_(bounds)
    {
        detail::require(directions_.cols() >= 1, "CylindricalFunction: needs at least one direction");
        detail::require(static_cast<bool>(f_.value), "CylindricalFunction: missing value evaluator");
    }

    const std::string& id() const noexcept { return id_; }
    /// N x n, column i is h_i.
    const Matrix& directions() const noexcept { return directions_; }
    Eigen::Index arity() const noexcept { return directions_.cols(); }
    Eigen::Index dim() const noexcept { return directions_.rows(); }
    const Profile<Scalar>& profile() const noexcept { return f_; }
    const ProfileBounds<Scalar>& bounds() const noexcept { return bounds_; }

    Vector coordinates(const Vector& x) const
    {
        detail::require(x.size() == dim(), "CylindricalFunction: state has wrong length");
        return directions_.transpose() * x;
    }

private:
    std::string id_;
    Matrix directions_;
    Profile<Scalar> f_;
    ProfileBounds<Scalar> bounds_;
};

template <typename Scalar>
Scalar eval_phi(const CylindricalFunction<Scalar>& phi, const Eigen::VectorX<Scalar>& x)
{
    return phi.profile().value(phi.coordinates(x));
}

/// D phi(x) = sum_i d_i f h_i.
template <typename Scalar>
Eigen::VectorX<Scalar> grad_phi(const CylindricalFunction<Scalar>& phi, const Eigen::VectorX<Scalar>& x)
{
    return phi.directions() * phi.profile().gradient(phi.coordinates(x));
}

/// D^2 phi(x) = sum_ij d_ij f h_i h_j^T.
template <typename Scalar>
Eigen::MatrixX<Scalar> hess_phi(const CylindricalFunction<Scalar>& phi, const Eigen::VectorX<Scalar>& x)
{
    const auto& h = phi.directions();
    return h * phi.profile().hessian(phi.coordinates(x)) * h.transpose();
}

/// Generator in the lambda form, using b_H = (lambda - A)^{-1} b_V.
template <typename Scalar>
Scalar apply_generator(const GeneratorModel<Scalar>& model, const CylindricalFunction<Scalar>& phi,
                       const Eigen::VectorX<Scalar>& x)
{
    detail::require(phi.dim() == model.dim(), "apply_generator: dimension mismatch");
    const auto n = model.dim();
    const Eigen::VectorX<Scalar> g = grad_phi(phi, x);
    const Eigen::MatrixX<Scalar> hs = hess_phi(phi, x);
    const Scalar diffusion = (model.Q_diff().cwiseProduct(hs)).sum() / 2;
    const Scalar transport = x.dot(model.A().transpose() * g);
    const Eigen::MatrixX<Scalar> shifted_adj =
        model.lambda() * Eigen::MatrixX<Scalar>::Identity(n, n) - model.A().transpose();
    return diffusion + transport + b_H(model).dot(shifted_adj * g);
}

/// Generator in the drift form 1/2 Tr(Q D^2 phi) + <Ax + b_V, D phi>.
template <typename Scalar>
Scalar apply_generator_drift_form(const GeneratorModel<Scalar>& model, const CylindricalFunction<Scalar>& phi,
                                  const Eigen::VectorX<Scalar>& x)
{
    detail::require(phi.dim() == model.dim(), "apply_generator: dimension mismatch");
    const Eigen::VectorX<Scalar> g = grad_phi(phi, x);
    const Eigen::MatrixX<Scalar> hs = hess_phi(phi, x);
    return (model.Q_diff().cwiseProduct(hs)).sum() / 2 + (model.A() * x + model.b_V()).dot(g);
}

/// Nodes and weights for E f(Z), Z ~ N(0, 1): Golub-Welsch on the
/// probabilists' Hermite recurrence. Weights sum to one.
template <typename Scalar = double>
struct GaussHermiteRule {
    Eigen::VectorX<Scalar> nodes;
    Eigen::VectorX<Scalar> weights;
};

template <typename Scalar>
GaussHermiteRule<Scalar> gauss_hermite_rule(int order)
{
    detail::require(order >= 1, "gauss_hermite_rule: order must be >= 1");
    Eigen::MatrixX<Scalar> jacobi = Eigen::MatrixX<Scalar>::Zero(order, order);
    for (int k = 1; k < order; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<Scalar>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixX<Scalar>> es(jacobi);
    GaussHermiteRule<Scalar> r;
    r.nodes = es.eigenvalues();
    r.weights = es.eigenvectors().row(0).transpose().cwiseAbs2();
    r.weights /= r.weights.sum();
    // Symmetrize against round-off: nodes are +-pairs, weights mirror.
    for (int i = 0; i < order / 2; ++i) {
        const int j = order - 1 - i;
        const Scalar node = (r.nodes(j) - r.nodes(i)) / 2;
        const Scalar w = (r.weights(i) + r.weights(j)) / 2;
        r.nodes(i) = -node;
        r.nodes(j) = node;
        r.weights(i) = r.weights(j) = w;
    }
    if (order % 2 == 1) r.nodes(order / 2) = Scalar(0);
    return r;
}

inline constexpr int kHermiteOrder = 20;

template <typename Scalar>
const GaussHermiteRule<Scalar>& default_hermite_rule()
{
    static const GaussHermiteRule<Scalar> rule = gauss_hermite_rule<Scalar>(kHermiteOrder);
    return rule;
}

enum class SemigroupMode { quadrature, monte_carlo };

struct SemigroupOptions {
    std::size_t mc_samples = 100000;
    std::uint64_t seed = 0;
};

/// P_t phi(x) = E f(H^T m(t, x) + Y), Y ~ N(0, H^T Q(t) H). Evaluated as
/// f(y0) + E[f(y0 + Y) - f(y0)] so constants are reproduced exactly.
template <typename Scalar>
Scalar semigroup_apply(const GeneratorModel<Scalar>& model, const CylindricalFunction<Scalar>& phi,
                       const Eigen::VectorX<Scalar>& x, Scalar t, SemigroupMode mode = SemigroupMode::quadrature,
                       const SemigroupOptions& options = {})
{
    detail::require(phi.dim() == model.dim(), "semigroup_apply: dimension mismatch");
    detail::require_time(static_cast<double>(t), "semigroup_apply");
    const auto n = phi.arity();
    if (mode == SemigroupMode::quadrature && n > 3)
        throw ValidationError("semigroup_apply: quadrature mode supports at most 3 directions");
    if (t == Scalar(0)) return eval_phi(phi, x);

    const auto& h = phi.directions();
    const Eigen::VectorX<Scalar> y0 = h.transpose() * mean(model, t, x);
    const Eigen::MatrixX<Scalar> sigma = symmetrized(Eigen::MatrixX<Scalar>(h.transpose() * covariance(model, t) * h));
    const Eigen::MatrixX<Scalar> s = psd_sqrt(sigma);
    const auto& f = phi.profile().value;
    const Scalar centre = f(y0);

    Scalar acc = 0;
    if (mode == SemigroupMode::quadrature) {
        const auto& rule = default_hermite_rule<Scalar>();
        const int q = static_cast<int>(rule.nodes.size());
        std::vector<int> idx(static_cast<std::size_t>(n), 0);
        Eigen::VectorX<Scalar> z(n);
        while (true) {
            Scalar w = 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                z(i) = rule.nodes(idx[i]);
                w *= rule.weights(idx[i]);
            }
            acc += w * (f(y0 + s * z) - centre);
            Eigen::Index i = 0;
            while (i < n && ++idx[i] == q) idx[i++] = 0;
            if (i == n) break;
        }
    } else {
        detail::require(options.mc_samples >= 1, "semigroup_apply: mc_samples must be >= 1");
        NormalStream rng(options.seed, 0);
        for (std::size_t k = 0; k < options.mc_samples; ++k)
            acc += f(y0 + s * rng.normal_vector<Scalar>(n)) - centre;
        acc /= static_cast<Scalar>(options.mc_samples);
    }
    return centre + acc;
}

template <typename Scalar = double>
struct GeneratorCheckReport {
    std::string phi_id;
    Eigen::VectorX<Scalar> x;
    std::vector<Scalar> deltas;
    std::vector<Scalar> residuals;  ///< |(P_D phi - phi)/D - L phi|
    /// Halving-equivalent convergence ratio between consecutive deltas:
    /// (r_i / r_{i+1})^(log 2 / log(D_i / D_{i+1})); 2 for first-order decay.
    std::vector<Scalar> orders;
    Scalar generator_value{};
    bool pass = false;
};

inline constexpr double kOrderWindowLow = 1.5;
inline constexpr double kOrderWindowHigh = 2.5;

/// Difference quotients of the semigroup against the generator formula.
/// Passes when every ratio lies in [1.5, 2.5], or every residual is below 1e-12.
template <typename Scalar>
GeneratorCheckReport<Scalar> generator_check(const GeneratorModel<Scalar>& model,
                                             const CylindricalFunction<Scalar>& phi, const Eigen::VectorX<Scalar>& x,
                                             const std::vector<Scalar>& deltas)
{
    detail::require(deltas.size() >= 2, "generator_check: needs at least two deltas");
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        detail::require(deltas[i] > Scalar(0), "generator_check: deltas must be positive");
        if (i > 0) detail::require(deltas[i] < deltas[i - 1], "generator_check: deltas must decrease");
    }
    GeneratorCheckReport<Scalar> r;
    r.phi_id = phi.id();
    r.x = x;
    r.deltas = deltas;
    r.generator_value = apply_generator(model, phi, x);
    const Scalar base = eval_phi(phi, x);
    for (Scalar d : deltas) {
        const Scalar quotient = (semigroup_apply(model, phi, x, d) - base) / d;
        r.residuals.push_back(std::abs(quotient - r.generator_value));
    }
    const Scalar worst = *std::max_element(r.residuals.begin(), r.residuals.end());
    bool in_window = true;
    for (std::size_t i = 0; i + 1 < deltas.size(); ++i) {
        const Scalar ratio = r.residuals[i + 1] > Scalar(0) ? r.residuals[i] / r.residuals[i + 1]
                                                            : std::numeric_limits<Scalar>::infinity();
        const Scalar order = std::pow(ratio, std::log(Scalar(2)) / std::log(deltas[i] / deltas[i + 1]));
        r.orders.push_back(order);
        if (!(order >= Scalar(kOrderWindowLow) && order <= Scalar(kOrderWindowHigh))) in_window = false;
    }
    r.pass = worst <= Scalar(1e-12) || in_window;
    return r;
}

// ---------------------------------------------------------------------------
// Test-function corpus.

template <typename Scalar = double>
CylindricalFunction<Scalar> constant_function(Eigen::Index dim, Scalar c)
{
    Eigen::MatrixX<Scalar> h = Eigen::MatrixX<Scalar>::Zero(dim, 1);
    h(0, 0) = 1;
    Profile<Scalar> f{[c](const Eigen::VectorX<Scalar>&) { return c; },
                      [](const Eigen::VectorX<Scalar>& y) { return Eigen::VectorX<Scalar>::Zero(y.size()).eval(); },
                      [](const Eigen::VectorX<Scalar>& y) {
                          return Eigen::MatrixX<Scalar>::Zero(y.size(), y.size()).eval();
                      }};
    return CylindricalFunction<Scalar>("constant", h, f, {std::abs(c), Scalar(0), Scalar(0)});
}

/// amp * sin(<w, y> + phase); cosine via phase = pi/2.
template <typename Scalar = double>
CylindricalFunction<Scalar> sine_function(Eigen::MatrixX<Scalar> directions, Eigen::VectorX<Scalar> w,
                                          Scalar phase = 0, Scalar amp = 1, std::string id = "sine")
{
    detail::require(w.size() == directions.cols(), "sine_function: frequency length");
    Profile<Scalar> f{
        [=](const Eigen::VectorX<Scalar>& y) { return amp * std::sin(w.dot(y) + phase); },
        [=](const Eigen::VectorX<Scalar>& y) { return (amp * std::cos(w.dot(y) + phase) * w).eval(); },
        [=](const Eigen::VectorX<Scalar>& y) {
            return (-amp * std::sin(w.dot(y) + phase) * w * w.transpose()).eval();
        }};
    const Scalar a = std::abs(amp);
    return CylindricalFunction<Scalar>(std::move(id), std::move(directions), f,
                                       {a, a * w.norm(), a * w.squaredNorm()});
}

template <typename Scalar = double>
CylindricalFunction<Scalar> cosine_function(Eigen::MatrixX<Scalar> directions, Eigen::VectorX<Scalar> w,
                                            Scalar amp = 1)
{
    return sine_function(std::move(directions), std::move(w), std::numbers::pi_v<Scalar> / 2, amp, "cosine");
}

/// exp(-|y - c|^2 / (2 width^2)).
template <typename Scalar = double>
CylindricalFunction<Scalar> gaussian_bump(Eigen::MatrixX<Scalar> directions, Eigen::VectorX<Scalar> centre,
                                          Scalar width)
{
    detail::require(centre.size() == directions.cols() && width > Scalar(0), "gaussian_bump: bad parameters");
    const Scalar w2 = width * width;
    Profile<Scalar> f{
        [=](const Eigen::VectorX<Scalar>& y) { return std::exp(-(y - centre).squaredNorm() / (2 * w2)); },
        [=](const Eigen::VectorX<Scalar>& y) {
            const Scalar v = std::exp(-(y - centre).squaredNorm() / (2 * w2));
            return (-v * (y - centre) / w2).eval();
        },
        [=](const Eigen::VectorX<Scalar>& y) {
            const Scalar v = std::exp(-(y - centre).squaredNorm() / (2 * w2));
            const Eigen::VectorX<Scalar> d = y - centre;
            return (v * (d * d.transpose() / (w2 * w2) -
                         Eigen::MatrixX<Scalar>::Identity(y.size(), y.size()) / w2))
                .eval();
        }};
    // sup |f'| = e^{-1/2}/width, sup |f''| = 1/width^2 (both attained in 1-D)
    return CylindricalFunction<Scalar>("gaussian_bump", std::move(directions), f,
                                       {Scalar(1), std::exp(Scalar(-0.5)) / width, Scalar(1) / w2});
}

namespace detail {

/// b(s) = exp(-1/(1 - s^2)) on |s| < 1, zero elsewhere; returns (b, b', b'').
template <typename Scalar>
std::array<Scalar, 3> smooth_bump(Scalar s)
{
    if (std::abs(s) >= Scalar(1)) return {Scalar(0), Scalar(0), Scalar(0)};
    const Scalar u = 1 - s * s;
    const Scalar b = std::exp(-1 / u);
    const Scalar d1 = b * (-2 * s / (u * u));
    const Scalar d2 = b * (4 * s * s / (u * u * u * u) - 2 / (u * u) - 8 * s * s / (u * u * u));
    return {b, d1, d2};
}

}  // namespace detail

/// (c0 + <c, y> + q |y|^2) * prod_i b(y_i / radius): compactly supported, C^infinity.
template <typename Scalar = double>
CylindricalFunction<Scalar> bump_polynomial(Eigen::MatrixX<Scalar> directions, Scalar radius, Scalar c0,
                                            Eigen::VectorX<Scalar> c, Scalar q)
{
    const auto n = directions.cols();
    detail::require(c.size() == n && radius > Scalar(0), "bump_polynomial: bad parameters");
    auto parts = [=](const Eigen::VectorX<Scalar>& y) {
        Eigen::VectorX<Scalar> b(n), d1(n), d2(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto v = detail::smooth_bump(y(i) / radius);
            b(i) = v[0];
            d1(i) = v[1] / radius;
            d2(i) = v[2] / (radius * radius);
        }
        return std::array<Eigen::VectorX<Scalar>, 3>{b, d1, d2};
    };
    auto prod_except = [n](const Eigen::VectorX<Scalar>& b, Eigen::Index i, Eigen::Index j) {
        Scalar p = 1;
        for (Eigen::Index k = 0; k < n; ++k)
            if (k != i && k != j) p *= b(k);
        return p;
    };
    Profile<Scalar> f{
        [=](const Eigen::VectorX<Scalar>& y) {
            const auto [b, d1, d2] = parts(y);
            return (c0 + c.dot(y) + q * y.squaredNorm()) * b.prod();
        },
        [=](const Eigen::VectorX<Scalar>& y) {
            const auto [b, d1, d2] = parts(y);
            const Scalar poly = c0 + c.dot(y) + q * y.squaredNorm();
            const Eigen::VectorX<Scalar> dpoly = c + 2 * q * y;
            Eigen::VectorX<Scalar> g(n);
            for (Eigen::Index i = 0; i < n; ++i) g(i) = dpoly(i) * b.prod() + poly * d1(i) * prod_except(b, i, i);
            return g;
        },
        [=](const Eigen::VectorX<Scalar>& y) {
            const auto [b, d1, d2] = parts(y);
            const Scalar poly = c0 + c.dot(y) + q * y.squaredNorm();
            const Eigen::VectorX<Scalar> dpoly = c + 2 * q * y;
            const Scalar bp = b.prod();
            Eigen::MatrixX<Scalar> hm(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) {
                    const Scalar hb = i == j ? d2(i) * prod_except(b, i, i) : d1(i) * d1(j) * prod_except(b, i, j);
                    const Scalar gbi = d1(i) * prod_except(b, i, i);
                    const Scalar gbj = d1(j) * prod_except(b, j, j);
                    hm(i, j) = (i == j ? 2 * q * bp : Scalar(0)) + dpoly(i) * gbj + dpoly(j) * gbi + poly * hb;
                }
            return hm;
        }};
    // |poly| <= |c0| + |c|_1 r + q n r^2 on the support; b <= e^{-1}.
    const Scalar poly_sup = std::abs(c0) + c.cwiseAbs().sum() * radius + std::abs(q) * static_cast<Scalar>(n) * radius * radius;
    const Scalar sup = poly_sup * std::pow(std::exp(Scalar(-1)), static_cast<Scalar>(n));
    return CylindricalFunction<Scalar>("bump_polynomial", std::move(directions), f,
                                       {sup, std::numeric_limits<Scalar>::quiet_NaN(),
                                        std::numeric_limits<Scalar>::quiet_NaN()});
}

}  // namespace gm
