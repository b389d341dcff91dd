#pragma once

// Heat equation on the half-line with white-noise Dirichlet data:
//
//   du/dt = d^2u/dxi^2,  u(t, 0) = dW/dt,  u(0, .) = x
//   u(t, xi) = int G(t, xi, eta) x(eta) d eta + int_0^t dG/deta(t - s, xi, 0) dW(s)
//
// with the Dirichlet heat kernel G, the state space L^2(rho dxi),
// rho(xi) = min(1, xi^{1+alpha}), and a sine-mode Galerkin surrogate on [0, Xi].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "gaussmarkov/errors.hpp"
#include "gaussmarkov/rng.hpp"
#include "gaussmarkov/semigroup.hpp"

namespace gm {

struct HalfLineGridOptions {
    double xi_max = 20.0;
    double alpha = 0.5;
    double panel_width = 0.25;   ///< uniform panels on [1, xi_max]
    int geometric_panels = 30;   ///< panels [r^{k+1}, r^k] on (0, 1]
    double geometric_ratio = 0.5;
};

/// Composite 8-point Gauss-Legendre grid on (0, xi_max], geometrically refined toward 0.
template <typename Scalar = double>
struct HalfLineGrid {
    Scalar xi_max{};
    Scalar alpha{};
    Eigen::VectorX<Scalar> nodes;
    Eigen::VectorX<Scalar> weights;  ///< Lebesgue weights: sum_j f(xi_j) w_j ~ int f d xi
    Eigen::VectorX<Scalar> rho;      ///< rho(xi_j)

    Eigen::Index size() const noexcept { return nodes.size(); }
};

template <typename Scalar>
Scalar weight_rho(Scalar xi, Scalar alpha)
{
    return std::min(Scalar(1), std::pow(xi, 1 + alpha));
}

template <typename Scalar = double>
HalfLineGrid<Scalar> make_half_line_grid(const HalfLineGridOptions& o = {})
{
    detail::require(o.xi_max > 1.0, "half-line grid: xi_max must exceed 1");
    detail::require(o.alpha > 0.0 && o.alpha < 1.0, "half-line grid: alpha must lie in (0, 1)");
    detail::require(o.panel_width > 0.0 && o.geometric_panels >= 1 && o.geometric_ratio > 0.0 &&
                        o.geometric_ratio < 1.0,
                    "half-line grid: bad panel parameters");
    std::vector<std::pair<Scalar, Scalar>> panels;
    for (int k = o.geometric_panels - 1; k >= 0; --k)
        panels.emplace_back(std::pow(Scalar(o.geometric_ratio), k + 1), std::pow(Scalar(o.geometric_ratio), k));
    const int uniform = static_cast<int>(std::ceil((o.xi_max - 1.0) / o.panel_width - 1e-9));
    const Scalar width = (Scalar(o.xi_max) - 1) / uniform;
    for (int k = 0; k < uniform; ++k) panels.emplace_back(1 + k * width, k + 1 == uniform ? Scalar(o.xi_max) : 1 + (k + 1) * width);

    using Rule = boost::math::quadrature::gauss<Scalar, 8>;
    std::vector<Scalar> ref_nodes, ref_weights;
    const auto& ab = Rule::abscissa();
    const auto& wt = Rule::weights();
    for (std::size_t i = 0; i < ab.size(); ++i) {
        ref_nodes.push_back(-ab[i]);
        ref_weights.push_back(wt[i]);
        ref_nodes.push_back(ab[i]);
        ref_weights.push_back(wt[i]);
    }

    HalfLineGrid<Scalar> g;
    g.xi_max = Scalar(o.xi_max);
    g.alpha = Scalar(o.alpha);
    const auto n = static_cast<Eigen::Index>(panels.size() * ref_nodes.size());
    g.nodes.resize(n);
    g.weights.resize(n);
    std::vector<std::pair<Scalar, Scalar>> pts;
    for (const auto& [a, b] : panels)
        for (std::size_t i = 0; i < ref_nodes.size(); ++i)
            pts.emplace_back((a + b) / 2 + (b - a) / 2 * ref_nodes[i], (b - a) / 2 * ref_weights[i]);
    std::sort(pts.begin(), pts.end());
    for (Eigen::Index j = 0; j < n; ++j) {
        g.nodes(j) = pts[j].first;
        g.weights(j) = pts[j].second;
    }
    g.rho = g.nodes.unaryExpr([&](Scalar xi) { return weight_rho(xi, g.alpha); });
    return g;
}

/// G(t, xi, eta) = (4 pi t)^{-1/2} (exp(-(xi-eta)^2/4t) - exp(-(xi+eta)^2/4t)).
template <typename Scalar>
Scalar heat_kernel(Scalar t, Scalar xi, Scalar eta)
{
    detail::require(t > Scalar(0), "heat_kernel: t must be positive");
    detail::require(xi >= Scalar(0) && eta >= Scalar(0), "heat_kernel: xi, eta must be >= 0");
    const Scalar d = xi - eta;
    return std::exp(-d * d / (4 * t)) * -std::expm1(-xi * eta / t) / std::sqrt(4 * std::numbers::pi_v<Scalar> * t);
}

/// dG/deta(t, xi, 0) = xi / (2 sqrt(pi) t^{3/2}) exp(-xi^2 / 4t).
template <typename Scalar>
Scalar kernel_normal_derivative(Scalar t, Scalar xi)
{
    detail::require(t > Scalar(0), "kernel_normal_derivative: t must be positive");
    detail::require(xi >= Scalar(0), "kernel_normal_derivative: xi must be >= 0");
    return xi / (2 * std::sqrt(std::numbers::pi_v<Scalar>) * t * std::sqrt(t)) * std::exp(-xi * xi / (4 * t));
}

/// q(t, xi, eta) = int_0^t dG/deta(s, xi, 0) dG/deta(s, eta, 0) ds by adaptive
/// Gauss-Kronrod in log s (the integrand peaks at s = (xi^2 + eta^2)/8 and is
/// doubly-exponentially small below it).
template <typename Scalar>
Scalar covariance_q(Scalar t, Scalar xi, Scalar eta)
{
    detail::require(t > Scalar(0), "covariance_q: t must be positive");
    detail::require(xi >= Scalar(0) && eta >= Scalar(0), "covariance_q: xi, eta must be >= 0");
    if (xi == Scalar(0) || eta == Scalar(0)) return Scalar(0);
    const Scalar a = (xi * xi + eta * eta) / 4;
    const Scalar pref = xi * eta / (4 * std::numbers::pi_v<Scalar>);
    // s^{-3} exp(-a/s) ds = exp(-2v - a e^{-v}) dv with s = e^v. The exponent
    // peaks at v = log(a/2); it is taken relative to its maximum on the range,
    // via expm1, so large a/t neither underflows nor cancels.
    const Scalar v_hi = std::log(t);
    // below a e^{-v} = a/t + 60 the integrand is under e^{-50} of its peak
    const Scalar v_lo = std::log(a / (a / t + 60));
    const Scalar v_ref = std::min(v_hi, std::log(a / 2));
    const Scalar c_ref = a * std::exp(-v_ref);
    const Scalar top = -2 * v_ref - c_ref;
    // u = v - v_ref keeps full relative precision where the integrand is steep
    auto integrand = [&](Scalar u) { return std::exp(-2 * u - c_ref * std::expm1(-u)); };
    Scalar err = 0;
    const Scalar scaled = boost::math::quadrature::gauss_kronrod<Scalar, 31>::integrate(
        integrand, v_lo - v_ref, v_hi - v_ref, 15, Scalar(1e-12), &err);
    return pref * scaled * std::exp(top);
}

/// Discretized |u|_H^2 = sum_j u_j^2 rho_j w_j.
template <typename Scalar>
Scalar weighted_norm_sq(const HalfLineGrid<Scalar>& grid, const Eigen::VectorX<Scalar>& values)
{
    detail::require(values.size() == grid.size(), "weighted_norm_sq: values do not match grid");
    return (values.cwiseAbs2().cwiseProduct(grid.rho).cwiseProduct(grid.weights)).sum();
}

/// E|u(t)|_H^2 for zero initial data: sum_j q(t, xi_j, xi_j) rho_j w_j.
template <typename Scalar>
Scalar expected_weighted_norm_sq(const HalfLineGrid<Scalar>& grid, Scalar t)
{
    Scalar s = 0;
    for (Eigen::Index j = 0; j < grid.size(); ++j)
        s += covariance_q(t, grid.nodes(j), grid.nodes(j)) * grid.rho(j) * grid.weights(j);
    return s;
}

/// Da(xi) = a exp(-xi sqrt(lambda)): solves (lambda - d^2/dxi^2) phi = 0, phi(0) = a.
template <typename Scalar>
Scalar dirichlet_map(Scalar a, Scalar lambda, Scalar xi)
{
    detail::require(lambda > Scalar(0), "dirichlet_map: lambda must be positive");
    return a * std::exp(-xi * std::sqrt(lambda));
}

/// int G(t, xi, eta) x(eta) d eta at every grid node (Lebesgue quadrature).
template <typename Scalar>
Eigen::VectorX<Scalar> deterministic_part(const HalfLineGrid<Scalar>& grid, Scalar t,
                                          const Eigen::VectorX<Scalar>& x)
{
    detail::require(x.size() == grid.size(), "deterministic_part: initial profile does not match grid");
    detail::require(t > Scalar(0), "deterministic_part: t must be positive");
    Eigen::VectorX<Scalar> out = Eigen::VectorX<Scalar>::Zero(grid.size());
    if (x.isZero(0)) return out;
    const Eigen::VectorX<Scalar> wx = x.cwiseProduct(grid.weights);
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
        Scalar s = 0;
        for (Eigen::Index j = 0; j < grid.size(); ++j)
            if (wx(j) != Scalar(0)) s += heat_kernel(t, grid.nodes(i), grid.nodes(j)) * wx(j);
        out(i) = s;
    }
    return out;
}

template <typename Scalar = double>
struct BoundaryField {
    HalfLineGrid<Scalar> grid;
    Scalar time{};
    Eigen::VectorX<Scalar> values;
    std::uint64_t seed = 0;
    std::uint64_t replica = 0;
};

/// Stochastic convolution on a uniform grid of n cells in [0, t]:
/// sum_k dG/deta(t - s_k, xi, 0) dW_k at left endpoints s_k for all but the
/// last cell; the last cell is drawn with its exact variance q(dt, xi, xi).
/// Replica r uses stream r of the seed.
template <typename Scalar = double>
class BoundarySimulator {
public:
    BoundarySimulator(HalfLineGrid<Scalar> grid, Scalar t, long n_time_steps)
        : grid_(std::move(grid)), t_(t), steps_(n_time_steps)
    {
        detail::require(t > Scalar(0), "boundary simulation: t must be positive");
        detail::require(n_time_steps >= 1, "boundary simulation: n_time_steps must be >= 1");
        const Scalar ds = t / static_cast<Scalar>(n_time_steps);
        loadings_.resize(grid_.size(), n_time_steps);
        for (long k = 0; k + 1 < n_time_steps; ++k) {
            const Scalar lag = t - ds * static_cast<Scalar>(k);
            for (Eigen::Index j = 0; j < grid_.size(); ++j)
                loadings_(j, k) = kernel_normal_derivative(lag, grid_.nodes(j)) * std::sqrt(ds);
        }
        for (Eigen::Index j = 0; j < grid_.size(); ++j)
            loadings_(j, n_time_steps - 1) = std::sqrt(covariance_q(ds, grid_.nodes(j), grid_.nodes(j)));
    }

    const HalfLineGrid<Scalar>& grid() const noexcept { return grid_; }
    Scalar time() const noexcept { return t_; }

    /// Noise part of replicas [first, first + count) as columns.
    Eigen::MatrixX<Scalar> noise(std::uint64_t seed, std::uint64_t first, Eigen::Index count) const
    {
        Eigen::MatrixX<Scalar> z(steps_, count);
        for (Eigen::Index r = 0; r < count; ++r) {
            NormalStream rng(seed, first + static_cast<std::uint64_t>(r));
            for (long k = 0; k < steps_; ++k) z(k, r) = static_cast<Scalar>(rng());
        }
        return loadings_ * z;
    }

    BoundaryField<Scalar> field(const Eigen::VectorX<Scalar>& deterministic, std::uint64_t seed,
                                std::uint64_t replica, bool with_noise = true) const
    {
        detail::require(deterministic.size() == grid_.size(), "boundary simulation: profile does not match grid");
        BoundaryField<Scalar> f{grid_, t_, deterministic, seed, replica};
        if (with_noise) f.values += noise(seed, replica, 1).col(0);
        return f;
    }

private:
    HalfLineGrid<Scalar> grid_;
    Scalar t_;
    long steps_;
    Eigen::MatrixX<Scalar> loadings_;  ///< nodes x cells
};

template <typename Scalar>
BoundaryField<Scalar> simulate_boundary_field(const HalfLineGrid<Scalar>& grid, Scalar t,
                                              const Eigen::VectorX<Scalar>& x, long n_time_steps,
                                              std::uint64_t seed, bool with_noise = true)
{
    const Eigen::VectorX<Scalar> det = deterministic_part(grid, t, x);
    if (!with_noise) return BoundaryField<Scalar>{grid, t, det, seed, 0};
    return BoundarySimulator<Scalar>(grid, t, n_time_steps).field(det, seed, 0, true);
}

/// phi_k(xi) = sqrt(2/Xi) sin(k pi xi / Xi), k >= 1.
template <typename Scalar>
Scalar sine_mode(Scalar xi_max, int k, Scalar xi)
{
    return std::sqrt(2 / xi_max) * std::sin(static_cast<Scalar>(k) * std::numbers::pi_v<Scalar> * xi / xi_max);
}

/// Grid values of phi_1..phi_n as columns.
template <typename Scalar>
Eigen::MatrixX<Scalar> sine_mode_matrix(const HalfLineGrid<Scalar>& grid, int n_modes)
{
    Eigen::MatrixX<Scalar> m(grid.size(), n_modes);
    for (int k = 0; k < n_modes; ++k)
        for (Eigen::Index j = 0; j < grid.size(); ++j) m(j, k) = sine_mode(grid.xi_max, k + 1, grid.nodes(j));
    return m;
}

/// Lebesgue coefficients <u, phi_k> for each column of `values`.
template <typename Scalar>
Eigen::MatrixX<Scalar> project_onto_modes(const HalfLineGrid<Scalar>& grid, const Eigen::MatrixX<Scalar>& values,
                                          int n_modes)
{
    detail::require(values.rows() == grid.size(), "project_onto_modes: values do not match grid");
    return sine_mode_matrix(grid, n_modes).transpose() * grid.weights.asDiagonal() * values;
}

/// [q(t, xi_i, xi_j)] over all grid nodes.
template <typename Scalar>
Eigen::MatrixX<Scalar> q_gram(const HalfLineGrid<Scalar>& grid, Scalar t)
{
    const auto n = grid.size();
    Eigen::MatrixX<Scalar> g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) g(i, j) = g(j, i) = covariance_q(t, grid.nodes(i), grid.nodes(j));
    return g;
}

/// int int q(t, xi, eta) phi_k(xi) phi_l(eta) d xi d eta, k, l = 1..n.
template <typename Scalar>
Eigen::MatrixX<Scalar> projected_q_covariance(const HalfLineGrid<Scalar>& grid, Scalar t, int n_modes)
{
    const Eigen::MatrixX<Scalar> m = grid.weights.asDiagonal() * sine_mode_matrix(grid, n_modes);
    return m.transpose() * q_gram(grid, t) * m;
}

/// Truncated model on [0, Xi] in the sine basis: A = diag(-(k pi / Xi)^2),
/// b_V = 0, Q^{1/2} column = (lambda - A) <D1, phi_k>.
template <typename Scalar>
GeneratorModel<Scalar> galerkin_project(const HalfLineGrid<Scalar>& grid, int n_modes, Scalar lambda)
{
    detail::require(n_modes >= 1, "galerkin_project: n_modes must be >= 1");
    detail::require(4 * static_cast<Eigen::Index>(n_modes) <= grid.size(), "galerkin_project: n_modes too large for grid");
    detail::require(lambda > Scalar(0), "galerkin_project: lambda must be positive");
    Eigen::MatrixX<Scalar> a = Eigen::MatrixX<Scalar>::Zero(n_modes, n_modes);
    Eigen::VectorX<Scalar> column(n_modes);
    const Eigen::VectorX<Scalar> d1 =
        grid.nodes.unaryExpr([&](Scalar xi) { return dirichlet_map(Scalar(1), lambda, xi); });
    const Eigen::VectorX<Scalar> proj = project_onto_modes(grid, Eigen::MatrixX<Scalar>(d1), n_modes);
    for (int k = 0; k < n_modes; ++k) {
        const Scalar freq = static_cast<Scalar>(k + 1) * std::numbers::pi_v<Scalar> / grid.xi_max;
        a(k, k) = -freq * freq;
        column(k) = (lambda - a(k, k)) * proj(k);
    }
    return GeneratorModel<Scalar>(a, Eigen::VectorX<Scalar>::Zero(n_modes), column * column.transpose(), lambda);
}

}  // namespace gm
