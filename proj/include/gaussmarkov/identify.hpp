#pragma once

// Inverse direction: recover (L, A, b_V, Q) from a sampled family of
// Gaussian transition kernels.
//
//   L(t) x = m(t, x) - m(t, 0)                    least squares over probes
//   A      = log(L(delta)) / delta                smallest grid time only
//   b_V    = lim g(s)/s,  Q = lim Q(s)/s          one Richardson step on (delta, 2 delta)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "gaussmarkov/errors.hpp"
#include "gaussmarkov/gaussian.hpp"
#include "gaussmarkov/rng.hpp"
#include "gaussmarkov/semigroup.hpp"

namespace gm {

/// Observed kernel family on a time grid and a probe set.
/// means[i][j] = m(times[i], probes.col(j)); covs[i] = Q(times[i]).
/// probe_covs, when present, carries one covariance per (time, probe) so the
/// x-independence of Q(t, x) can be tested.
template <typename Scalar = double>
struct KernelSamples {
    using Vector = Eigen::VectorX<Scalar>;
    using Matrix = Eigen::MatrixX<Scalar>;

    Eigen::Index dim = 0;
    std::vector<Scalar> times;
    Matrix probes;  ///< dim x p, one probe per column
    std::vector<std::vector<Vector>> means;
    std::vector<Matrix> covs;
    std::optional<std::vector<std::vector<Matrix>>> probe_covs;

    Eigen::Index probe_count() const noexcept { return probes.cols(); }

    /// Column index of the zero probe, or -1.
    Eigen::Index origin_index() const
    {
        for (Eigen::Index j = 0; j < probes.cols(); ++j)
            if (probes.col(j).isZero(0)) return j;
        return -1;
    }

    void validate() const
    {
        detail::require(dim > 0, "KernelSamples: dim must be positive");
        detail::require(!times.empty(), "KernelSamples: empty time grid");
        for (std::size_t i = 0; i < times.size(); ++i) {
            detail::require(times[i] > Scalar(0) && std::isfinite(static_cast<double>(times[i])),
                            "KernelSamples: times must be positive");
            if (i > 0) detail::require(times[i] > times[i - 1], "KernelSamples: times must be strictly increasing");
        }
        detail::require(probes.rows() == dim && probes.cols() > 0, "KernelSamples: probe matrix shape");
        detail::require(means.size() == times.size(), "KernelSamples: means table has wrong time count");
        detail::require(covs.size() == times.size(), "KernelSamples: covs table has wrong time count");
        for (std::size_t i = 0; i < times.size(); ++i) {
            detail::require(static_cast<Eigen::Index>(means[i].size()) == probes.cols(),
                            "KernelSamples: means table has wrong probe count");
            for (const auto& m : means[i]) detail::require(m.size() == dim, "KernelSamples: mean vector length");
            detail::require(covs[i].rows() == dim && covs[i].cols() == dim, "KernelSamples: covariance shape");
        }
        if (probe_covs) {
            detail::require(probe_covs->size() == times.size(), "KernelSamples: probe_covs time count");
            for (const auto& row : *probe_covs) {
                detail::require(static_cast<Eigen::Index>(row.size()) == probes.cols(),
                                "KernelSamples: probe_covs probe count");
                for (const auto& c : row)
                    detail::require(c.rows() == dim && c.cols() == dim, "KernelSamples: probe_covs shape");
            }
        }
    }
};

/// Origin, the N basis vectors, and `extra` seeded random probes.
template <typename Scalar = double>
Eigen::MatrixX<Scalar> default_probes(Eigen::Index dim, std::uint64_t seed, Eigen::Index extra = 2)
{
    Eigen::MatrixX<Scalar> p = Eigen::MatrixX<Scalar>::Zero(dim, dim + 1 + extra);
    p.block(0, 1, dim, dim).setIdentity();
    NormalStream rng(seed, 0x70726f6265ull);
    for (Eigen::Index k = 0; k < extra; ++k) p.col(dim + 1 + k) = rng.normal_vector<Scalar>(dim);
    return p;
}

/// Exact kernel tables of a model on (times x probes).
template <typename Scalar>
KernelSamples<Scalar> sample_kernel_family(const TransitionKernel<Scalar>& kernel, const std::vector<Scalar>& times,
                                           const Eigen::MatrixX<Scalar>& probes)
{
    KernelSamples<Scalar> s;
    s.dim = kernel.model().dim();
    s.times = times;
    s.probes = probes;
    for (Scalar t : times) {
        const auto& e = kernel.at(t);
        std::vector<Eigen::VectorX<Scalar>> row;
        row.reserve(probes.cols());
        for (Eigen::Index j = 0; j < probes.cols(); ++j) row.push_back(e.evolution * probes.col(j) + e.drift);
        s.means.push_back(std::move(row));
        s.covs.push_back(e.cov);
    }
    s.validate();
    return s;
}

template <typename Scalar>
KernelSamples<Scalar> sample_kernel_family(const GeneratorModel<Scalar>& model, const std::vector<Scalar>& times,
                                           const Eigen::MatrixX<Scalar>& probes)
{
    TransitionKernel<Scalar> k(model);
    return sample_kernel_family(k, times, probes);
}

template <typename Scalar>
struct EvolutionEstimate {
    Scalar time{};
    Eigen::MatrixX<Scalar> L;
    Scalar residual{};  ///< ||L X - Y||_F over the probe system
};

/// L(t) at every grid time from m(t, x) - m(t, 0) = L(t) x, minimal-norm least squares.
template <typename Scalar>
std::vector<EvolutionEstimate<Scalar>> extract_L(const KernelSamples<Scalar>& samples)
{
    samples.validate();
    const auto origin = samples.origin_index();
    if (origin < 0) throw ValidationError("extract_L: probe set must contain the origin");
    const auto& x = samples.probes;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixX<Scalar>> cod(x.transpose());
    cod.setThreshold(Scalar(1e-12));
    if (cod.rank() < samples.dim)
        throw RankDeficientError("extract_L: probes do not span the state space (rank " +
                                 std::to_string(cod.rank()) + " < " + std::to_string(samples.dim) + ")");
    std::vector<EvolutionEstimate<Scalar>> out;
    out.reserve(samples.times.size());
    for (std::size_t i = 0; i < samples.times.size(); ++i) {
        Eigen::MatrixX<Scalar> y(samples.dim, x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) y.col(j) = samples.means[i][j] - samples.means[i][origin];
        EvolutionEstimate<Scalar> e;
        e.time = samples.times[i];
        e.L = cod.solve(y.transpose()).transpose();
        e.residual = (e.L * x - y).norm();
        out.push_back(std::move(e));
    }
    return out;
}

template <typename Scalar>
struct AffineReport {
    bool insufficient_probes = false;
    Eigen::Index checked_probes = 0;        ///< probes lying in the affine hull of the others
    std::vector<Scalar> residual_per_time;  ///< max over held-out probes
    Scalar max_residual{};
    bool consistent = true;
};

/// Leave-one-out superposition test: every probe that is an affine
/// combination sum c_i x_i (sum c_i = 1) of the remaining probes must satisfy
/// m(t, x_j) = sum c_i m(t, x_i).
template <typename Scalar>
AffineReport<Scalar> check_affine(const KernelSamples<Scalar>& samples, Scalar tol)
{
    samples.validate();
    AffineReport<Scalar> r;
    const auto p = samples.probe_count();
    r.residual_per_time.assign(samples.times.size(), Scalar(0));
    if (p < 3) {
        r.insufficient_probes = true;
        return r;
    }
    const auto n = samples.dim;
    const Scalar scale = std::max(Scalar(1), samples.probes.cwiseAbs().maxCoeff());
    for (Eigen::Index j = 0; j < p; ++j) {
        Eigen::MatrixX<Scalar> sys(n + 1, p - 1);
        std::vector<Eigen::Index> others;
        for (Eigen::Index k = 0, c = 0; k < p; ++k) {
            if (k == j) continue;
            sys.col(c).head(n) = samples.probes.col(k);
            sys(n, c) = Scalar(1);
            others.push_back(k);
            ++c;
        }
        Eigen::VectorX<Scalar> rhs(n + 1);
        rhs.head(n) = samples.probes.col(j);
        rhs(n) = Scalar(1);
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixX<Scalar>> cod(sys);
        const Eigen::VectorX<Scalar> c = cod.solve(rhs);
        if ((sys * c - rhs).norm() > Scalar(1e-10) * scale) continue;
        ++r.checked_probes;
        for (std::size_t i = 0; i < samples.times.size(); ++i) {
            Eigen::VectorX<Scalar> pred = Eigen::VectorX<Scalar>::Zero(n);
            for (std::size_t k = 0; k < others.size(); ++k) pred += c(k) * samples.means[i][others[k]];
            const Scalar res = (samples.means[i][j] - pred).norm();
            r.residual_per_time[i] = std::max(r.residual_per_time[i], res);
        }
    }
    if (r.checked_probes == 0) {
        r.insufficient_probes = true;
        return r;
    }
    r.max_residual = *std::max_element(r.residual_per_time.begin(), r.residual_per_time.end());
    r.consistent = r.max_residual <= tol;
    return r;
}

/// A = log(L(delta)) / delta, principal branch.
template <typename Scalar>
Eigen::MatrixX<Scalar> recover_A(const Eigen::MatrixX<Scalar>& L_delta, Scalar delta)
{
    detail::require(delta > Scalar(0), "recover_A: delta must be positive");
    detail::require(L_delta.rows() == L_delta.cols(), "recover_A: L must be square");
    const auto n = L_delta.rows();
    if (L_delta.isIdentity(0)) return Eigen::MatrixX<Scalar>::Zero(n, n);
    const auto ev = Eigen::EigenSolver<Eigen::MatrixX<Scalar>>(L_delta, false).eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        const Scalar mag = std::abs(ev(i));
        if (mag == Scalar(0) ||
            (ev(i).real() <= Scalar(0) && std::abs(ev(i).imag()) <= Scalar(1e-10) * std::max(mag, Scalar(1e-300))))
            throw LogBranchError("recover_A: L(delta) has an eigenvalue on the closed negative real axis; "
                                 "use a smaller delta");
    }
    Eigen::MatrixX<Scalar> a = L_delta.log() / delta;
    if (!a.allFinite()) throw LogBranchError("recover_A: matrix logarithm failed; use a smaller delta");
    return a;
}

namespace detail {

template <typename Scalar>
void require_dyadic_start(const KernelSamples<Scalar>& samples, const char* what)
{
    if (samples.times.size() < 2 ||
        std::abs(samples.times[1] - 2 * samples.times[0]) > Scalar(1e-12) * samples.times[1])
        throw ValidationError(std::string(what) + ": grid must start with delta, 2*delta");
}

}  // namespace detail

template <typename Scalar>
struct DriftEstimate {
    Eigen::VectorX<Scalar> b;
    Eigen::VectorX<Scalar> ratio_delta;    ///< g(delta) / delta
    Eigen::VectorX<Scalar> ratio_2delta;   ///< g(2 delta) / (2 delta)
};

/// b_V = 2 g(delta)/delta - g(2 delta)/(2 delta), g(s) = m(s, 0).
template <typename Scalar>
DriftEstimate<Scalar> recover_b(const KernelSamples<Scalar>& samples)
{
    samples.validate();
    detail::require_dyadic_start(samples, "recover_b");
    const auto origin = samples.origin_index();
    if (origin < 0) throw ValidationError("recover_b: probe set must contain the origin");
    const Scalar d = samples.times[0];
    DriftEstimate<Scalar> e;
    e.ratio_delta = samples.means[0][origin] / d;
    e.ratio_2delta = samples.means[1][origin] / (2 * d);
    e.b = 2 * e.ratio_delta - e.ratio_2delta;
    return e;
}

/// Q = 2 Q(delta)/delta - Q(2 delta)/(2 delta), symmetrized and clamped to PSD.
template <typename Scalar>
Eigen::MatrixX<Scalar> recover_Q(const KernelSamples<Scalar>& samples)
{
    samples.validate();
    detail::require_dyadic_start(samples, "recover_Q");
    const Scalar d = samples.times[0];
    const Eigen::MatrixX<Scalar> raw = symmetrized(Eigen::MatrixX<Scalar>(2 * samples.covs[0] / d - samples.covs[1] / (2 * d)));
    if (raw.isZero(0)) return raw;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixX<Scalar>> es(raw);
    const Eigen::VectorX<Scalar> clamped = es.eigenvalues().cwiseMax(Scalar(0));
    return symmetrized(Eigen::MatrixX<Scalar>(es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose()));
}

template <typename Scalar>
struct GrowthBound {
    Scalar C{};
    Scalar lambda0{};
};

/// Envelope |m(t, 0)| <= C exp(lambda0 t). lambda0 is the least-squares slope
/// of log|g| over the later half of the grid (t >= median time); C is then
/// raised until the bound holds at every grid time.
template <typename Scalar>
GrowthBound<Scalar> growth_bound(const KernelSamples<Scalar>& samples)
{
    samples.validate();
    detail::require(samples.times.size() >= 3, "growth_bound: needs at least 3 grid times");
    const auto origin = samples.origin_index();
    if (origin < 0) throw ValidationError("growth_bound: probe set must contain the origin");
    std::vector<Scalar> ts, logs, norms;
    for (std::size_t i = 0; i < samples.times.size(); ++i) {
        norms.push_back(samples.means[i][origin].norm());
        if (norms.back() > Scalar(0)) {
            ts.push_back(samples.times[i]);
            logs.push_back(std::log(norms.back()));
        }
    }
    if (ts.empty()) return {Scalar(0), Scalar(0)};

    const Scalar t_mid = (samples.times.front() + samples.times.back()) / 2;
    std::vector<Scalar> ft, fl;
    for (std::size_t i = 0; i < ts.size(); ++i)
        if (ts[i] >= t_mid) {
            ft.push_back(ts[i]);
            fl.push_back(logs[i]);
        }
    if (ft.size() < 2) {
        ft = ts;
        fl = logs;
    }
    Scalar slope = Scalar(0);
    Scalar intercept = fl.front();
    if (ft.size() >= 2) {
        const Scalar n = static_cast<Scalar>(ft.size());
        Scalar mt = 0, ml = 0;
        for (std::size_t i = 0; i < ft.size(); ++i) {
            mt += ft[i];
            ml += fl[i];
        }
        mt /= n;
        ml /= n;
        Scalar sxy = 0, sxx = 0;
        for (std::size_t i = 0; i < ft.size(); ++i) {
            sxy += (ft[i] - mt) * (fl[i] - ml);
            sxx += (ft[i] - mt) * (ft[i] - mt);
        }
        slope = sxx > Scalar(0) ? sxy / sxx : Scalar(0);
        intercept = ml - slope * mt;
    }
    Scalar log_c = intercept;
    for (std::size_t i = 0; i < samples.times.size(); ++i)
        if (norms[i] > Scalar(0)) log_c = std::max(log_c, std::log(norms[i]) - slope * samples.times[i]);
    // One ulp-scale margin so the envelope dominates after re-evaluation.
    return {std::exp(log_c) * (Scalar(1) + Scalar(1e-12)), slope};
}

template <typename Scalar>
struct IdentificationDiagnostics {
    std::vector<Scalar> fit_residual;       ///< extract_L residual per time
    AffineReport<Scalar> affine;
    Scalar covariance_x_dependence{};       ///< max_{t, j} ||Q(t, x_j) - Q(t, 0)||_F, 0 without probe_covs
    std::vector<Scalar> mean_residual;      ///< per time, max over probes of re-simulated mean error
    std::vector<Scalar> cov_residual;       ///< per time, ||Q_model(t) - Q(t)||_F
    Scalar semigroup_residual{};            ///< max ||L(ti + tj) - L(ti) L(tj)|| over grid pairs
    Scalar max_mean_residual{};
    Scalar max_cov_residual{};
    Eigen::VectorX<Scalar> b_ratio_delta, b_ratio_2delta;
    GrowthBound<Scalar> growth{};
};

template <typename Scalar = double>
struct IdentifiedModel {
    std::vector<EvolutionEstimate<Scalar>> L_hat;
    Eigen::MatrixX<Scalar> A_hat;
    Eigen::VectorX<Scalar> b_hat;
    Eigen::MatrixX<Scalar> Q_hat;
    Scalar lambda{};
    IdentificationDiagnostics<Scalar> diagnostics;
    bool gauss_markov_consistent = true;
    bool residuals_ok = true;

    GeneratorModel<Scalar> model() const { return GeneratorModel<Scalar>(A_hat, b_hat, Q_hat, lambda); }
};

/// Full inverse pipeline plus re-simulation diagnostics. A failed affine or
/// x-independence check marks the result inconsistent but estimates are still returned.
template <typename Scalar>
IdentifiedModel<Scalar> identify(const KernelSamples<Scalar>& samples, Scalar tol = Scalar(1e-4))
{
    samples.validate();
    IdentifiedModel<Scalar> out;
    auto& dg = out.diagnostics;

    out.L_hat = extract_L(samples);
    for (const auto& e : out.L_hat) dg.fit_residual.push_back(e.residual);
    dg.affine = check_affine(samples, tol);
    if (samples.probe_covs) {
        const auto origin = samples.origin_index();
        for (std::size_t i = 0; i < samples.times.size(); ++i)
            for (const auto& c : (*samples.probe_covs)[i])
                dg.covariance_x_dependence =
                    std::max(dg.covariance_x_dependence, (c - (*samples.probe_covs)[i][origin]).norm());
    }

    out.A_hat = recover_A(out.L_hat.front().L, samples.times.front());
    const auto drift = recover_b(samples);
    out.b_hat = drift.b;
    dg.b_ratio_delta = drift.ratio_delta;
    dg.b_ratio_2delta = drift.ratio_2delta;
    out.Q_hat = recover_Q(samples);
    if (samples.times.size() >= 3) dg.growth = growth_bound(samples);

    for (std::size_t i = 0; i < out.L_hat.size(); ++i)
        for (std::size_t j = i; j < out.L_hat.size(); ++j) {
            const Scalar target = out.L_hat[i].time + out.L_hat[j].time;
            for (const auto& e : out.L_hat)
                if (std::abs(e.time - target) <= Scalar(1e-12) * target)
                    dg.semigroup_residual =
                        std::max(dg.semigroup_residual, (e.L - out.L_hat[i].L * out.L_hat[j].L).norm());
        }

    out.lambda = default_lambda(out.A_hat);
    TransitionKernel<Scalar> forward(out.model());
    for (std::size_t i = 0; i < samples.times.size(); ++i) {
        const auto& e = forward.at(samples.times[i]);
        Scalar worst = 0;
        for (Eigen::Index j = 0; j < samples.probe_count(); ++j)
            worst = std::max(worst, (e.evolution * samples.probes.col(j) + e.drift - samples.means[i][j]).norm());
        dg.mean_residual.push_back(worst);
        dg.cov_residual.push_back((e.cov - samples.covs[i]).norm());
    }
    dg.max_mean_residual = *std::max_element(dg.mean_residual.begin(), dg.mean_residual.end());
    dg.max_cov_residual = *std::max_element(dg.cov_residual.begin(), dg.cov_residual.end());

    out.gauss_markov_consistent = dg.affine.consistent && dg.covariance_x_dependence <= tol;
    out.residuals_ok = dg.max_mean_residual <= tol && dg.max_cov_residual <= tol;
    return out;
}

}  // namespace gm
