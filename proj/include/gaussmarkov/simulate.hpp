#pragma once

// Sample paths of dZ = (AZ + b_V) dt + Q^{1/2} dW and the martingale
//
//   M(t) = Z(t) - m(t, x) - int_0^t A (Z(s) - m(s, x)) ds,
//
// whose projections M^h = <M, h> have variance t |Q^{1/2} h|^2.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gaussmarkov/errors.hpp"
#include "gaussmarkov/gaussian.hpp"
#include "gaussmarkov/rng.hpp"
#include "gaussmarkov/semigroup.hpp"

namespace gm {

template <typename Scalar = double>
struct SamplePath {
    std::vector<Scalar> times;
    Eigen::MatrixX<Scalar> states;  ///< dim x (K + 1), column k is Z(times[k])
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
};

/// One exact step Z -> L(delta) Z + g(delta) + S(delta) xi with S = Q(delta)^{1/2}.
template <typename Scalar = double>
class ExactStepper {
public:
    ExactStepper(const GeneratorModel<Scalar>& model, Scalar delta)
    {
        detail::require(delta > Scalar(0), "ExactStepper: delta must be positive");
        const auto n = model.dim();
        const auto flow = detail::augmented_flow(model, delta);
        evolution_ = flow.topLeftCorner(n, n);
        drift_ = flow.topRightCorner(n, 1);
        noise_ = psd_sqrt(covariance(model, delta));
    }

    Eigen::VectorX<Scalar> step(const Eigen::VectorX<Scalar>& z, NormalStream& rng) const
    {
        return evolution_ * z + drift_ + noise_ * rng.normal_vector<Scalar>(z.size());
    }

    /// Allocation-free step; `xi` is scratch of length dim.
    template <typename In, typename Out>
    void step_into(const In& z, Out&& out, Eigen::VectorX<Scalar>& xi, NormalStream& rng) const
    {
        for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = static_cast<Scalar>(rng());
        out.noalias() = evolution_ * z;
        out += drift_;
        out.noalias() += noise_ * xi;
    }

    const Eigen::MatrixX<Scalar>& evolution() const noexcept { return evolution_; }
    const Eigen::VectorX<Scalar>& drift() const noexcept { return drift_; }
    const Eigen::MatrixX<Scalar>& noise() const noexcept { return noise_; }

private:
    Eigen::MatrixX<Scalar> evolution_;
    Eigen::VectorX<Scalar> drift_;
    Eigen::MatrixX<Scalar> noise_;
};

/// One draw from mu(delta, x), stream 0 of `seed`.
template <typename Scalar>
Eigen::VectorX<Scalar> exact_transition_sample(const GeneratorModel<Scalar>& model, const Eigen::VectorX<Scalar>& x,
                                               Scalar delta, std::uint64_t seed)
{
    detail::require(x.size() == model.dim(), "exact_transition_sample: state has wrong length");
    NormalStream rng(seed, 0);
    return ExactStepper<Scalar>(model, delta).step(x, rng);
}

namespace detail {

template <typename Scalar>
std::vector<Scalar> uniform_grid(Scalar horizon, long n_steps)
{
    require(n_steps >= 1, "path: n_steps must be >= 1");
    require(horizon > Scalar(0), "path: horizon must be positive");
    std::vector<Scalar> t(n_steps + 1);
    for (long k = 0; k <= n_steps; ++k) t[k] = horizon * static_cast<Scalar>(k) / static_cast<Scalar>(n_steps);
    return t;
}

}  // namespace detail

/// Chains exact transitions on a uniform grid; the law at each grid time is
/// mu(t_k, x) exactly. Draws come from stream `stream` of `seed`.
template <typename Scalar>
SamplePath<Scalar> simulate_path(const ExactStepper<Scalar>& stepper, const Eigen::VectorX<Scalar>& x,
                                 Scalar horizon, long n_steps, std::uint64_t seed, std::uint64_t stream = 0)
{
    SamplePath<Scalar> p;
    p.times = detail::uniform_grid(horizon, n_steps);
    p.seed = seed;
    p.stream = stream;
    p.states.resize(x.size(), n_steps + 1);
    p.states.col(0) = x;
    NormalStream rng(seed, stream);
    Eigen::VectorX<Scalar> xi(x.size());
    for (long k = 0; k < n_steps; ++k) stepper.step_into(p.states.col(k), p.states.col(k + 1), xi, rng);
    return p;
}

template <typename Scalar>
SamplePath<Scalar> simulate_path(const GeneratorModel<Scalar>& model, const Eigen::VectorX<Scalar>& x,
                                 Scalar horizon, long n_steps, std::uint64_t seed, std::uint64_t stream = 0)
{
    detail::require(x.size() == model.dim(), "simulate_path: state has wrong length");
    detail::require(n_steps >= 1, "simulate_path: n_steps must be >= 1");
    const ExactStepper<Scalar> stepper(model, horizon / static_cast<Scalar>(n_steps));
    return simulate_path(stepper, x, horizon, n_steps, seed, stream);
}

/// Z_{k+1} = Z_k + (A Z_k + b_V) dt + Q^{1/2} sqrt(dt) xi_k.
template <typename Scalar>
SamplePath<Scalar> euler_maruyama_path(const GeneratorModel<Scalar>& model, const Eigen::VectorX<Scalar>& x,
                                       Scalar horizon, long n_steps, std::uint64_t seed, std::uint64_t stream = 0)
{
    detail::require(x.size() == model.dim(), "euler_maruyama_path: state has wrong length");
    SamplePath<Scalar> p;
    p.times = detail::uniform_grid(horizon, n_steps);
    p.seed = seed;
    p.stream = stream;
    const Scalar dt = horizon / static_cast<Scalar>(n_steps);
    const Eigen::MatrixX<Scalar> noise = psd_sqrt(model.Q_diff()) * std::sqrt(dt);
    p.states.resize(x.size(), n_steps + 1);
    p.states.col(0) = x;
    NormalStream rng(seed, stream);
    for (long k = 0; k < n_steps; ++k) {
        const Eigen::VectorX<Scalar> z = p.states.col(k);
        p.states.col(k + 1) = z + (model.A() * z + model.b_V()) * dt + noise * rng.normal_vector<Scalar>(x.size());
    }
    return p;
}

template <typename Scalar = double>
struct MartingaleDiagnostic {
    Eigen::VectorX<Scalar> h;
    std::vector<Scalar> times;
    Eigen::MatrixX<Scalar> values;   ///< paths x times; empty when accumulated in streaming mode
    std::vector<Scalar> mean;
    std::vector<Scalar> var;
    std::vector<Scalar> mean_se;     ///< standard error of the mean
    std::vector<Scalar> theory_var;  ///< t |Q^{1/2} h|^2
    Scalar theory_slope{};
    Scalar fitted_slope{};           ///< least-squares slope of var against t
    /// corr(M(c_{i+1}) - M(c_i), M(c_i)) at checkpoints c_i, with SE 1/sqrt(paths)
    std::vector<Scalar> checkpoint_times;
    std::vector<Scalar> increment_correlation;
    Scalar correlation_se{};
    std::size_t paths = 0;
    bool mean_ok = false, slope_ok = false, increments_ok = false;
    bool pass = false;
};

/// Streaming reduction of M^h over paths sharing one grid and start x.
/// M^h(t_k) = <Z(t_k) - m(t_k), h> - trapezoid sum of <Z - m, A^T h> ds.
template <typename Scalar = double>
class MartingaleAccumulator {
public:
    MartingaleAccumulator(const GeneratorModel<Scalar>& model, const Eigen::VectorX<Scalar>& x,
                          std::vector<Scalar> times, Eigen::VectorX<Scalar> h, int checkpoints = 10)
        : times_(std::move(times)), h_(std::move(h))
    {
        detail::require(h_.size() == model.dim(), "martingale: direction has wrong length");
        detail::require(h_.norm() > Scalar(0), "martingale: direction must be nonzero");
        detail::require(times_.size() >= 2 && times_.front() == Scalar(0), "martingale: grid must start at 0");
        a_t_h_ = model.A().transpose() * h_;
        theory_slope_ = (psd_sqrt(model.Q_diff()) * h_).squaredNorm();
        means_.resize(model.dim(), static_cast<Eigen::Index>(times_.size()));
        for (std::size_t k = 0; k < times_.size(); ++k) means_.col(k) = gm::mean(model, times_[k], x);
        const std::size_t last = times_.size() - 1;
        for (int c = 0; c <= checkpoints; ++c)
            checkpoints_.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(last) * c / checkpoints)));
        sum_.assign(times_.size(), 0);
        sum_sq_.assign(times_.size(), 0);
        inc_.assign(checkpoints_.size(), {});
        scratch_.resize(times_.size());
    }

    const std::vector<Scalar>& times() const noexcept { return times_; }

    /// M^h along one path.
    const std::vector<Scalar>& evaluate(const SamplePath<Scalar>& path)
    {
        detail::require(path.times.size() == times_.size(), "martingale: path grid mismatch");
        for (std::size_t k = 0; k < times_.size(); ++k)
            detail::require(path.times[k] == times_[k], "martingale: path grid mismatch");
        Scalar integral = 0;
        Scalar prev = 0;
        for (std::size_t k = 0; k < times_.size(); ++k) {
            const auto dev = path.states.col(k) - means_.col(k);
            const Scalar drift_term = dev.dot(a_t_h_);
            if (k > 0) integral += (times_[k] - times_[k - 1]) * (prev + drift_term) / 2;
            prev = drift_term;
            scratch_[k] = dev.dot(h_) - integral;
        }
        return scratch_;
    }

    void add(const SamplePath<Scalar>& path)
    {
        const auto& m = evaluate(path);
        for (std::size_t k = 0; k < m.size(); ++k) {
            sum_[k] += m[k];
            sum_sq_[k] += m[k] * m[k];
        }
        for (std::size_t c = 0; c + 1 < checkpoints_.size(); ++c) {
            const Scalar past = m[checkpoints_[c]];
            const Scalar inc = m[checkpoints_[c + 1]] - past;
            auto& s = inc_[c];
            s[0] += past;
            s[1] += inc;
            s[2] += past * past;
            s[3] += inc * inc;
            s[4] += past * inc;
        }
        ++paths_;
    }

    MartingaleDiagnostic<Scalar> finish() const
    {
        detail::require(paths_ >= 2, "martingale: need at least two paths");
        MartingaleDiagnostic<Scalar> d;
        d.h = h_;
        d.times = times_;
        d.paths = paths_;
        d.theory_slope = theory_slope_;
        const Scalar n = static_cast<Scalar>(paths_);
        d.mean_ok = true;
        for (std::size_t k = 0; k < times_.size(); ++k) {
            const Scalar mu = sum_[k] / n;
            const Scalar var = std::max(Scalar(0), (sum_sq_[k] - n * mu * mu) / (n - 1));
            d.mean.push_back(mu);
            d.var.push_back(var);
            d.mean_se.push_back(std::sqrt(var / n));
            d.theory_var.push_back(times_[k] * theory_slope_);
            if (std::abs(mu) > 4 * d.mean_se.back() + Scalar(1e-12)) d.mean_ok = false;
        }
        Scalar mt = 0, mv = 0;
        for (std::size_t k = 0; k < times_.size(); ++k) {
            mt += times_[k];
            mv += d.var[k];
        }
        mt /= static_cast<Scalar>(times_.size());
        mv /= static_cast<Scalar>(times_.size());
        Scalar sxy = 0, sxx = 0;
        for (std::size_t k = 0; k < times_.size(); ++k) {
            sxy += (times_[k] - mt) * (d.var[k] - mv);
            sxx += (times_[k] - mt) * (times_[k] - mt);
        }
        d.fitted_slope = sxy / sxx;
        d.slope_ok = theory_slope_ > Scalar(0)
                         ? std::abs(d.fitted_slope - theory_slope_) <= Scalar(0.03) * theory_slope_
                         : std::abs(d.fitted_slope) <= Scalar(1e-8);

        d.correlation_se = Scalar(1) / std::sqrt(n);
        d.increments_ok = true;
        for (std::size_t c = 0; c + 1 < checkpoints_.size(); ++c) {
            d.checkpoint_times.push_back(times_[checkpoints_[c]]);
            const auto& s = inc_[c];
            const Scalar cov = s[4] / n - (s[0] / n) * (s[1] / n);
            const Scalar vp = s[2] / n - (s[0] / n) * (s[0] / n);
            const Scalar vi = s[3] / n - (s[1] / n) * (s[1] / n);
            const Scalar corr = (vp > Scalar(0) && vi > Scalar(0)) ? cov / std::sqrt(vp * vi) : Scalar(0);
            d.increment_correlation.push_back(corr);
            if (std::abs(corr) > 4 * d.correlation_se) d.increments_ok = false;
        }
        d.pass = d.mean_ok && d.slope_ok && d.increments_ok;
        return d;
    }

private:
    std::vector<Scalar> times_;
    Eigen::VectorX<Scalar> h_;
    Eigen::VectorX<Scalar> a_t_h_;
    Scalar theory_slope_{};
    Eigen::MatrixX<Scalar> means_;
    std::vector<std::size_t> checkpoints_;
    std::vector<Scalar> sum_, sum_sq_;
    std::vector<std::array<Scalar, 5>> inc_;
    std::vector<Scalar> scratch_;
    std::size_t paths_ = 0;
};

/// Martingale diagnostics over materialized paths (all starting at the same x).
template <typename Scalar>
MartingaleDiagnostic<Scalar> martingale_stats(const GeneratorModel<Scalar>& model,
                                              std::span<const SamplePath<Scalar>> paths,
                                              const Eigen::VectorX<Scalar>& h)
{
    detail::require(!paths.empty(), "martingale_stats: no paths");
    const Eigen::VectorX<Scalar> x = paths.front().states.col(0);
    for (const auto& p : paths)
        detail::require(p.states.col(0) == x, "martingale_stats: paths start from different states");
    MartingaleAccumulator<Scalar> acc(model, x, paths.front().times, h);
    Eigen::MatrixX<Scalar> values(static_cast<Eigen::Index>(paths.size()),
                                  static_cast<Eigen::Index>(paths.front().times.size()));
    for (std::size_t i = 0; i < paths.size(); ++i) {
        const auto& m = acc.evaluate(paths[i]);
        for (std::size_t k = 0; k < m.size(); ++k) values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = m[k];
        acc.add(paths[i]);
    }
    auto d = acc.finish();
    d.values = std::move(values);
    return d;
}

enum class PathScheme { exact, euler_maruyama };

/// Streaming Monte Carlo: path i uses stream i of `master_seed`.
template <typename Scalar>
MartingaleDiagnostic<Scalar> martingale_monte_carlo(const GeneratorModel<Scalar>& model,
                                                    const Eigen::VectorX<Scalar>& x, Scalar horizon, long n_steps,
                                                    const Eigen::VectorX<Scalar>& h, std::uint64_t master_seed,
                                                    std::size_t n_paths, PathScheme scheme = PathScheme::exact)
{
    MartingaleAccumulator<Scalar> acc(model, x, detail::uniform_grid(horizon, n_steps), h);
    const ExactStepper<Scalar> stepper(model, horizon / static_cast<Scalar>(n_steps));
    for (std::size_t i = 0; i < n_paths; ++i) {
        if (scheme == PathScheme::exact)
            acc.add(simulate_path(stepper, x, horizon, n_steps, master_seed, i));
        else
            acc.add(euler_maruyama_path(model, x, horizon, n_steps, master_seed, i));
    }
    return acc.finish();
}

}  // namespace gm
