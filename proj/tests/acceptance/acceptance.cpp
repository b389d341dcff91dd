// Acceptance run: one PASS/FAIL line per criterion, each with its wall-clock
// budget. Exit status is 0 only when every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "gaussmarkov/boundary.hpp"
#include "gaussmarkov/gaussian.hpp"
#include "gaussmarkov/generator.hpp"
#include "gaussmarkov/identify.hpp"
#include "gaussmarkov/semigroup.hpp"
#include "gaussmarkov/simulate.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double pi = std::numbers::pi;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            if (pass) detail << "first failure: " << what << "; ";
            pass = false;
        }
    }
};

VectorXd scalar(double v) { return VectorXd::Constant(1, v); }

// --- 1 ----------------------------------------------------------------------

void scalar_oracles(Outcome& o)
{
    const auto ou = testing::scalar_ou();
    const double e1 = std::abs(gm::mean(ou, 1.0, scalar(0))(0) - (1 - std::exp(-1.0)));
    const double e2 = std::abs(gm::covariance(ou, 1.0)(0, 0) - (1 - std::exp(-2.0)));
    const double e3 = std::abs(gm::cross_covariance(ou, 0.5, 1.0)(0, 0) - std::exp(-0.5) * (1 - std::exp(-1.0)));
    const double e4 = std::abs(gm::b_H(ou)(0) - 0.5);
    o.require(e1 < 1e-10, "m(1,0)");
    o.require(e2 < 1e-10, "Q(1)");
    o.require(e3 < 1e-10, "Q(0.5,1)");
    o.require(e4 < 1e-10, "b_H");
    o.detail << "errors m=" << e1 << " Q=" << e2 << " Q(s,t)=" << e3 << " b_H=" << e4;
}

// --- 2 ----------------------------------------------------------------------

void chapman_kolmogorov(Outcome& o)
{
    double worst_mean = 0, worst_cov = 0;
    for (int k = 0; k < 50; ++k) {
        const Eigen::Index n = 1 + k % 16;
        const auto m = testing::random_stable_model(1000 + static_cast<std::uint64_t>(k), n);
        gm::NormalStream rng(2000 + static_cast<std::uint64_t>(k), 0);
        for (int trial = 0; trial < 20; ++trial) {
            const double s = 2 * rng.uniform(), t = 2 * rng.uniform();
            const VectorXd x = 2 * testing::gaussian_matrix(rng, n, 1).col(0);
            const auto r = gm::verify_chapman_kolmogorov(m, s, t, x, 1e-9);
            worst_mean = std::max(worst_mean, r.mean_residual);
            worst_cov = std::max(worst_cov, r.cov_residual);
        }
    }
    o.require(worst_mean < 1e-9, "mean composition");
    o.require(worst_cov < 1e-9, "covariance composition");
    o.detail << "1000 checks, max mean residual " << worst_mean << ", max cov residual " << worst_cov;
}

// --- 3 ----------------------------------------------------------------------

/// Conditional moments of Y given X = x from the bivariate density on a
/// fine y-grid (trapezoid).
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
        const double w = (i == 0 || i == n ? 0.5 : 1.0) *
                         std::exp(-0.5 * (vy * dx * dx - 2 * cxy * dx * dy + vx * dy * dy) / det);
        z0 += w;
        z1 += w * y;
        z2 += w * y * y;
    }
    const double mean = z1 / z0;
    return {mean, z2 / z0 - mean * mean};
}

void conditional_gaussian(Outcome& o)
{
    gm::NormalStream rng(31, 0);
    double worst_grid = 0;
    for (int k = 0; k < 20; ++k) {
        const MatrixXd c = testing::random_spd(rng, 2, 0.05);
        const double mx = rng(), my = rng(), x = mx + 2 * rng();
        gm::JointGaussian<double> j(scalar(mx), scalar(my), c.topLeftCorner(1, 1), c.bottomRightCorner(1, 1),
                                    c.topRightCorner(1, 1));
        const auto cond = gm::conditional(j, scalar(x));
        const auto [gm_mean, gm_var] = grid_conditional(mx, my, c(0, 0), c(1, 1), c(0, 1), x);
        worst_grid = std::max({worst_grid, std::abs(cond.mean()(0) - gm_mean), std::abs(cond.cov()(0, 0) - gm_var)});
    }
    o.require(worst_grid < 1e-6, "grid-density oracle");

    bool psd = true, x_free = true;
    for (int nx = 1; nx <= 8; ++nx)
        for (int ny = 1; ny <= 8; ++ny)
            for (Eigen::Index rank : {Eigen::Index(nx + ny), Eigen::Index(std::max(1, (nx + ny) / 2))}) {
                const MatrixXd joint = testing::random_spd(rng, nx + ny, 0.0, rank);
                gm::JointGaussian<double> j(VectorXd::Zero(nx), VectorXd::Zero(ny), joint.topLeftCorner(nx, nx),
                                            joint.bottomRightCorner(ny, ny), joint.topRightCorner(nx, ny));
                const auto a = gm::conditional(j, testing::gaussian_matrix(rng, nx, 1).col(0).eval());
                const auto b = gm::conditional(j, testing::gaussian_matrix(rng, nx, 1).col(0).eval());
                psd = psd && gm::is_psd(a.cov());
                x_free = x_free && a.cov() == b.cov();
            }
    o.require(psd, "conditional covariance PSD");
    o.require(x_free, "conditional covariance independent of x");

    // U = K^T C_X^{-1/2} (X - m_X) and V = Y - m_Y - U are uncorrelated
    const int n = 100000;
    double worst_z = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const Eigen::Index nx = 2 + static_cast<Eigen::Index>(seed % 2), ny = 2;
        const MatrixXd joint = testing::random_spd(rng, nx + ny, 0.1);
        const VectorXd mean = testing::gaussian_matrix(rng, nx + ny, 1).col(0);
        gm::JointGaussian<double> j(mean.head(nx), mean.tail(ny), joint.topLeftCorner(nx, nx),
                                    joint.bottomRightCorner(ny, ny), joint.topRightCorner(nx, ny));
        const auto reg = gm::regression_operator(j);
        const MatrixXd draws = gm::sample(gm::GaussianMeasure<double>(mean, joint), 40 + seed, n);
        const MatrixXd u = reg.K_adjoint * reg.cx_inv_sqrt * (draws.topRows(nx).colwise() - mean.head(nx));
        const MatrixXd v = (draws.bottomRows(ny).colwise() - mean.tail(ny)) - u;
        const MatrixXd uc = u.colwise() - u.rowwise().mean();
        const MatrixXd vc = v.colwise() - v.rowwise().mean();
        const MatrixXd cov = uc * vc.transpose() / (n - 1);
        for (Eigen::Index a = 0; a < ny; ++a)
            for (Eigen::Index b = 0; b < ny; ++b) {
                const double se = std::sqrt(uc.row(a).squaredNorm() / n * vc.row(b).squaredNorm() / n / n);
                worst_z = std::max(worst_z, std::abs(cov(a, b)) / se);
            }
    }
    o.require(worst_z < 4, "independence statistic");
    o.detail << "grid oracle max error " << worst_grid << ", 128 joints PSD/x-free, max |z| independence "
             << worst_z;
}

// --- 4 ----------------------------------------------------------------------

void identification(Outcome& o)
{
    double worst_a = 0, worst_b = 0, worst_q = 0;
    int models = 0;
    for (Eigen::Index n = 1; n <= 8; ++n)
        for (std::uint64_t rep = 0; rep < 3; ++rep) {
            const auto m = testing::random_stable_model(3000 + 10 * static_cast<std::uint64_t>(n) + rep, n);
            std::vector<double> times;
            for (int k = 1; k <= 10; ++k) times.push_back(1e-3 * k);
            const auto samples = gm::sample_kernel_family(m, times, gm::default_probes<double>(n, rep));
            const auto r = gm::identify(samples);
            worst_a = std::max(worst_a, (r.A_hat - m.A()).norm() / m.A().norm());
            worst_b = std::max(worst_b, (r.b_hat - m.b_V()).norm());
            worst_q = std::max(worst_q, (r.Q_hat - m.Q_diff()).norm());
            ++models;
        }
    o.require(worst_a < 1e-6, "A relative error");
    o.require(worst_b < 1e-4, "b_V error");
    o.require(worst_q < 1e-4, "Q_diff error");
    o.detail << models << " models, max rel A " << worst_a << ", max |b| " << worst_b << ", max |Q| " << worst_q;
}

// --- 5 ----------------------------------------------------------------------

void martingale(Outcome& o)
{
    const auto ou = testing::scalar_ou();
    const auto d = gm::martingale_monte_carlo<double>(ou, scalar(0), 1.0, 1000, scalar(1), 20241018, 100000);
    double worst_z = 0;
    for (std::size_t k = 1; k < d.times.size(); ++k) worst_z = std::max(worst_z, std::abs(d.mean[k]) / d.mean_se[k]);
    o.require(std::abs(d.mean[0]) == 0.0 && worst_z <= 4, "mean within 4 SE");
    // least-squares slope of Var M(t) against t, recomputed here
    double st = 0, sv = 0;
    for (std::size_t k = 0; k < d.times.size(); ++k) {
        st += d.times[k];
        sv += d.var[k];
    }
    st /= static_cast<double>(d.times.size());
    sv /= static_cast<double>(d.times.size());
    double sxy = 0, sxx = 0;
    for (std::size_t k = 0; k < d.times.size(); ++k) {
        sxy += (d.times[k] - st) * (d.var[k] - sv);
        sxx += (d.times[k] - st) * (d.times[k] - st);
    }
    const double slope = sxy / sxx;
    o.require(std::abs(slope - 2.0) <= 0.03 * 2.0, "variance slope within 3% of 2");
    o.detail << "1e5 paths, 1000 steps, max |mean|/SE " << worst_z << ", slope " << slope << " (theory 2)";
}

// --- 6 ----------------------------------------------------------------------

/// Seeded models small enough that the first-order remainder r ~ |L^2 phi| D / 2
/// stays below 1e-3 at D = 0.025. At points where L^2 phi(x) nearly vanishes the
/// D^2 term takes over and the halving ratio leaves [1.5, 2.5]; this scaling
/// keeps all 50 seeded (model, phi, x) cases away from such points.
gm::GeneratorModel<double> generator_test_model(std::uint64_t seed, Eigen::Index n)
{
    const auto base = testing::random_stable_model(5000 + seed, n, 0.1, 0.1);
    return gm::GeneratorModel<double>(base.A(), VectorXd(0.05 * base.b_V()), MatrixXd(0.02 * base.Q_diff()));
}

std::vector<gm::CylindricalFunction<double>> generator_corpus(Eigen::Index dim, gm::NormalStream& rng)
{
    auto dirs = [&](Eigen::Index k) {
        MatrixXd h = testing::gaussian_matrix(rng, dim, k);
        h.colwise().normalize();
        return h;
    };
    std::vector<gm::CylindricalFunction<double>> out;
    out.push_back(gm::constant_function<double>(dim, 1.5));
    out.push_back(gm::sine_function<double>(dirs(1), scalar(0.8), 0.4));
    out.push_back(gm::cosine_function<double>(dirs(2), (VectorXd(2) << 0.6, -0.5).finished()));
    out.push_back(gm::gaussian_bump<double>(dirs(2), (VectorXd(2) << 0.3, -0.2).finished(), 1.5));
    out.push_back(gm::bump_polynomial<double>(dirs(3), 4.0, 1.0, (VectorXd(3) << 0.2, -0.1, 0.1).finished(), 0.05));
    return out;
}

void generator_formula(Outcome& o)
{
    const std::vector<double> deltas{0.1, 0.05, 0.025};
    double worst_final = 0, worst_gap = 0, lo = 1e9, hi = 0;
    int checks = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Eigen::Index n = 1 + static_cast<Eigen::Index>(seed % 5);
        const auto model = generator_test_model(seed, n);
        const auto shifted = model.with_lambda(model.lambda() + 4.0);
        gm::NormalStream rng(6000 + seed, 0);
        for (const auto& phi : generator_corpus(n, rng)) {
            const VectorXd x = 0.5 * testing::gaussian_matrix(rng, n, 1).col(0);
            const auto r = gm::generator_check(model, phi, x, deltas);
            o.require(r.pass, phi.id() + " order window");
            worst_final = std::max(worst_final, r.residuals.back());
            for (double q : r.orders) {
                if (!std::isfinite(q)) continue;  // constants: r = 0 at every step
                lo = std::min(lo, q);
                hi = std::max(hi, q);
            }
            const double l1 = gm::apply_generator(model, phi, x), l2 = gm::apply_generator(shifted, phi, x);
            worst_gap = std::max(worst_gap, std::abs(l1 - l2));
            ++checks;
        }
    }
    o.require(worst_final < 1e-3, "final residual");
    o.require(worst_gap <= 1e-12, "lambda independence");
    o.detail << checks << " checks, order ratios in [" << lo << ", " << hi << "], max final residual " << worst_final
             << ", max lambda gap " << worst_gap;
}

// --- 7 ----------------------------------------------------------------------

void boundary(Outcome& o)
{
    double worst_fd = 0;
    for (double t : {0.05, 0.2, 1.0, 2.0})
        for (double xi : {0.1, 0.5, 1.0, 2.0, 4.0}) {
            // G is odd in eta, so G(h)/h is the central difference at eta = 0
            const double h = 1e-5;
            const double central = gm::heat_kernel(t, xi, h) / h;
            worst_fd = std::max(worst_fd, std::abs(central - gm::kernel_normal_derivative(t, xi)));
        }
    o.require(worst_fd < 1e-8, "normal derivative vs finite differences");

    // q(1,1,1): adaptive Gauss-Kronrod in log time vs composite Simpson in time
    const int panels = 200000;
    const double hs = 1.0 / panels;
    double simpson = 0;
    for (int k = 1; k <= panels; ++k) {
        const double s = k * hs;
        const double f = std::pow(gm::kernel_normal_derivative(s, 1.0), 2);
        simpson += (k == panels ? 1 : (k % 2 ? 4 : 2)) * f;
    }
    simpson *= hs / 3;
    const double q111 = gm::covariance_q(1.0, 1.0, 1.0);
    o.require(std::abs(q111 - simpson) < 1e-8, "q(1,1,1) two quadratures");

    // field variance at (t, xi) = (1, 1): a one-node grid holding xi = 1
    gm::HalfLineGrid<double> point{20.0, 0.5, scalar(1.0), scalar(1.0), scalar(1.0)};
    const gm::BoundarySimulator<double> at_one(point, 1.0, 1000);
    const int replicas = 10000;
    const VectorXd z = at_one.noise(7, 0, replicas).row(0).transpose();
    const double var = (z.array() - z.mean()).square().sum() / (replicas - 1);
    const double var_se = q111 * std::sqrt(2.0 / replicas);
    o.require(std::abs(var - q111) < 4 * var_se, "field variance at (1, 1)");

    const auto grid = gm::make_half_line_grid<double>();
    double worst_eig = 0;
    for (double t : {0.1, 1.0, 2.0}) {
        const MatrixXd gram = gm::q_gram(grid, t);
        const Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram, Eigen::EigenvaluesOnly);
        worst_eig = std::min(worst_eig, es.eigenvalues().minCoeff() / es.eigenvalues().maxCoeff());
    }
    o.require(worst_eig >= -1e-10, "q-Gram PSD");

    // E|u(t)|_H^2 <= int rho(xi) / (pi xi^2) d xi = (1/alpha + 1)/pi since q(t, xi, xi) increases to 1/(pi xi^2)
    const double bound = (1 / grid.alpha + 1) / pi;
    double worst_norm = 0;
    bool monotone = true;
    double prev = 0;
    for (int k = 1; k <= 40; ++k) {
        const double e = gm::expected_weighted_norm_sq(grid, 0.05 * k);
        monotone = monotone && e >= prev;
        prev = e;
        worst_norm = std::max(worst_norm, e);
    }
    const gm::BoundarySimulator<double> sim(grid, 2.0, 1000);
    const MatrixXd fields = sim.noise(8, 0, 200);
    VectorXd norms(fields.cols());
    for (Eigen::Index r = 0; r < fields.cols(); ++r) norms(r) = gm::weighted_norm_sq<double>(grid, fields.col(r));
    const double emp = norms.mean();
    const double emp_se = std::sqrt((norms.array() - emp).square().sum() / (norms.size() - 1) / norms.size());
    o.require(monotone && worst_norm <= bound, "expected weighted norm bounded");
    o.require(emp <= bound + 4 * emp_se, "empirical weighted norm bounded");

    const MatrixXd projected = gm::projected_q_covariance(grid, 1.0, 4);
    const MatrixXd galerkin = gm::covariance(gm::galerkin_project(grid, 4, 1.0), 1.0);
    double worst_gap = 0;
    for (int k = 0; k < 4; ++k) worst_gap = std::max(worst_gap, std::abs(galerkin(k, k) - projected(k, k)) / projected(k, k));
    o.require(worst_gap <= 0.05, "Galerkin covariance within 5%");

    o.detail << "FD error " << worst_fd << ", q(1,1,1) " << q111 << " vs Simpson " << simpson << ", var " << var
             << " (SE " << var_se << "), min eig ratio " << worst_eig << ", sup E|u|^2 " << worst_norm << " <= "
             << bound << ", empirical " << emp << ", Galerkin gap " << worst_gap;
}

// --- 8 ----------------------------------------------------------------------

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

int run_gmk(const std::string& args)
{
    const std::string cmd = std::string(GMK_BINARY) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void determinism(Outcome& o)
{
    const fs::path root = fs::temp_directory_path() / ("gmk_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    auto write = [&](const std::string& name, const std::string& text) { std::ofstream(root / name) << text; };
    write("model.json",
          R"({"dim": 3, "A": [[-1, 0.2, 0], [0.1, -0.7, 0.3], [0, -0.2, -1.2]], "b_V": [0.5, -1, 0.2],)"
          R"( "Q_diff": [[1, 0.1, 0], [0.1, 0.6, 0.05], [0, 0.05, 0.3]]})");
    write("kernel.json", R"({"model": "model.json", "delta": 0.001, "n_times": 6})");
    write("identify.json", R"({"samples": "kernel_a/kernel_samples.json"})");
    write("simulate.json", R"({"model": "model.json", "x0": [1, 0, -1], "n_steps": 200, "n_paths": 8})");
    write("simulate_em.json",
          R"({"model": "model.json", "n_steps": 200, "n_paths": 8, "scheme": "euler_maruyama"})");
    write("martingale.json", R"({"model": "model.json", "n_steps": 100, "n_paths": 2000})");
    write("generator.json", R"({"model": "model.json", "x": [0.2, -0.1, 0.3]})");
    write("boundary.json", R"({"replicas": 4, "n_time_steps": 200, "x_amplitude": 1.0, "galerkin_modes": 2,)"
                           R"( "xi_max": 8, "panel_width": 0.5, "geometric_panels": 10})");

    const std::vector<std::pair<std::string, std::string>> runs = {
        {"kernel", "kernel.json"},         {"identify", "identify.json"},     {"simulate", "simulate.json"},
        {"simulate", "simulate_em.json"}, {"martingale", "martingale.json"}, {"generator", "generator.json"},
        {"boundary", "boundary.json"},
    };
    int files = 0;
    for (const auto& [command, config] : runs) {
        const std::string stem = config.substr(0, config.find('.'));
        const fs::path a = root / (stem + "_a"), b = root / (stem + "_b");
        const std::string base = command + " --config " + (root / config).string() + " --seed 11 --out ";
        const int ca = run_gmk(base + a.string());
        const int cb = run_gmk(base + b.string());
        o.require(ca == 0 || ca == 1, config + " ran");
        o.require(ca == cb, config + " exit codes agree");
        for (const auto& entry : fs::directory_iterator(a)) {
            const auto name = entry.path().filename();
            if (name == "manifest.json") continue;
            o.require(fs::exists(b / name) && slurp(entry.path()) == slurp(b / name),
                      config + ": " + name.string() + " differs");
            ++files;
        }
    }
    fs::remove_all(root);
    o.detail << runs.size() << " commands, " << files << " output files compared byte for byte";
}

}  // namespace

int main()
{
    struct Criterion {
        int id;
        const char* title;
        double budget_s;
        std::function<void(Outcome&)> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "scalar OU closed forms", 1, scalar_oracles},
        {2, "Chapman-Kolmogorov composition", 30, chapman_kolmogorov},
        {3, "conditional Gaussian regression", 60, conditional_gaussian},
        {4, "identification round trip", 60, identification},
        {5, "martingale diagnostics", 300, martingale},
        {6, "generator formula", 120, generator_formula},
        {7, "boundary noise", 600, boundary},
        {8, "CLI determinism", 600, determinism},
    };
    bool all = true;
    for (const auto& c : criteria) {
        Outcome o;
        const auto start = std::chrono::steady_clock::now();
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        o.require(secs < c.budget_s, "runtime budget");
        all = all && o.pass;
        std::printf("%s criterion %d: %s [%.2f s of %.0f s] %s\n", o.pass ? "PASS" : "FAIL", c.id, c.title, secs,
                    c.budget_s, o.detail.str().c_str());
        std::fflush(stdout);
    }
    return all ? EXIT_SUCCESS : EXIT_FAILURE;
}
