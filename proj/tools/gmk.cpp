// gmk: config-driven front end. Every subcommand reads a JSON config, applies
// flag overrides, writes its artifacts plus manifest.json into --out, and
// exits 0 (checks passed), 1 (a scientific check failed) or 2 (usage/IO).

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gaussmarkov/boundary.hpp"
#include "gaussmarkov/generator.hpp"
#include "gaussmarkov/identify.hpp"
#include "gaussmarkov/io.hpp"
#include "gaussmarkov/semigroup.hpp"
#include "gaussmarkov/simulate.hpp"

namespace fs = std::filesystem;
using gm::io::json;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Parameters of one run: the user config, and the resolved copy that ends up
/// in the manifest with every default spelled out.
class Config {
public:
    Config(json in, fs::path base) : in_(std::move(in)), base_(std::move(base))
    {
        if (!in_.is_object()) throw UsageError("config must be a JSON object");
    }

    template <typename T>
    T get(const std::string& key, T fallback)
    {
        T v = fallback;
        if (auto it = in_.find(key); it != in_.end() && !it->is_null()) {
            try {
                v = it->get<T>();
            } catch (const json::exception&) {
                throw UsageError("config field '" + key + "' has the wrong type");
            }
        }
        resolved_[key] = v;
        return v;
    }

    const json* raw(const std::string& key) const
    {
        auto it = in_.find(key);
        return it == in_.end() || it->is_null() ? nullptr : &*it;
    }

    void set(const std::string& key, json v) { resolved_[key] = std::move(v); }

    /// A model given inline or as a path relative to the config file.
    gm::GeneratorModel<double> model()
    {
        const json* m = raw("model");
        if (!m) throw UsageError("config is missing 'model'");
        json doc = *m;
        if (m->is_string()) doc = gm::io::read_json_file(resolve_path(m->get<std::string>()));
        auto model = gm::io::model_from_json(doc);
        resolved_["model"] = gm::io::model_to_json(model);
        return model;
    }

    fs::path resolve_path(const std::string& p) const
    {
        fs::path path(p);
        return path.is_absolute() ? path : base_ / path;
    }

    const json& resolved() const noexcept { return resolved_; }

private:
    json in_;
    fs::path base_;
    json resolved_ = json::object();
};

struct RunContext {
    std::string command;
    fs::path out;
    std::uint64_t seed = 0;
    double tol = 0;
    std::vector<std::string> outputs;

    void write(const std::string& name, const std::string& text)
    {
        gm::io::write_text_file(out / name, text);
        outputs.push_back(name);
    }
};

std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void prepare_out_dir(const fs::path& out)
{
    std::error_code ec;
    if (fs::exists(out, ec)) {
        if (!fs::is_directory(out, ec)) throw gm::IoError("output path exists and is not a directory: " + out.string());
        if (!fs::is_empty(out, ec)) throw gm::IoError("output directory is not empty: " + out.string());
    }
    fs::create_directories(out, ec);
    if (ec) throw gm::IoError("cannot create output directory " + out.string() + ": " + ec.message());
}

Eigen::VectorXd state_or_zero(Config& cfg, const std::string& key, Eigen::Index dim)
{
    Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
    if (const json* v = cfg.raw(key)) x = gm::io::vector_from_json(*v, key);
    if (x.size() != dim) throw UsageError("'" + key + "' must have length " + std::to_string(dim));
    cfg.set(key, gm::io::vector_to_json(x));
    return x;
}

std::vector<double> positive_list(Config& cfg, const std::string& key, std::vector<double> fallback)
{
    auto v = cfg.get<std::vector<double>>(key, std::move(fallback));
    if (v.empty()) throw UsageError("'" + key + "' must not be empty");
    for (double x : v)
        if (!(x > 0.0) || !std::isfinite(x)) throw UsageError("'" + key + "' entries must be positive");
    return v;
}

// --- kernel ---------------------------------------------------------------

int cmd_kernel(Config& cfg, RunContext& ctx)
{
    const auto model = cfg.model();
    const auto n = model.dim();
    std::vector<double> times;
    if (cfg.raw("times")) {
        times = cfg.get<std::vector<double>>("times", {});
        if (times.empty()) throw UsageError("'times' must not be empty");
    } else {
        const double delta = cfg.get("delta", 1e-3);
        const int count = cfg.get("n_times", 10);
        if (!(delta > 0.0) || count < 1) throw UsageError("'delta' must be positive and 'n_times' >= 1");
        for (int k = 1; k <= count; ++k) times.push_back(delta * k);
        cfg.set("times", gm::io::vector_to_json(times));
    }
    const auto extra = cfg.get<long>("extra_probes", 2);
    if (extra < 0) throw UsageError("'extra_probes' must be >= 0");
    Eigen::MatrixXd probes;
    if (const json* p = cfg.raw("probes")) {
        probes = gm::io::matrix_from_json(*p, static_cast<Eigen::Index>(p->size()), n, "probes").transpose();
    } else {
        probes = gm::default_probes<double>(n, ctx.seed, extra);
    }
    cfg.set("probes", gm::io::matrix_to_json(probes.transpose()));

    gm::TransitionKernel<double> kernel(model);
    const auto samples = gm::sample_kernel_family(kernel, times, probes);
    ctx.write("kernel_samples.json", gm::io::dump(gm::io::samples_to_json(samples)));

    std::vector<gm::ChapmanKolmogorovReport<double>> ck;
    for (std::size_t i = 0; i < times.size(); ++i)
        for (std::size_t j = i; j < times.size(); ++j)
            for (Eigen::Index p = 0; p < probes.cols(); ++p)
                ck.push_back(gm::verify_chapman_kolmogorov<double>(model, times[i], times[j],
                                                                   Eigen::VectorXd(probes.col(p)), ctx.tol));
    const json report = gm::io::chapman_kolmogorov_to_json(ck, ctx.tol);
    ctx.write("chapman_kolmogorov.json", gm::io::dump(report));
    return report["pass"].get<bool>() ? kExitPass : kExitFail;
}

// --- identify -------------------------------------------------------------

int cmd_identify(Config& cfg, RunContext& ctx)
{
    const json* src = cfg.raw("samples");
    if (!src || !src->is_string()) throw UsageError("config needs 'samples': path to a kernel samples file");
    const fs::path path = cfg.resolve_path(src->get<std::string>());
    cfg.set("samples", path.string());
    const auto samples = gm::io::samples_from_json(gm::io::read_json_file(path));

    const auto result = gm::identify(samples, ctx.tol);
    ctx.write("identified_model.json", gm::io::dump(gm::io::identified_to_json(result)));
    ctx.write("model.json", gm::io::dump(gm::io::model_to_json(result.model())));
    if (!result.gauss_markov_consistent) {
        std::cerr << "gmk identify: samples are not Gauss–Markov consistent\n";
        return kExitFail;
    }
    if (!result.residuals_ok) {
        std::cerr << "gmk identify: re-simulation residuals exceed tolerance " << ctx.tol << "\n";
        return kExitFail;
    }
    return kExitPass;
}

// --- simulate / martingale ------------------------------------------------

gm::PathScheme scheme_from(Config& cfg)
{
    const auto s = cfg.get<std::string>("scheme", "exact");
    if (s == "exact") return gm::PathScheme::exact;
    if (s == "euler_maruyama") return gm::PathScheme::euler_maruyama;
    throw UsageError("'scheme' must be \"exact\" or \"euler_maruyama\"");
}

int cmd_simulate(Config& cfg, RunContext& ctx)
{
    const auto model = cfg.model();
    const auto x = state_or_zero(cfg, "x0", model.dim());
    const double horizon = cfg.get("horizon", 1.0);
    const long steps = cfg.get<long>("n_steps", 1000);
    const long n_paths = cfg.get<long>("n_paths", 10);
    const auto scheme = scheme_from(cfg);
    if (!(horizon > 0.0) || steps < 1 || n_paths < 1)
        throw UsageError("'horizon' must be positive, 'n_steps' and 'n_paths' >= 1");

    std::vector<gm::SamplePath<double>> paths;
    if (scheme == gm::PathScheme::exact) {
        const gm::ExactStepper<double> stepper(model, horizon / static_cast<double>(steps));
        for (long i = 0; i < n_paths; ++i)
            paths.push_back(gm::simulate_path(stepper, x, horizon, steps, ctx.seed, static_cast<std::uint64_t>(i)));
    } else {
        for (long i = 0; i < n_paths; ++i)
            paths.push_back(gm::euler_maruyama_path(model, x, horizon, steps, ctx.seed, static_cast<std::uint64_t>(i)));
    }
    std::ostringstream csv;
    gm::io::write_paths_csv(csv, paths);
    ctx.write("paths.csv", csv.str());
    return kExitPass;
}

int cmd_martingale(Config& cfg, RunContext& ctx)
{
    const auto model = cfg.model();
    const auto n = model.dim();
    const auto x = state_or_zero(cfg, "x0", n);
    const double horizon = cfg.get("horizon", 1.0);
    const long steps = cfg.get<long>("n_steps", 1000);
    const long n_paths = cfg.get<long>("n_paths", 10000);
    const auto scheme = scheme_from(cfg);
    if (!(horizon > 0.0) || steps < 1 || n_paths < 2)
        throw UsageError("'horizon' must be positive, 'n_steps' >= 1, 'n_paths' >= 2");
    Eigen::MatrixXd directions = Eigen::MatrixXd::Identity(n, n);
    if (const json* h = cfg.raw("directions"))
        directions = gm::io::matrix_from_json(*h, static_cast<Eigen::Index>(h->size()), n, "directions").transpose();
    cfg.set("directions", gm::io::matrix_to_json(directions.transpose()));

    bool pass = true;
    for (Eigen::Index k = 0; k < directions.cols(); ++k) {
        const auto d = gm::martingale_monte_carlo<double>(model, x, horizon, steps, directions.col(k), ctx.seed,
                                                          static_cast<std::size_t>(n_paths), scheme);
        pass = pass && d.pass;
        ctx.write("martingale_" + std::to_string(k) + ".json", gm::io::dump(gm::io::martingale_to_json(d)));
    }
    return pass ? kExitPass : kExitFail;
}

// --- generator ------------------------------------------------------------

gm::CylindricalFunction<double> function_from(const json& spec, Eigen::Index dim)
{
    if (!spec.is_object() || !spec.contains("type")) throw UsageError("each function needs a 'type'");
    const auto type = spec["type"].get<std::string>();
    if (type == "constant") return gm::constant_function<double>(dim, spec.value("c", 1.0));
    if (!spec.contains("directions")) throw UsageError("function '" + type + "' needs 'directions'");
    const auto& dj = spec["directions"];
    const Eigen::MatrixXd h =
        gm::io::matrix_from_json(dj, static_cast<Eigen::Index>(dj.size()), dim, "directions").transpose();
    const Eigen::Index k = h.cols();
    auto vec = [&](const char* key, double fill) {
        if (!spec.contains(key)) return Eigen::VectorXd::Constant(k, fill).eval();
        auto v = gm::io::vector_from_json(spec[key], key);
        if (v.size() != k) throw UsageError(std::string("'") + key + "' must have one entry per direction");
        return v;
    };
    if (type == "sine") return gm::sine_function<double>(h, vec("w", 1.0), spec.value("phase", 0.0), spec.value("amp", 1.0));
    if (type == "cosine") return gm::cosine_function<double>(h, vec("w", 1.0), spec.value("amp", 1.0));
    if (type == "gaussian_bump") return gm::gaussian_bump<double>(h, vec("centre", 0.0), spec.value("width", 1.0));
    if (type == "bump_polynomial")
        return gm::bump_polynomial<double>(h, spec.value("radius", 4.0), spec.value("c0", 1.0), vec("c", 0.0),
                                           spec.value("q", 0.0));
    throw UsageError("unknown function type '" + type + "'");
}

json default_functions(Eigen::Index dim)
{
    auto row = [dim](Eigen::Index i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < dim; ++j) r.push_back(j == i ? 1.0 : 0.0);
        return r;
    };
    json fs = json::array();
    fs.push_back({{"type", "sine"}, {"directions", json::array({row(0)})}, {"w", {1.0}}});
    fs.push_back({{"type", "gaussian_bump"}, {"directions", json::array({row(0)})}, {"centre", {1.0}}, {"width", 2.0}});
    if (dim >= 2)
        fs.push_back({{"type", "cosine"}, {"directions", json::array({row(0), row(1)})}, {"w", {0.7, -0.4}}});
    return fs;
}

int cmd_generator(Config& cfg, RunContext& ctx)
{
    const auto model = cfg.model();
    const auto n = model.dim();
    const auto x = state_or_zero(cfg, "x", n);
    const auto deltas = positive_list(cfg, "deltas", {0.1, 0.05, 0.025});
    const double shifted_lambda = cfg.get("alternate_lambda", model.lambda() + 1.0);
    json specs = cfg.raw("functions") ? *cfg.raw("functions") : default_functions(n);
    if (!specs.is_array() || specs.empty()) throw UsageError("'functions' must be a nonempty array");
    cfg.set("functions", specs);

    const auto other = model.with_lambda(shifted_lambda);
    json reports = json::array();
    bool pass = true;
    double lambda_gap = 0.0;
    for (const auto& spec : specs) {
        const auto phi = function_from(spec, n);
        const auto r = gm::generator_check(model, phi, x, deltas);
        pass = pass && r.pass;
        const double gap = std::abs(gm::apply_generator(other, phi, x) - r.generator_value);
        lambda_gap = std::max(lambda_gap, gap);
        auto j = gm::io::generator_report_to_json(r);
        j["lambda_gap"] = gap;
        reports.push_back(std::move(j));
    }
    json out;
    out["reports"] = std::move(reports);
    out["lambda_independence_gap"] = lambda_gap;
    const bool lambda_ok = lambda_gap <= ctx.tol;
    out["pass"] = pass && lambda_ok;
    ctx.write("generator_check.json", gm::io::dump(out));
    return pass && lambda_ok ? kExitPass : kExitFail;
}

// --- boundary -------------------------------------------------------------

int cmd_boundary(Config& cfg, RunContext& ctx)
{
    gm::HalfLineGridOptions go;
    go.xi_max = cfg.get("xi_max", go.xi_max);
    go.alpha = cfg.get("alpha", go.alpha);
    go.panel_width = cfg.get("panel_width", go.panel_width);
    go.geometric_panels = cfg.get("geometric_panels", go.geometric_panels);
    const double t = cfg.get("t", 1.0);
    const long steps = cfg.get<long>("n_time_steps", 1000);
    const long replicas = cfg.get<long>("replicas", 10);
    const bool noise = cfg.get("noise", true);
    const auto points = positive_list(cfg, "covariance_points", {0.25, 0.5, 1.0, 2.0, 4.0});
    const int modes = cfg.get("galerkin_modes", 4);
    const double lambda = cfg.get("lambda", 1.0);
    const double gap_tol = cfg.get("galerkin_tol", 0.05);
    if (!(t > 0.0) || steps < 1 || replicas < 1 || modes < 0 || !(lambda > 0.0))
        throw UsageError("boundary: need t > 0, n_time_steps >= 1, replicas >= 1, galerkin_modes >= 0, lambda > 0");

    const auto grid = gm::make_half_line_grid<double>(go);
    // initial profile amp * exp(-(xi - centre)^2 / (2 width^2)); amp 0 by default
    const double amp = cfg.get("x_amplitude", 0.0);
    const double centre = cfg.get("x_centre", 2.0);
    const double width = cfg.get("x_width", 0.5);
    if (!(width > 0.0)) throw UsageError("'x_width' must be positive");
    const Eigen::VectorXd x =
        grid.nodes.unaryExpr([&](double xi) { return amp * std::exp(-(xi - centre) * (xi - centre) / (2 * width * width)); });
    const Eigen::VectorXd det = gm::deterministic_part(grid, t, x);

    std::vector<gm::BoundaryField<double>> fields;
    if (noise) {
        const gm::BoundarySimulator<double> sim(grid, t, steps);
        for (long r = 0; r < replicas; ++r) fields.push_back(sim.field(det, ctx.seed, static_cast<std::uint64_t>(r)));
    } else {
        for (long r = 0; r < replicas; ++r)
            fields.push_back({grid, t, det, ctx.seed, static_cast<std::uint64_t>(r)});
    }
    std::ostringstream field_csv;
    gm::io::write_field_csv(field_csv, fields);
    ctx.write("field.csv", field_csv.str());

    Eigen::MatrixXd q(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j < points.size(); ++j)
            q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = gm::covariance_q(t, points[i], points[j]);
    std::ostringstream cov_csv;
    gm::io::write_covariance_csv(cov_csv, t, points, q);
    ctx.write("covariance.csv", cov_csv.str());

    json report;
    report["t"] = t;
    report["nodes"] = grid.size();
    json norms = json::array();
    bool deterministic_ok = true;
    for (const auto& f : fields) {
        norms.push_back(gm::weighted_norm_sq(grid, f.values));
        if (!noise && f.values != det) deterministic_ok = false;
    }
    report["weighted_norm_sq"] = std::move(norms);
    report["expected_weighted_norm_sq_noise"] = gm::expected_weighted_norm_sq(grid, t);
    bool galerkin_ok = true;
    if (modes > 0) {
        const auto model = gm::galerkin_project(grid, modes, lambda);
        const Eigen::MatrixXd galerkin = gm::covariance(model, t);
        const Eigen::MatrixXd projected = gm::projected_q_covariance(grid, t, modes);
        json gaps = json::array();
        for (int k = 0; k < modes; ++k) {
            const double gap = std::abs(galerkin(k, k) - projected(k, k)) / std::abs(projected(k, k));
            gaps.push_back(gap);
            if (gap > gap_tol) galerkin_ok = false;
        }
        report["galerkin_model"] = gm::io::model_to_json(model);
        report["galerkin_covariance"] = gm::io::matrix_to_json(galerkin);
        report["projected_q_covariance"] = gm::io::matrix_to_json(projected);
        report["galerkin_relative_gap"] = std::move(gaps);
    }
    report["deterministic_ok"] = deterministic_ok;
    report["galerkin_ok"] = galerkin_ok;
    report["pass"] = deterministic_ok && galerkin_ok;
    ctx.write("boundary_report.json", gm::io::dump(report));
    return deterministic_ok && galerkin_ok ? kExitPass : kExitFail;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Gauss-Markov kernels: forward maps, identification, simulation and diagnostics"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> tol;

    using Handler = std::function<int(Config&, RunContext&)>;
    const std::vector<std::tuple<std::string, std::string, Handler, double>> commands = {
        {"kernel", "Tabulate m(t, x), Q(t) as kernel samples and check Chapman-Kolmogorov", cmd_kernel, 1e-9},
        {"identify", "Recover (A, b_V, Q_diff) from kernel samples", cmd_identify, 1e-4},
        {"simulate", "Dump sample paths as CSV", cmd_simulate, 0.0},
        {"martingale", "Monte Carlo martingale diagnostics", cmd_martingale, 0.0},
        {"generator", "Difference quotients of the semigroup against the generator", cmd_generator, 1e-12},
        {"boundary", "Heat equation with white-noise boundary data", cmd_boundary, 0.0},
    };
    std::map<CLI::App*, std::size_t> index;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        auto* sub = app.add_subcommand(std::get<0>(commands[i]), std::get<1>(commands[i]));
        sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "Output directory (must be new or empty)")->required();
        sub->add_option("--seed", seed, "Master seed (overrides config)");
        sub->add_option("--tol", tol, "Tolerance (overrides config)");
        index[sub] = i;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    const auto* sub = app.get_subcommands().front();
    const auto& [name, desc, handler, default_tol] = commands[index.at(const_cast<CLI::App*>(sub))];
    try {
        json in = json::object();
        fs::path base = fs::current_path();
        if (!config_path.empty()) {
            in = gm::io::read_json_file(config_path);
            base = fs::absolute(config_path).parent_path();
        }
        Config cfg(in, base);
        RunContext ctx;
        ctx.command = name;
        ctx.out = out_dir;
        ctx.seed = seed ? *seed : cfg.get<std::uint64_t>("seed", 0);
        ctx.tol = tol ? *tol : cfg.get("tol", default_tol);
        cfg.set("seed", ctx.seed);
        cfg.set("tol", ctx.tol);
        prepare_out_dir(ctx.out);

        const int code = handler(cfg, ctx);

        json manifest;
        manifest["command"] = name;
        manifest["config"] = cfg.resolved();
        manifest["outputs"] = ctx.outputs;
        manifest["exit_code"] = code;
        manifest["generated_at"] = utc_timestamp();
        gm::io::write_text_file(ctx.out / "manifest.json", gm::io::dump(manifest));
        return code;
    } catch (const UsageError& e) {
        std::cerr << "gmk " << name << ": " << e.what() << "\n";
    } catch (const gm::Error& e) {
        std::cerr << "gmk " << name << ": " << e.what() << "\n";
    } catch (const json::exception& e) {
        std::cerr << "gmk " << name << ": malformed config: " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "gmk " << name << ": " << e.what() << "\n";
    }
    return kExitUsage;
}
