#include "gaussmarkov/io.hpp"

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

namespace gm::io {

std::string format_double(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

json matrix_to_json(const Eigen::MatrixXd& m)
{
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_to_json(const Eigen::VectorXd& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

json vector_to_json(const std::vector<double>& v)
{
    json a = json::array();
    for (double x : v) a.push_back(x);
    return a;
}

namespace {

double number(const json& j, const std::string& what)
{
    if (!j.is_number()) throw ValidationError(what + ": expected a number");
    return j.get<double>();
}

const json& field(const json& j, const char* key, const std::string& what)
{
    if (!j.is_object()) throw ValidationError(what + ": expected a JSON object");
    auto it = j.find(key);
    if (it == j.end()) throw ValidationError(what + ": missing field '" + key + "'");
    return *it;
}

}  // namespace

Eigen::VectorXd vector_from_json(const json& j, const std::string& what)
{
    if (!j.is_array()) throw ValidationError(what + ": expected an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], what);
    return v;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what)
{
    if (!j.is_array()) throw ValidationError(what + ": expected an array");
    Eigen::MatrixXd m(rows, cols);
    const bool nested = !j.empty() && j.front().is_array();
    if (nested) {
        if (static_cast<Eigen::Index>(j.size()) != rows) throw ValidationError(what + ": wrong number of rows");
        for (Eigen::Index i = 0; i < rows; ++i) {
            const auto& row = j[static_cast<std::size_t>(i)];
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
                throw ValidationError(what + ": wrong row length");
            for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = number(row[static_cast<std::size_t>(k)], what);
        }
    } else {
        if (static_cast<Eigen::Index>(j.size()) != rows * cols) throw ValidationError(what + ": wrong entry count");
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index k = 0; k < cols; ++k)
                m(i, k) = number(j[static_cast<std::size_t>(i * cols + k)], what);
    }
    return m;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what)
{
    if (!j.is_array() || j.empty() || !j.front().is_array())
        throw ValidationError(what + ": expected a nonempty array of rows");
    return matrix_from_json(j, static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.front().size()), what);
}

json model_to_json(const GeneratorModel<double>& model)
{
    json j;
    j["dim"] = model.dim();
    j["A"] = matrix_to_json(model.A());
    j["b_V"] = vector_to_json(model.b_V());
    j["Q_diff"] = matrix_to_json(model.Q_diff());
    j["lambda"] = model.lambda();
    return j;
}

GeneratorModel<double> model_from_json(const json& j)
{
    const std::string what = "model";
    const auto& d = field(j, "dim", what);
    if (!d.is_number_integer() || d.get<long long>() <= 0) throw ValidationError("model: dim must be a positive integer");
    const auto n = static_cast<Eigen::Index>(d.get<long long>());
    Eigen::MatrixXd a = matrix_from_json(field(j, "A", what), n, n, "model.A");
    Eigen::VectorXd b = vector_from_json(field(j, "b_V", what), "model.b_V");
    if (b.size() != n) throw ValidationError("model.b_V: wrong length");
    Eigen::MatrixXd q = matrix_from_json(field(j, "Q_diff", what), n, n, "model.Q_diff");
    if (j.contains("lambda") && !j["lambda"].is_null())
        return GeneratorModel<double>(std::move(a), std::move(b), q, number(j["lambda"], "model.lambda"));
    return GeneratorModel<double>(std::move(a), std::move(b), q);
}

json samples_to_json(const KernelSamples<double>& s)
{
    json j;
    j["dim"] = s.dim;
    j["times"] = vector_to_json(s.times);
    j["probes"] = matrix_to_json(s.probes.transpose());
    json means = json::array();
    for (const auto& row : s.means) {
        json r = json::array();
        for (const auto& m : row) r.push_back(vector_to_json(m));
        means.push_back(std::move(r));
    }
    j["means"] = std::move(means);
    json covs = json::array();
    for (const auto& c : s.covs) covs.push_back(matrix_to_json(c));
    j["covs"] = std::move(covs);
    if (s.probe_covs) {
        json pc = json::array();
        for (const auto& row : *s.probe_covs) {
            json r = json::array();
            for (const auto& c : row) r.push_back(matrix_to_json(c));
            pc.push_back(std::move(r));
        }
        j["probe_covs"] = std::move(pc);
    }
    return j;
}

KernelSamples<double> samples_from_json(const json& j)
{
    const std::string what = "kernel samples";
    KernelSamples<double> s;
    const auto& d = field(j, "dim", what);
    if (!d.is_number_integer() || d.get<long long>() <= 0)
        throw ValidationError("kernel samples: dim must be a positive integer");
    s.dim = static_cast<Eigen::Index>(d.get<long long>());
    const Eigen::VectorXd times = vector_from_json(field(j, "times", what), "times");
    s.times.assign(times.data(), times.data() + times.size());
    const auto& probes = field(j, "probes", what);
    if (!probes.is_array() || probes.empty()) throw ValidationError("probes: expected a nonempty array");
    s.probes = matrix_from_json(probes, static_cast<Eigen::Index>(probes.size()), s.dim, "probes").transpose();
    const auto& means = field(j, "means", what);
    if (!means.is_array()) throw ValidationError("means: expected an array");
    for (const auto& row : means) {
        if (!row.is_array()) throw ValidationError("means: expected an array per time");
        std::vector<Eigen::VectorXd> r;
        for (const auto& m : row) r.push_back(vector_from_json(m, "means"));
        s.means.push_back(std::move(r));
    }
    const auto& covs = field(j, "covs", what);
    if (!covs.is_array()) throw ValidationError("covs: expected an array");
    for (const auto& c : covs) s.covs.push_back(matrix_from_json(c, s.dim, s.dim, "covs"));
    if (j.contains("probe_covs")) {
        std::vector<std::vector<Eigen::MatrixXd>> pc;
        for (const auto& row : j["probe_covs"]) {
            std::vector<Eigen::MatrixXd> r;
            for (const auto& c : row) r.push_back(matrix_from_json(c, s.dim, s.dim, "probe_covs"));
            pc.push_back(std::move(r));
        }
        s.probe_covs = std::move(pc);
    }
    s.validate();
    return s;
}

json identified_to_json(const IdentifiedModel<double>& m)
{
    json j;
    j["model"] = model_to_json(m.model());
    j["gauss_markov_consistent"] = m.gauss_markov_consistent;
    j["residuals_ok"] = m.residuals_ok;
    const auto& dg = m.diagnostics;
    json d;
    json ls = json::array();
    for (const auto& e : m.L_hat) {
        json le;
        le["t"] = e.time;
        le["L"] = matrix_to_json(e.L);
        le["fit_residual"] = e.residual;
        ls.push_back(std::move(le));
    }
    d["L_hat"] = std::move(ls);
    d["affine_checked_probes"] = dg.affine.checked_probes;
    d["affine_insufficient_probes"] = dg.affine.insufficient_probes;
    d["affine_residual"] = vector_to_json(dg.affine.residual_per_time);
    d["affine_max_residual"] = dg.affine.max_residual;
    d["covariance_x_dependence"] = dg.covariance_x_dependence;
    d["mean_residual"] = vector_to_json(dg.mean_residual);
    d["cov_residual"] = vector_to_json(dg.cov_residual);
    d["max_mean_residual"] = dg.max_mean_residual;
    d["max_cov_residual"] = dg.max_cov_residual;
    d["semigroup_residual"] = dg.semigroup_residual;
    d["b_ratio_delta"] = vector_to_json(dg.b_ratio_delta);
    d["b_ratio_2delta"] = vector_to_json(dg.b_ratio_2delta);
    d["growth_C"] = dg.growth.C;
    d["growth_lambda0"] = dg.growth.lambda0;
    j["diagnostics"] = std::move(d);
    return j;
}

json martingale_to_json(const MartingaleDiagnostic<double>& d)
{
    json j;
    j["h"] = vector_to_json(d.h);
    j["times"] = vector_to_json(d.times);
    j["mean"] = vector_to_json(d.mean);
    j["var"] = vector_to_json(d.var);
    j["theory_var"] = vector_to_json(d.theory_var);
    j["pass"] = d.pass;
    j["paths"] = d.paths;
    j["mean_se"] = vector_to_json(d.mean_se);
    j["theory_slope"] = d.theory_slope;
    j["fitted_slope"] = d.fitted_slope;
    j["checkpoint_times"] = vector_to_json(d.checkpoint_times);
    j["increment_correlation"] = vector_to_json(d.increment_correlation);
    j["correlation_se"] = d.correlation_se;
    j["mean_ok"] = d.mean_ok;
    j["slope_ok"] = d.slope_ok;
    j["increments_ok"] = d.increments_ok;
    return j;
}

json generator_report_to_json(const GeneratorCheckReport<double>& r)
{
    json j;
    j["phi_id"] = r.phi_id;
    j["x"] = vector_to_json(r.x);
    j["deltas"] = vector_to_json(r.deltas);
    j["residuals"] = vector_to_json(r.residuals);
    j["orders"] = vector_to_json(r.orders);
    j["pass"] = r.pass;
    j["generator_value"] = r.generator_value;
    return j;
}

json chapman_kolmogorov_to_json(const std::vector<ChapmanKolmogorovReport<double>>& reports, double tol)
{
    json j;
    j["tol"] = tol;
    bool pass = true;
    json checks = json::array();
    for (const auto& r : reports) {
        json c;
        c["s"] = r.s;
        c["t"] = r.t;
        c["mean_residual"] = r.mean_residual;
        c["cov_residual"] = r.cov_residual;
        c["pass"] = r.pass;
        pass = pass && r.pass;
        checks.push_back(std::move(c));
    }
    j["checks"] = std::move(checks);
    j["pass"] = pass;
    return j;
}

json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("cannot parse " + path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::string dump(const json& j)
{
    return j.dump(2) + "\n";
}

void write_paths_csv(std::ostream& os, std::span<const SamplePath<double>> paths)
{
    const Eigen::Index n = paths.empty() ? 0 : paths.front().states.rows();
    os << "path_id,t";
    for (Eigen::Index i = 0; i < n; ++i) os << ",z_" << i;
    os << '\n';
    for (const auto& p : paths) {
        for (std::size_t k = 0; k < p.times.size(); ++k) {
            os << p.stream << ',' << format_double(p.times[k]);
            for (Eigen::Index i = 0; i < n; ++i) os << ',' << format_double(p.states(i, static_cast<Eigen::Index>(k)));
            os << '\n';
        }
    }
}

void write_field_csv(std::ostream& os, std::span<const BoundaryField<double>> fields)
{
    os << "replica,t,xi,u\n";
    for (const auto& f : fields)
        for (Eigen::Index j = 0; j < f.values.size(); ++j)
            os << f.replica << ',' << format_double(f.time) << ',' << format_double(f.grid.nodes(j)) << ','
               << format_double(f.values(j)) << '\n';
}

void write_covariance_csv(std::ostream& os, double t, const std::vector<double>& points, const Eigen::MatrixXd& q)
{
    os << "t,xi,eta,q\n";
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j < points.size(); ++j)
            os << format_double(t) << ',' << format_double(points[i]) << ',' << format_double(points[j]) << ','
               << format_double(q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
}

}  // namespace gm::io
