#pragma once

// JSON and CSV serialization for double-precision models, kernel tables and
// reports. Numbers are written in shortest round-trip form so that equal
// values always produce equal bytes.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gaussmarkov/boundary.hpp"
#include "gaussmarkov/generator.hpp"
#include "gaussmarkov/identify.hpp"
#include "gaussmarkov/semigroup.hpp"
#include "gaussmarkov/simulate.hpp"

namespace gm::io {

using json = nlohmann::ordered_json;

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

json matrix_to_json(const Eigen::MatrixXd& m);  ///< nested rows
json vector_to_json(const Eigen::VectorXd& v);
json vector_to_json(const std::vector<double>& v);

/// Accepts nested rows or a flat row-major array of rows*cols entries.
Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what);
Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what);  ///< nested rows, any shape
Eigen::VectorXd vector_from_json(const json& j, const std::string& what);

json model_to_json(const GeneratorModel<double>& model);
GeneratorModel<double> model_from_json(const json& j);

json samples_to_json(const KernelSamples<double>& s);
KernelSamples<double> samples_from_json(const json& j);

json identified_to_json(const IdentifiedModel<double>& m);
json martingale_to_json(const MartingaleDiagnostic<double>& d);
json generator_report_to_json(const GeneratorCheckReport<double>& r);
json chapman_kolmogorov_to_json(const std::vector<ChapmanKolmogorovReport<double>>& reports, double tol);

json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
/// Two-space indented dump with a trailing newline.
std::string dump(const json& j);

/// `path_id,t,z_0,...,z_{N-1}`; path_id is the stream index.
void write_paths_csv(std::ostream& os, std::span<const SamplePath<double>> paths);
/// `replica,t,xi,u`
void write_field_csv(std::ostream& os, std::span<const BoundaryField<double>> fields);
/// `t,xi,eta,q` for every (i, j) pair of `points`.
void write_covariance_csv(std::ostream& os, double t, const std::vector<double>& points, const Eigen::MatrixXd& q);

}  // namespace gm::io
