#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "eltor/resonance.hpp"
#include "eltor/tfseries.hpp"

namespace eltor {

using json = nlohmann::json;

json series_to_json(const TFSeries& f);
TFSeries series_from_json(const json& j);

// A Hamiltonian input file: the series plus Diophantine constants and optional declared relations.
struct Model {
  std::string name;
  TFSeries H;
  FrequencyData freq;
  std::vector<DeclaredRelation> relations;
  json extra;  // unrecognised top-level keys, kept for provenance
};

// Validates the quadratic part (must be exactly omega.I + Omega z zbar), rejects linear terms and
// checks reality; omega and Omega are read off the quadratic part.
FrequencyData extract_frequencies(const TFSeries& H, double gamma, double tau);

Model model_from_json(const json& j, const std::string& name = "");
Model load_model(const std::filesystem::path& path);
json model_to_json(const Model& m);

json matrix_to_json(const Eigen::MatrixXd& A);
Eigen::MatrixXd matrix_from_json(const json& j);
json vector_to_json(const Eigen::VectorXd& v);
json vector_to_json(const Eigen::VectorXi& v);

// Stable formatting used for every artifact so that dump(parse(dump(x))) == dump(x).
std::string dump_artifact(const json& j);
void write_artifact(const std::filesystem::path& p, const json& j);
json read_json(const std::filesystem::path& p);

}  // namespace eltor
