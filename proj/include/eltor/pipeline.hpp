#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eltor/io.hpp"

namespace eltor {

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"melnikov", "resonances", "normalform", "periods", "orbits", "verify"};
  return s;
}

// Every numeric default of the batch pipeline lives here and is echoed into each artifact.
struct PipelineConfig {
  std::filesystem::path input;
  std::filesystem::path out = "eltor_out";
  std::vector<double> eta{0.1};
  std::optional<double> t0;  // start of the period search; 1/eta^2 when unset
  double budget = 1e5;       // ergodization-time budget for the lemma (a) search
  int degree_cap = 6;
  int fourier_cap = 8;
  int melnikov_cutoff = 8;
  std::string period_method = "auto";  // auto | a | b
  int grid_per_dim = 16;
  int grid_order = 24;
  double radians_per_panel = 8.0;
  double tol_divisor = 1e-10;      // floor on small divisors
  double tol_eliminated = 1e-10;   // eliminated-class residual after averaging
  double tol_contraction = 1e-14;  // relative stop of the fixed-point iteration
  double tol_closure = 1e-10;      // |I(T) - I(0)| after critical-point refinement
  double tol_verify = 1e-7;        // closure of the reintegrated orbit
  double tol_energy = 1e-9;        // allowed energy drift per unit time
  std::string integrator = "rk8";
  double points_per_period = 100;
  int trajectory_rows = 2000;
  int threads = 1;
  std::uint64_t seed = 1;
  std::vector<std::string> stages = pipeline_stages();

  json to_json() const;
  // Fields present in j override the corresponding fields of base.
  static PipelineConfig from_json(const json& j, PipelineConfig base);
  static PipelineConfig from_json(const json& j);
  void validate() const;
  bool has_stage(const std::string& s) const;
};

struct PipelineOutcome {
  int exit_code = 0;
  std::string failed_stage;
  std::string message;
  std::vector<std::filesystem::path> artifacts;
};

// Runs the selected stages in order, writing the artifact tree under cfg.out. Failures are caught,
// recorded in diagnostic.json and reported through the exit code.
PipelineOutcome run_pipeline(const PipelineConfig& cfg, std::ostream* log = nullptr);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace eltor
