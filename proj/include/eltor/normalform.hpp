#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eltor/resonance.hpp"
#include "eltor/tfseries.hpp"

namespace eltor {

enum class ResonantClass { S1, S2_0, S2_1, S2_2, S3, None };
std::string to_string(ResonantClass c);

// Classification of a key of degree 3..5; None outside that range or off the resonant set.
ResonantClass resonant_set_member(const TermKey& key);
inline bool in_resonant_set(const TermKey& key) { return resonant_set_member(key) != ResonantClass::None; }

// Keys that averaging must remove through degree 5 (the ones carrying the I-z cross interactions
// and the non-resonant pure-action Fourier modes).
bool in_eliminated_class(const TermKey& key);

// Coefficient of eta^(d-2) in the rescaled series.
inline int eta_exponent(const TermKey& key) { return key.degree() - 2; }

struct DivisorPolicy {
  double gamma = 1e-3;
  double tau = 2.0;
  double floor = 1e-10;
  double bound(const TermKey& key) const {
    return std::max(gamma / (1.0 + std::pow(double(key.ell_norm1()), tau)), floor);
  }
};

// omega.ell + Omega.(a - abar)
double divisor(const TermKey& key, const FrequencyData& freq);

// Solves the homological equation on the degree-(d+2) part F: coefficient -i F/divisor off the
// resonant set, zero on it.
TFSeries build_generating_function(const TFSeries& F, const FrequencyData& freq, int d,
                                   const DivisorPolicy& policy);

// exp(L_chi) H = sum_j L_chi^j H / j! with L_chi g = {g, chi}, carried to the degree cap.
TFSeries lie_series(const TFSeries& H, const TFSeries& chi);

struct LieTransformResult {
  TFSeries polynomial;  // degrees <= j0 + 2
  TFSeries remainder;   // degrees > j0 + 2 kept below the cap
};
LieTransformResult lie_transform(const TFSeries& H, const std::vector<TFSeries>& chi, int j0);

Eigen::MatrixXd twist_from_slice(const TFSeries& H_avg);
Eigen::MatrixXd coupling_from_slice(const TFSeries& H_avg);

struct MatrixReport {
  Eigen::MatrixXd value;
  double asymmetry = 0;       // only meaningful for square matrices
  double imag_residual = 0;
  double tail_estimate = 0;   // geometric extrapolation of the truncated ell-sum
};
MatrixReport compute_twist_matrix(const TFSeries& H, const FrequencyData& freq, const DivisorPolicy& policy = {});
MatrixReport compute_coupling_matrix(const TFSeries& H, const FrequencyData& freq,
                                     const DivisorPolicy& policy = {});

struct NormalFormDiagnostics {
  double eliminated_residual = 0;
  double reality_violation = 0;
  double R_asymmetry = 0;
  double R_imag = 0, Q_imag = 0;
  double R_slice_vs_direct = 0, Q_slice_vs_direct = 0;
  double R_tail = 0, Q_tail = 0;
  double fourier_tail = 0;
  double min_divisor_ratio = 0;  // min |divisor| / policy bound over eliminated keys
  std::size_t truncation_loss = 0;
};

struct NormalFormResult {
  double eta = 0;              // value the caller intends to evaluate at; H_avg itself is unscaled
  TFSeries H_avg;              // exp(L_chi) H* graded by degree, through the degree cap
  std::vector<TFSeries> chi;   // chi1, chi2, chi3 (degrees 3, 4, 5)
  Eigen::MatrixXd R, Q;
  NormalFormDiagnostics diag;

  // H_avg with the eta^(d-2) weights substituted.
  TFSeries rescaled(double eta_value) const { return rescale(H_avg, eta_value); }
  TFSeries chi_total() const;
};

struct NormalFormOptions {
  DivisorPolicy divisor;
  double eliminated_tol = 1e-10;
  double cross_check_tol = 1e-10;
};

NormalFormResult averaged_normal_form(const TFSeries& H_star, const FrequencyData& freq, double eta,
                                      const NormalFormOptions& opt = {});

// Integrable skeleton omega.I + Omega z zbar + eta^2 (R I.I/2 + Q I.z zbar) at the given eta.
TFSeries integrable_skeleton(const NormalFormResult& nf, const FrequencyData& freq, double eta);

}  // namespace eltor
