#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace eltor {

struct FrequencyData {
  Eigen::VectorXd omega;  // torus frequencies, size n
  Eigen::VectorXd Omega;  // elliptic frequencies, size m
  double gamma = 1e-3;
  double tau = 2.0;

  int n() const { return static_cast<int>(omega.size()); }
  int m() const { return static_cast<int>(Omega.size()); }
};

// Wrap to [-1/2, 1/2).
inline double wrap_half(double y) { return y - std::floor(y + 0.5); }
template <class Derived>
Eigen::VectorXd wrap_half(const Eigen::MatrixBase<Derived>& v) {
  return v.unaryExpr([](double y) { return wrap_half(y); });
}
inline double dist_to_integers(double y) { return std::abs(wrap_half(y)); }

// ---------------------------------------------------------------------------------------------

struct MelnikovReport {
  double min_margin = std::numeric_limits<double>::infinity();
  Eigen::VectorXi worst_ell;
  Eigen::VectorXi worst_h;
  int cutoff = 0;
  std::size_t pairs_checked = 0;
  bool passes() const { return min_margin >= 1.0; }
};

MelnikovReport melnikov_check(const FrequencyData& freq, int ell_cutoff);

// Number of k in {0..M-1}^n with a.k = b (mod M). Refuses when gcd(a, M) > 1.
std::uint64_t count_congruence_solutions(std::span<const long long> a, long long M, long long b);

// ---------------------------------------------------------------------------------------------

struct Relation {
  int M = 1;
  Eigen::VectorXi a;  // over omega_hat
};

struct ResonanceStructure {
  int n = 0, m = 0;
  int m_hat = 0;
  // reorder[q] is the original elliptic index placed at slot q; the first m_hat are resonant.
  std::vector<int> reorder;
  std::vector<Relation> relations;
  bool declared = false;  // relations came from the input file
  double max_residual = 0;

  int n_hat() const { return n + m - m_hat; }
  int lcm_M() const;
  int max_M() const;
  int max_a_l1() const;
  Eigen::VectorXd omega_hat(const FrequencyData& f) const;
  Eigen::VectorXd Omega_reordered(const FrequencyData& f) const;
};

struct DeclaredRelation {
  int j = 0;  // 1-based original elliptic index
  int M = 1;
  std::vector<int> a;
};

struct DetectOptions {
  int M_max = 12;
  int a_max = 10;
  double tol = 1e-9;
};

ResonanceStructure detect_resonances(const FrequencyData& freq, const DetectOptions& opt = {});
ResonanceStructure certify_declared(const FrequencyData& freq, const std::vector<DeclaredRelation>& rel,
                                    double tol);

// Smallest (lexicographic, first index slowest) k in {0..M-1}^n_hat \ {0} with a_j.k/M_j not integer.
Eigen::VectorXi nonresonant_lattice_point(const ResonanceStructure& rs);

struct ShiftResult {
  double tau = 0;
  double beta = 0;
  double d0 = 0;
  int M = 1;
  std::size_t steps = 0;
  Eigen::VectorXd target;
  double omega_dist = 0;    // max_i dist(omega_i tau, Z)
  double Omega_margin = 0;  // min_j dist(Omega_j tau, Z)
};

ShiftResult nonresonant_shift(const FrequencyData& freq, const ResonanceStructure& rs, double delta, double t0,
                              double erg_budget, double start_offset = 0);

// ---------------------------------------------------------------------------------------------

enum class CertificateKind { LemmaA, LemmaB };

struct PeriodCertificate {
  double T = 0;
  CertificateKind kind = CertificateKind::LemmaA;
  double T_lo = 0, T_hi = 0;
  double d_bound = 0;     // guaranteed min_j dist(Omega_eta_j T, 2 pi Z)
  double minv_bound = 0;  // certified |M^{-1}| bound
  double measured_dist = 0;
  // constants echoed into artifacts
  double beta = 0, d0 = 0, delta = 0, Theta = 0, d1 = 0, alpha = 0, theta = 0, tau_shift = 0;
  std::vector<double> skipped;  // earlier admissible candidates rejected by re-verification
};

// 2 pi (Omega T/2pi - Q R^{-1} <omega T/2pi>); independent of eta.
Eigen::VectorXd shifted_phase(const FrequencyData& freq, const Eigen::MatrixXd& R, const Eigen::MatrixXd& Q,
                              double T);
// min_j dist(Omega_eta_j T, 2 pi Z)
double shifted_phase_margin(const FrequencyData& freq, const Eigen::MatrixXd& R, const Eigen::MatrixXd& Q,
                            double T);

struct LemmaAOptions {
  double budget = 1e5;
  int max_retries = 64;
};

PeriodCertificate select_period_lemma_a(const FrequencyData& freq, const ResonanceStructure& rs,
                                        const Eigen::MatrixXd& R, const Eigen::MatrixXd& Q, double t0,
                                        const LemmaAOptions& opt = {});

PeriodCertificate select_period_lemma_b(const FrequencyData& freq, const Eigen::MatrixXd& R,
                                        const Eigen::MatrixXd& Q, double t0, int scan_points = 200000);

// Checks condition (a): m <= 2, or m_hat = 0, or M_j >= m_hat >= 1 for all j. Empty when satisfied.
std::optional<std::string> condition_a_violation(const ResonanceStructure& rs);

// ---------------------------------------------------------------------------------------------

struct EpsilonWindow {
  double eps_lo = 0, eps_hi = 0;
  bool empty() const { return eps_lo > eps_hi; }
};

double G_eps(double eps);           // eps log^2(1/eps)
double G_inverse(double x);         // inverse of G on (0, e^-2], clamped at e^-2
EpsilonWindow epsilon_window(double T, double c1, double c2, double c3, double eps1);
// Last T in (0, T_max] where eps_lo = eps_hi; nullopt if no crossing is bracketed.
std::optional<double> window_threshold(double c1, double c2, double c3, double eps1, double T_max = 1e6);

}  // namespace eltor
