#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eltor/dynamics.hpp"
#include "eltor/normalform.hpp"
#include "eltor/resonance.hpp"
#include "eltor/tfseries.hpp"

namespace eltor {

// ---------------------------------------------------------------------------------------------
// Resonant torus and period data

struct ResonantAction {
  Eigen::VectorXd I0;
  Eigen::VectorXi k;
  Eigen::VectorXd omega_tilde;
};

// I0 = -(2 pi / eta^2 T) R^{-1} <omega T / 2 pi>, k = omega T / 2 pi - <omega T / 2 pi>.
ResonantAction resonant_action(double T, double eta, const Eigen::MatrixXd& R, const Eigen::VectorXd& omega);

struct MonodromyGap {
  bool invertible = false;
  double minv_norm = 0;   // exact max_j 1/|1 - exp(i Omega_j T)|
  double stima_bound = 0; // 2 / min_j dist(Omega_j T, 2 pi Z)
  double min_dist = 0;
};
MonodromyGap monodromy_gap(const Eigen::VectorXd& Omega, double T, double floor = 1e-12);

// Linearisation data shared by the Theorem 1 construction and the continuation mode.
struct PeriodSetup {
  double T = 0;
  double eta = 0;     // bookkeeping scale of the corrections (I = I0 + eta J); 1 in continuation mode
  Eigen::VectorXi k_vec;
  Eigen::VectorXd I0, omega_tilde, Omega_eta;
  Eigen::MatrixXd M;  // eta^2 R, or the Hessian of h_eps in continuation mode
  double minv_bound = 0;

  int n() const { return static_cast<int>(I0.size()); }
  int m() const { return static_cast<int>(Omega_eta.size()); }
};

// Builds the setup for the averaged normal form at the given eta and T. Requires T >= 1/eta^2.
PeriodSetup make_period_setup(const NormalFormResult& nf, const FrequencyData& freq, double eta, double T,
                              double minv_bound = 0);

// ---------------------------------------------------------------------------------------------
// Time grid: composite Chebyshev-Lobatto panels with spectral integration and differentiation.

class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double T, int panels, int order = 24);
  // Panels short enough that the fastest frequency is resolved with ~order/(1.3) nodes per period.
  static TimeGrid for_frequency(double T, double max_frequency, int order = 24, double radians_per_panel = 8.0);

  double T() const { return T_; }
  int panels() const { return panels_; }
  int order() const { return p_; }
  int size() const { return static_cast<int>(t_.size()); }
  const Eigen::VectorXd& t() const { return t_; }

  // Row-wise cumulative integral from 0 of samples F (rows x size()).
  template <class Scalar>
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> cumulative(
      const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& F) const;
  // Row-wise derivative.
  template <class Scalar>
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> derivative(
      const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& F) const;
  // Row-wise barycentric interpolation at time s in [0, T].
  template <class Scalar>
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> interpolate(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& F,
                                                       double s) const;
  std::vector<double> midpoints() const;

 private:
  int panel_of(double s) const;
  double T_ = 0, h_ = 0;
  int panels_ = 0, p_ = 0;
  Eigen::VectorXd t_, x_, bw_;   // nodes, reference nodes on [-1,1], barycentric weights
  Eigen::MatrixXd S_, D_;        // reference integration and differentiation matrices
};

// ---------------------------------------------------------------------------------------------
// Correction fields (J, psi, w) sampled on the grid, and the Green operator.

struct Field {
  Eigen::MatrixXd J, psi;  // n x N
  Eigen::MatrixXcd w;      // m x N

  static Field zero(int n, int m, int N);
  double norm() const;  // max of the three sup norms (complex modulus for w)
  Field& operator+=(const Field& o);
  Field& operator-=(const Field& o);
  Field& operator*=(double s);
};
Field operator+(Field a, const Field& b);
Field operator-(Field a, const Field& b);
Field operator*(double s, Field a);

struct GreenBound {
  double rigorous = 0;  // max of the three componentwise bounds
  double displayed = 0; // C (|M^-1| + |M| T^2 + |M||M^-1| T + |Minv| T) with C = 3
  double C = 3;
};

class GreenOperator {
 public:
  GreenOperator(std::shared_ptr<const TimeGrid> grid, Eigen::MatrixXd M, Eigen::VectorXd Omega);
  Field apply(const Field& rhs) const;
  const TimeGrid& grid() const { return *grid_; }
  const GreenBound& bound() const { return bound_; }
  const Eigen::MatrixXd& M() const { return M_; }
  const Eigen::VectorXd& Omega() const { return Omega_; }

 private:
  std::shared_ptr<const TimeGrid> grid_;
  Eigen::MatrixXd M_, Minv_;
  Eigen::VectorXd Omega_;
  Eigen::VectorXcd beta_factor_;  // (1 - e^{i Omega T})^{-1} e^{i Omega T}
  GreenBound bound_;
};

GreenBound green_norm_bound(const Eigen::MatrixXd& M, const Eigen::VectorXd& Omega, double T);

// Residuals of the output of the Green operator against its defining boundary value problem.
struct GreenResidual {
  double psi_endpoints = 0;  // max |psi(0)|, |psi(T)|
  double w_periodicity = 0;  // max |w(T) - w(0)|
  double midpoint = 0;       // max residual of Jdot = Jhat, psidot - M J = psihat, wdot - i Omega w = what
};
GreenResidual green_residual(const GreenOperator& L, const Field& rhs, const Field& out);

// ---------------------------------------------------------------------------------------------
// Contraction

struct ContractionOptions {
  double stop_tol = 1e-14;      // relative to max(delta0, tiny)
  int max_iter = 200;
  int lipschitz_points = 10;
  int lipschitz_nodes = 200;
  double fd_step = 1e-6;
  double ratio_margin = 0.25;
  bool check_lipschitz = true;
  std::uint64_t seed = 1;
};

struct ContractionReport {
  int iterations = 0;
  double LP0 = 0;             // |L P(0)|
  double delta0 = 0;          // 2 |L P(0)|
  double lipschitz_measured = 0;
  double lipschitz_allowed = 0;
  double max_ratio = 0;
  double final_step = 0;
  double solution_norm = 0;
  bool restricted_to_w0 = false;  // contraction carried out on the invariant subspace w = 0
  std::vector<double> steps;
};

// Pointwise nonlinearity P(x)(t) = p(t, x(t)) on the grid.
class PointwiseMap {
 public:
  virtual ~PointwiseMap() = default;
  virtual int n() const = 0;
  virtual int m() const = 0;
  // Output at node q for local values (J, psi, w).
  virtual void eval_node(int q, const Eigen::VectorXd& J, const Eigen::VectorXd& psi, const Eigen::VectorXcd& w,
                         Eigen::VectorXd& PJ, Eigen::VectorXd& Ppsi, Eigen::VectorXcd& Pw) const = 0;
  // True when w = 0 is mapped to Pw = 0, so the subspace {w = 0} is invariant under L P and the
  // contraction can be carried out there.
  virtual bool elliptic_subspace_invariant() const { return false; }
  Field apply(const Field& x, int threads = 1) const;
  // Max row-sum norm of the local Jacobian at node q (finite differences, complex inputs split).
  double local_jacobian_norm(int q, const Eigen::VectorXd& J, const Eigen::VectorXd& psi,
                             const Eigen::VectorXcd& w, double h) const;
};

Field contraction_solve(const PointwiseMap& P, const GreenOperator& L, const ContractionOptions& opt,
                        ContractionReport* report = nullptr, const Field* warm_start = nullptr, int threads = 1);

// ---------------------------------------------------------------------------------------------
// Pseudo-periodic solutions and the reduced action

struct OrbitOptions {
  int grid_order = 24;
  double radians_per_panel = 8.0;
  ContractionOptions contraction;
  int threads = 1;
};

// Everything needed to solve for pseudo-periodic orbits at one (eta, T): the Hamiltonian at
// the given scale, its evaluators, the grid and the Green operator.
class OrbitProblem {
 public:
  OrbitProblem(TFSeries H, PeriodSetup setup, const OrbitOptions& opt = {});
  const PeriodSetup& setup() const { return setup_; }
  const TFSeries& hamiltonian() const { return H_; }
  const TimeGrid& grid() const { return *grid_; }
  const GreenOperator& green() const { return *green_; }
  const OrbitOptions& options() const { return opt_; }
  // Gradient of H at a state; layout as SeriesEvaluator.
  std::complex<double> eval(const Eigen::VectorXd& I, const Eigen::VectorXd& phi, const Eigen::VectorXcd& z,
                            Eigen::VectorXcd* grad) const;
  double max_frequency() const { return max_frequency_; }
  // No terms of z-degree 1, so z = 0 is invariant for the flow.
  bool elliptic_subspace_invariant() const { return z_invariant_; }

 private:
  TFSeries H_;
  PeriodSetup setup_;
  OrbitOptions opt_;
  SeriesEvaluator<double> full_, zfree_;  // zfree_ keeps only terms exact at z = 0
  std::shared_ptr<const TimeGrid> grid_;
  std::unique_ptr<GreenOperator> green_;
  double max_frequency_ = 0;
  bool z_invariant_ = false;
};

struct PseudoOrbit {
  Eigen::VectorXd phi0;
  Field x;
  Eigen::MatrixXd I, phi;  // n x N
  Eigen::MatrixXcd z;      // m x N
  double ode_residual = 0;
  double boundary_residual = 0;
  double action = 0;
  double action_imag = 0;
  Eigen::VectorXd gradient;  // I(T) - I(0)
  ContractionReport contraction;

  PhaseState state_at_node(int q) const;
};

PseudoOrbit pseudo_periodic(const Eigen::VectorXd& phi0, const OrbitProblem& prob, const Field* warm_start = nullptr,
                            bool compute_residual = false);
double reduced_action(const Eigen::VectorXd& phi0, const OrbitProblem& prob);
Eigen::VectorXd action_gradient(const Eigen::VectorXd& phi0, const OrbitProblem& prob);

// ---------------------------------------------------------------------------------------------
// Critical points on the quotient torus

// Integer basis of {v in Z^n : v.k = 0}, returned as the columns of an n x (n-1) matrix.
Eigen::MatrixXi quotient_lattice_basis(const Eigen::VectorXi& k);
long long gcd_of(const Eigen::VectorXi& k);

enum class CriticalKind { Min, Max, MinMaxGrid };
std::string to_string(CriticalKind k);

struct OrbitSolution {
  Eigen::VectorXd phi_star;
  CriticalKind kind = CriticalKind::Min;
  PseudoOrbit orbit;
  double action_value = 0;
  double closure_residual = 0;  // |I(T) - I(0)| of the pseudo orbit
  double min_period_lower_bound = 0;
  double min_period_asymptotic = 0;
  double min_period_self_distance = 0;  // min over q > g of |zeta(T/q) - zeta(0)|
  int refine_iterations = 0;
  bool degenerate_family = false;
};

struct CriticalSearchOptions {
  int grid_per_dim = 16;
  double closure_tol = 1e-10;
  int max_refine = 60;
  double distinct_tol = 1e-6;
};

struct CriticalSearchReport {
  std::vector<double> grid_actions;
  std::vector<Eigen::VectorXd> grid_points;
  std::vector<std::string> dropped;
  bool degenerate_family = false;
};

std::vector<OrbitSolution> find_critical_points(const OrbitProblem& prob, const CriticalSearchOptions& opt,
                                                CriticalSearchReport* report = nullptr);

// Minimum over t of the distance (angles modulo 2 pi) from a point to a sampled orbit.
double distance_to_orbit(const PseudoOrbit& orbit, const TimeGrid& grid, const PhaseState& p);

double minimal_period_bound(const Eigen::VectorXi& k, double T);
// T^{1/(tau+1)} form of the lower bound, with the constant taken as 1.
double minimal_period_asymptotic(double T, double tau);
// min over q in (g, g + extra] of |zeta(T/q) - zeta(0)| (angles modulo 2 pi).
double minimal_period_self_distance(const PseudoOrbit& orbit, const TimeGrid& grid, const Eigen::VectorXi& k,
                                    int extra = 8);

// ---------------------------------------------------------------------------------------------
// Continuation near a completely resonant torus of an integrable Hamiltonian

struct ContinuationResult {
  Eigen::VectorXd J_eps;
  PeriodSetup setup;
  std::vector<OrbitSolution> solutions;
  double correction_norm = 0;  // max over solutions of sup |(J, psi, w)|
  double eps_T = 0;
};

struct ContinuationOptions {
  OrbitOptions orbit;
  CriticalSearchOptions search;
  int newton_iter = 50;
  double newton_tol = 1e-14;
};

ContinuationResult resonant_torus_continuation(const Eigen::VectorXd& J0, double T, const Eigen::VectorXi& k_vec,
                                               const TFSeries& H_eps, double eps, double c1,
                                               const ContinuationOptions& opt = {});

// Parallel loop with deterministic result placement.
void parallel_for(int count, int threads, const std::function<void(int)>& body);

}  // namespace eltor
