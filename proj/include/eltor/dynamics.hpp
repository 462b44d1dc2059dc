#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eltor/tfseries.hpp"

namespace eltor {

// Phase-space point with zbar = conj(z) implied.
struct PhaseState {
  Eigen::VectorXd I, phi;  // phi unwrapped
  Eigen::VectorXcd z;

  int n() const { return static_cast<int>(I.size()); }
  int m() const { return static_cast<int>(z.size()); }
  // [I | phi | Re z | Im z]
  Eigen::VectorXd pack() const;
  static PhaseState unpack(const Eigen::VectorXd& y, int n, int m);
  Eigen::VectorXd phi_wrapped() const;  // in [-pi, pi)
};

enum class Method { RK4, RK8, Splitting };
Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct IntegratorConfig {
  Method method = Method::RK8;
  double dt = 0;                // 0 selects from points_per_period
  double points_per_period = 100;
  std::size_t max_steps = 50'000'000;
  int sample_every = 1;         // keep every k-th step in the trajectory
  double blowup = 1e8;          // abort when the state norm exceeds this
};

// Right-hand side of the Hamiltonian equations for a real-flagged H in packed coordinates.
class HamiltonianField {
 public:
  explicit HamiltonianField(const TFSeries& H);
  int n() const { return n_; }
  int m() const { return m_; }
  void operator()(const Eigen::VectorXd& y, Eigen::VectorXd& dy) const;
  double energy(const PhaseState& s) const;
  // max_j |(-i dH/dz_j) - conj(i dH/dzbar_j)| at s; vanishes for a real Hamiltonian.
  double conjugacy_defect(const PhaseState& s) const;
  // Largest linear frequency seen from s: max over terms of |ell.phidot + Omega.(a - abar)|.
  double fastest_frequency(const PhaseState& s) const;

 private:
  int n_, m_;
  SeriesEvaluator<double> eval_;
  TFSeries H_;
};

struct Trajectory {
  std::vector<double> t;
  std::vector<PhaseState> states;
  double max_conjugacy_defect = 0;
  std::size_t steps = 0;
  double dt = 0;
  Method method = Method::RK8;
};

Trajectory integrate(const TFSeries& H, const PhaseState& zeta0, double T, const IntegratorConfig& cfg = {});

// One fixed step of the given method on a generic autonomous field.
template <class F>
Eigen::VectorXd rk4_step(const F& f, const Eigen::VectorXd& y, double h);
template <class F>
Eigen::VectorXd gbs8_step(const F& f, const Eigen::VectorXd& y, double h);

struct VerifyReport {
  double closure = 0;         // |zeta(T) - zeta(0)| with angles compared modulo the winding 2 pi k
  double energy_drift = 0;    // max_t |H(t) - H(0)|
  double torus_sup_I = 0;     // sup_t |I(t) - I0|
  double torus_sup_z = 0;     // sup_t |z(t)|
  double phase_sup = 0;       // sup_t |phi(t) - phi(0) - omega_tilde t|
  double conjugacy_defect = 0;
  std::size_t steps = 0;
  double dt = 0;
};

VerifyReport verify_orbit(const TFSeries& H, const PhaseState& zeta0, double T, const Eigen::VectorXi& k_vec,
                          const Eigen::VectorXd& I0, const Eigen::VectorXd& omega_tilde,
                          const IntegratorConfig& cfg = {}, Trajectory* out = nullptr);

// Time-one map of the Hamiltonian flow of chi, the canonical change of variables Phi with
// f o Phi = exp(L_chi) f.
PhaseState lie_map(const TFSeries& chi, const PhaseState& x, int steps = 8);

// Sup norms of a normal-form trajectory after mapping it back through Phi (chi already carries
// its eta weights) and undoing the rescaling I_* = eta^2 I, Z_* = eta z.
struct OriginalNorms {
  double action_elliptic_sup = 0;  // sup_t |I_*|_inf + 2 |Z_*|_inf
  double phase_sup = 0;            // sup_t |phi_*(t) - phi_*(0) - omega_tilde t|_inf
  int samples = 0;
};
OriginalNorms original_coordinate_norms(const TFSeries& chi, double eta, const Trajectory& tr,
                                        const Eigen::VectorXd& omega_tilde, int max_samples = 1000);

// ---------------------------------------------------------------------------------------------

template <class F>
Eigen::VectorXd rk4_step(const F& f, const Eigen::VectorXd& y, double h) {
  Eigen::VectorXd k1, k2, k3, k4;
  f(y, k1);
  f(y + 0.5 * h * k1, k2);
  f(y + 0.5 * h * k2, k3);
  f(y + h * k3, k4);
  return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
}

// Gragg-Bulirsch-Stoer: modified midpoint with 2, 4, 6, 8 substeps and Aitken-Neville
// extrapolation in h^2, giving a fixed-step method of order 8.
template <class F>
Eigen::VectorXd gbs8_step(const F& f, const Eigen::VectorXd& y, double h) {
  constexpr int K = 4;
  static constexpr int seq[K] = {2, 4, 6, 8};
  Eigen::VectorXd f0;
  f(y, f0);
  std::array<std::array<Eigen::VectorXd, K>, K> tab;
  Eigen::VectorXd zm, z, zn, fz;
  for (int r = 0; r < K; ++r) {
    const int ns = seq[r];
    const double hs = h / ns;
    zm = y;
    z = y + hs * f0;
    for (int s = 1; s < ns; ++s) {
      f(z, fz);
      zn = zm + 2 * hs * fz;
      zm = z;
      z = zn;
    }
    f(z, fz);
    tab[r][0] = 0.5 * (zm + z + hs * fz);
    for (int c = 1; c <= r; ++c) {
      const double ratio = double(seq[r]) / seq[r - c];
      tab[r][c] = tab[r][c - 1] + (tab[r][c - 1] - tab[r - 1][c - 1]) / (ratio * ratio - 1);
    }
  }
  return tab[K - 1][K - 1];
}

}  // namespace eltor
