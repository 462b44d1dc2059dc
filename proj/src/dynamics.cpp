#include "eltor/dynamics.hpp"

#include <numbers>

namespace eltor {

Eigen::VectorXd PhaseState::pack() const {
  const int n_ = n(), m_ = m();
  Eigen::VectorXd y(2 * n_ + 2 * m_);
  y << I, phi, z.real(), z.imag();
  return y;
}

PhaseState PhaseState::unpack(const Eigen::VectorXd& y, int n, int m) {
  PhaseState s;
  s.I = y.segment(0, n);
  s.phi = y.segment(n, n);
  s.z.resize(m);
  s.z.real() = y.segment(2 * n, m);
  s.z.imag() = y.segment(2 * n + m, m);
  return s;
}

Eigen::VectorXd PhaseState::phi_wrapped() const {
  constexpr double tp = 2 * std::numbers::pi;
  return phi.unaryExpr([](double x) { return x - tp * std::floor((x + std::numbers::pi) / tp); });
}

Method method_from_string(const std::string& s) {
  if (s == "rk4") return Method::RK4;
  if (s == "rk8") return Method::RK8;
  if (s == "splitting") return Method::Splitting;
  fail(ErrorKind::Parse, "unknown integrator '" + s + "' (expected rk4, rk8 or splitting)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::RK4: return "rk4";
    case Method::RK8: return "rk8";
    case Method::Splitting: return "splitting";
  }
  return "?";
}

HamiltonianField::HamiltonianField(const TFSeries& H) : n_(H.n()), m_(H.m()), eval_(H), H_(H) {
  if (!H.real_flagged()) fail(ErrorKind::Invariant, "integrate: Hamiltonian is not real-flagged");
}

void HamiltonianField::operator()(const Eigen::VectorXd& y, Eigen::VectorXd& dy) const {
  thread_local Eigen::VectorXcd grad;
  const PhaseState s = PhaseState::unpack(y, n_, m_);
  const Eigen::VectorXcd zb = s.z.conjugate();
  eval_.eval(s.I, s.phi, s.z, zb, &grad);
  dy.resize(y.size());
  dy.segment(0, n_) = -grad.segment(n_, n_).real();
  dy.segment(n_, n_) = grad.segment(0, n_).real();
  for (int j = 0; j < m_; ++j) {
    const std::complex<double> zd = std::complex<double>(0, 1) * grad(2 * n_ + m_ + j);
    dy(2 * n_ + j) = zd.real();
    dy(2 * n_ + m_ + j) = zd.imag();
  }
}

double HamiltonianField::energy(const PhaseState& s) const {
  return eval_.eval(s.I, s.phi, s.z, s.z.conjugate(), nullptr).real();
}

double HamiltonianField::conjugacy_defect(const PhaseState& s) const {
  Eigen::VectorXcd grad;
  eval_.eval(s.I, s.phi, s.z, s.z.conjugate(), &grad);
  double d = 0;
  const std::complex<double> i(0, 1);
  for (int j = 0; j < m_; ++j)
    d = std::max(d, std::abs(-i * grad(2 * n_ + j) - std::conj(i * grad(2 * n_ + m_ + j))));
  return d;
}

double HamiltonianField::fastest_frequency(const PhaseState& s) const {
  Eigen::VectorXcd grad;
  eval_.eval(s.I, s.phi, s.z, s.z.conjugate(), &grad);
  const Eigen::VectorXd phidot = grad.segment(0, n_).real();
  Eigen::VectorXd Omega = Eigen::VectorXd::Zero(m_);
  for (const auto& [key, c] : H_)
    if (key.degree() == 2 && key.z_degree() == 2 && key.a_equals_abar() && key.ell_zero())
      for (int j = 0; j < m_; ++j)
        if (key.a(j)) Omega(j) = c.real();
  double f = m_ ? Omega.cwiseAbs().maxCoeff() : 0.0;
  for (const auto& [key, c] : H_) {
    double w = 0;
    for (int i = 0; i < n_; ++i) w += key.ell(i) * phidot(i);
    for (int j = 0; j < m_; ++j) w += (key.a(j) - key.abar(j)) * Omega(j);
    f = std::max(f, std::abs(w));
  }
  return f;
}

Trajectory integrate(const TFSeries& H, const PhaseState& zeta0, double T, const IntegratorConfig& cfg) {
  if (zeta0.n() != H.n() || zeta0.phi.size() != H.n() || zeta0.m() != H.m())
    fail(ErrorKind::Dimension, "integrate: state does not match the Hamiltonian");
  if (!(T >= 0)) fail(ErrorKind::Invariant, "integrate: T must be nonnegative");
  if (cfg.method == Method::Splitting)
    fail(ErrorKind::Invariant, "integrate: the splitting method is not available for non-separable H; use rk8");
  const HamiltonianField field(H);
  double dt = cfg.dt;
  if (dt <= 0) {
    const double f = field.fastest_frequency(zeta0);
    dt = f > 0 ? 2 * std::numbers::pi / (cfg.points_per_period * f) : std::max(T, 1.0) / 100;
  }
  const std::size_t N = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(T / dt - 1e-9)));
  if (N > cfg.max_steps) fail(ErrorKind::Invariant, "integrate: step budget exceeded");
  const double h = T / double(N);
  if (T > 0 && !(h > 1e-14 * T)) fail(ErrorKind::Invariant, "integrate: step size underflow");

  Trajectory tr;
  tr.dt = h;
  tr.method = cfg.method;
  const int n = H.n(), m = H.m();
  Eigen::VectorXd y = zeta0.pack();
  auto record = [&](double t) {
    PhaseState s = PhaseState::unpack(y, n, m);
    if (m) tr.max_conjugacy_defect = std::max(tr.max_conjugacy_defect, field.conjugacy_defect(s));
    tr.t.push_back(t);
    tr.states.push_back(std::move(s));
  };
  record(0);
  for (std::size_t q = 1; q <= N; ++q) {
    y = cfg.method == Method::RK4 ? rk4_step(field, y, h) : gbs8_step(field, y, h);
    if (!y.allFinite() || y.cwiseAbs().maxCoeff() > cfg.blowup)
      fail(ErrorKind::Invariant, "integrate: trajectory norm explosion at t=" + std::to_string(q * h));
    if (q % static_cast<std::size_t>(std::max(cfg.sample_every, 1)) == 0 || q == N) record(q * h);
  }
  tr.steps = N;
  return tr;
}

VerifyReport verify_orbit(const TFSeries& H, const PhaseState& zeta0, double T, const Eigen::VectorXi& k_vec,
                          const Eigen::VectorXd& I0, const Eigen::VectorXd& omega_tilde,
                          const IntegratorConfig& cfg, Trajectory* out) {
  Trajectory tr = integrate(H, zeta0, T, cfg);
  const HamiltonianField field(H);
  VerifyReport r;
  r.steps = tr.steps;
  r.dt = tr.dt;
  r.conjugacy_defect = tr.max_conjugacy_defect;
  const double E0 = field.energy(tr.states.front());
  for (std::size_t q = 0; q < tr.states.size(); ++q) {
    const auto& s = tr.states[q];
    r.energy_drift = std::max(r.energy_drift, std::abs(field.energy(s) - E0));
    r.torus_sup_I = std::max(r.torus_sup_I, (s.I - I0).cwiseAbs().maxCoeff());
    if (s.m()) r.torus_sup_z = std::max(r.torus_sup_z, s.z.cwiseAbs().maxCoeff());
    r.phase_sup =
        std::max(r.phase_sup, (s.phi - zeta0.phi - omega_tilde * tr.t[q]).cwiseAbs().maxCoeff());
  }
  const auto& e = tr.states.back();
  const Eigen::VectorXd winding = (2 * std::numbers::pi) * k_vec.cast<double>();
  double c = (e.I - zeta0.I).cwiseAbs().maxCoeff();
  c = std::max(c, (e.phi - zeta0.phi - winding).cwiseAbs().maxCoeff());
  if (e.m()) c = std::max(c, (e.z - zeta0.z).cwiseAbs().maxCoeff());
  r.closure = c;
  if (out) *out = std::move(tr);
  return r;
}

PhaseState lie_map(const TFSeries& chi, const PhaseState& x, int steps) {
  if (steps < 1) fail(ErrorKind::Invariant, "lie_map: steps must be positive");
  const HamiltonianField field(chi);
  Eigen::VectorXd y = x.pack();
  for (int s = 0; s < steps; ++s) y = gbs8_step(field, y, 1.0 / steps);
  return PhaseState::unpack(y, x.n(), x.m());
}

OriginalNorms original_coordinate_norms(const TFSeries& chi, double eta, const Trajectory& tr,
                                        const Eigen::VectorXd& omega_tilde, int max_samples) {
  OriginalNorms r;
  if (tr.states.empty()) return r;
  const std::size_t stride = std::max<std::size_t>(1, tr.states.size() / std::max(max_samples, 1));
  const PhaseState p0 = lie_map(chi, tr.states.front());
  for (std::size_t q = 0; q < tr.states.size(); q += stride) {
    const PhaseState p = q == 0 ? p0 : lie_map(chi, tr.states[q]);
    double v = eta * eta * p.I.cwiseAbs().maxCoeff();
    if (p.m()) v += 2 * eta * p.z.cwiseAbs().maxCoeff();
    r.action_elliptic_sup = std::max(r.action_elliptic_sup, v);
    r.phase_sup = std::max(r.phase_sup, (p.phi - p0.phi - omega_tilde * tr.t[q]).cwiseAbs().maxCoeff());
    ++r.samples;
  }
  return r;
}

}  // namespace eltor
