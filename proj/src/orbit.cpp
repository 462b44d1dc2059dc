#include "eltor/orbit.hpp"

#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

namespace eltor {

namespace {
constexpr double kTwoPi = 2 * std::numbers::pi;
using C = std::complex<double>;

double wrap_angle(double x) { return x - kTwoPi * std::floor((x + std::numbers::pi) / kTwoPi); }

double inf_norm(const Eigen::MatrixXd& A) { return A.size() ? A.cwiseAbs().rowwise().sum().maxCoeff() : 0.0; }
}  // namespace

void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (int i = w; i < count; i += threads) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------------------------

ResonantAction resonant_action(double T, double eta, const Eigen::MatrixXd& R, const Eigen::VectorXd& omega) {
  if (!(T > 0 && eta > 0)) fail(ErrorKind::Invariant, "resonant_action: T and eta must be positive");
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(R);
  if (!lu.isInvertible()) fail(ErrorKind::TwistSingular, "resonant_action: twist matrix is singular");
  const Eigen::VectorXd x = omega * T / kTwoPi;
  const Eigen::VectorXd frac = wrap_half(x);
  ResonantAction ra;
  ra.k = (x - frac).array().round().cast<int>();
  ra.I0 = -(kTwoPi / (eta * eta * T)) * lu.solve(frac);
  ra.omega_tilde = kTwoPi * ra.k.cast<double>() / T;
  return ra;
}

MonodromyGap monodromy_gap(const Eigen::VectorXd& Omega, double T, double floor) {
  MonodromyGap g;
  g.min_dist = std::numeric_limits<double>::infinity();
  double min_abs = std::numeric_limits<double>::infinity();
  for (int j = 0; j < Omega.size(); ++j) {
    const double th = Omega(j) * T;
    g.min_dist = std::min(g.min_dist, kTwoPi * dist_to_integers(th / kTwoPi));
    min_abs = std::min(min_abs, std::abs(2 * std::sin(th / 2)));
  }
  if (Omega.size() == 0) {
    g.invertible = true;
    g.min_dist = 0;
    return g;
  }
  g.invertible = min_abs > floor;
  g.minv_norm = g.invertible ? 1.0 / min_abs : std::numeric_limits<double>::infinity();
  g.stima_bound = g.min_dist > 0 ? 2.0 / g.min_dist : std::numeric_limits<double>::infinity();
  return g;
}

PeriodSetup make_period_setup(const NormalFormResult& nf, const FrequencyData& freq, double eta, double T,
                              double minv_bound) {
  if (T * eta * eta < 1.0 - 1e-12)
    fail(ErrorKind::Invariant, "make_period_setup: need T >= 1/eta^2 (T=" + std::to_string(T) + ")");
  const auto ra = resonant_action(T, eta, nf.R, freq.omega);
  const double guard = inf_norm(nf.R.inverse()) * std::numbers::pi * (1 + 1e-9);
  if (ra.I0.cwiseAbs().maxCoeff() > guard)
    fail(ErrorKind::Internal, "make_period_setup: |I0| exceeds its a priori bound");
  PeriodSetup s;
  s.T = T;
  s.eta = eta;
  s.k_vec = ra.k;
  s.I0 = ra.I0;
  s.omega_tilde = ra.omega_tilde;
  s.Omega_eta = freq.Omega + eta * eta * nf.Q * ra.I0;
  s.M = eta * eta * nf.R;
  s.minv_bound = minv_bound;
  return s;
}

// ---------------------------------------------------------------------------------------------

TimeGrid::TimeGrid(double T, int panels, int order) : T_(T), panels_(panels), p_(order) {
  if (!(T > 0) || panels < 1 || order < 2) fail(ErrorKind::Invariant, "TimeGrid: bad parameters");
  h_ = T / panels;
  const int P = p_;
  x_.resize(P + 1);
  for (int j = 0; j <= P; ++j) x_(j) = -std::cos(std::numbers::pi * j / P);
  x_(0) = -1;
  x_(P) = 1;
  // Chebyshev values, derivatives and antiderivatives at the nodes.
  Eigen::MatrixXd V(P + 1, P + 1), Vd(P + 1, P + 1), W(P + 1, P + 1);
  auto cheb = [&](double x, int deg) {
    Eigen::VectorXd Tv(deg + 2), Td(deg + 2);
    Tv(0) = 1;
    Tv(1) = x;
    Td(0) = 0;
    Td(1) = 1;
    for (int j = 1; j <= deg; ++j) {
      Tv(j + 1) = 2 * x * Tv(j) - Tv(j - 1);
      Td(j + 1) = 2 * Tv(j) + 2 * x * Td(j) - Td(j - 1);
    }
    return std::pair{Tv, Td};
  };
  auto anti = [&](const Eigen::VectorXd& Tv, double x, int j) {
    if (j == 0) return x;
    if (j == 1) return x * x / 2;
    return 0.5 * (Tv(j + 1) / (j + 1) - Tv(j - 1) / (j - 1));
  };
  const auto [Tm, Tdm] = cheb(-1.0, P);
  for (int i = 0; i <= P; ++i) {
    const auto [Tv, Td] = cheb(x_(i), P);
    for (int j = 0; j <= P; ++j) {
      V(i, j) = Tv(j);
      Vd(i, j) = Td(j);
      W(i, j) = anti(Tv, x_(i), j) - anti(Tm, -1.0, j);
    }
  }
  const Eigen::MatrixXd Vinv = V.partialPivLu().inverse();
  S_ = W * Vinv;
  D_ = Vd * Vinv;
  bw_.resize(P + 1);
  for (int j = 0; j <= P; ++j) bw_(j) = ((j % 2) ? -1.0 : 1.0) * ((j == 0 || j == P) ? 0.5 : 1.0);
  t_.resize(panels_ * P + 1);
  for (int q = 0; q < panels_; ++q)
    for (int j = 0; j < P; ++j) t_(q * P + j) = q * h_ + 0.5 * h_ * (x_(j) + 1);
  t_(panels_ * P) = T_;
}

TimeGrid TimeGrid::for_frequency(double T, double max_frequency, int order, double radians_per_panel) {
  const double len = max_frequency > 0 ? radians_per_panel / max_frequency : T;
  const int panels = std::max(4, static_cast<int>(std::ceil(T / len)));
  return TimeGrid(T, panels, order);
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> TimeGrid::cumulative(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& F) const {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const int P = p_;
  Mat out(F.rows(), F.cols());
  out.col(0).setZero();
  const Eigen::MatrixXd St = (0.5 * h_) * S_.transpose();
  for (int q = 0; q < panels_; ++q) {
    const int c0 = q * P;
    Mat blk = F.middleCols(c0, P + 1) * St.cast<Scalar>();
    const auto carry = out.col(c0).eval();
    for (int j = 1; j <= P; ++j) out.col(c0 + j) = carry + blk.col(j);
  }
  return out;
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> TimeGrid::derivative(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& F) const {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const int P = p_;
  Mat out = Mat::Zero(F.rows(), F.cols());
  const Eigen::MatrixXd Dt = (2.0 / h_) * D_.transpose();
  for (int q = 0; q < panels_; ++q) {
    const int c0 = q * P;
    Mat blk = F.middleCols(c0, P + 1) * Dt.cast<Scalar>();
    for (int j = 0; j <= P; ++j) {
      const bool shared = (j == 0 && q > 0);
      if (shared)
        out.col(c0) = 0.5 * (out.col(c0) + blk.col(0));
      else
        out.col(c0 + j) = blk.col(j);
    }
  }
  return out;
}

int TimeGrid::panel_of(double s) const {
  return std::clamp(static_cast<int>(std::floor(s / h_)), 0, panels_ - 1);
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> TimeGrid::interpolate(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& F, double s) const {
  const int q = panel_of(s), P = p_, c0 = q * P;
  const double x = 2 * (s - q * h_) / h_ - 1;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> num = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(F.rows());
  double den = 0;
  for (int j = 0; j <= P; ++j) {
    const double dx = x - x_(j);
    if (dx == 0) return F.col(c0 + j);
    const double c = bw_(j) / dx;
    num += c * F.col(c0 + j);
    den += c;
  }
  return num / den;
}

std::vector<double> TimeGrid::midpoints() const {
  std::vector<double> m(t_.size() - 1);
  for (int i = 0; i + 1 < t_.size(); ++i) m[i] = 0.5 * (t_(i) + t_(i + 1));
  return m;
}

template Eigen::MatrixXd TimeGrid::cumulative(const Eigen::MatrixXd&) const;
template Eigen::MatrixXcd TimeGrid::cumulative(const Eigen::MatrixXcd&) const;
template Eigen::MatrixXd TimeGrid::derivative(const Eigen::MatrixXd&) const;
template Eigen::MatrixXcd TimeGrid::derivative(const Eigen::MatrixXcd&) const;
template Eigen::VectorXd TimeGrid::interpolate(const Eigen::MatrixXd&, double) const;
template Eigen::VectorXcd TimeGrid::interpolate(const Eigen::MatrixXcd&, double) const;

// ---------------------------------------------------------------------------------------------

Field Field::zero(int n, int m, int N) {
  return {Eigen::MatrixXd::Zero(n, N), Eigen::MatrixXd::Zero(n, N), Eigen::MatrixXcd::Zero(m, N)};
}
double Field::norm() const {
  double r = 0;
  if (J.size()) r = std::max(r, J.cwiseAbs().maxCoeff());
  if (psi.size()) r = std::max(r, psi.cwiseAbs().maxCoeff());
  if (w.size()) r = std::max(r, w.cwiseAbs().maxCoeff());
  return r;
}
Field& Field::operator+=(const Field& o) {
  J += o.J;
  psi += o.psi;
  w += o.w;
  return *this;
}
Field& Field::operator-=(const Field& o) {
  J -= o.J;
  psi -= o.psi;
  w -= o.w;
  return *this;
}
Field& Field::operator*=(double s) {
  J *= s;
  psi *= s;
  w *= s;
  return *this;
}
Field operator+(Field a, const Field& b) { return a += b; }
Field operator-(Field a, const Field& b) { return a -= b; }
Field operator*(double s, Field a) { return a *= s; }

GreenBound green_norm_bound(const Eigen::MatrixXd& M, const Eigen::VectorXd& Omega, double T) {
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  if (!lu.isInvertible()) fail(ErrorKind::TwistSingular, "green operator: M is singular");
  const double nM = inf_norm(M), nMi = inf_norm(lu.inverse());
  const auto gap = monodromy_gap(Omega, T);
  if (!gap.invertible) fail(ErrorKind::PeriodRefused, "green operator: monodromy 1 - exp(i Omega T) is singular");
  const double nMM = Omega.size() ? gap.minv_norm : 0.0;
  GreenBound b;
  b.rigorous = std::max({1.5 * T + nMi, nM * T * T + nM * nMi * T + T, (nMM + 1) * T});
  b.displayed = b.C * (nMi + nM * T * T + nM * nMi * T + nMM * T);
  return b;
}

GreenOperator::GreenOperator(std::shared_ptr<const TimeGrid> grid, Eigen::MatrixXd M, Eigen::VectorXd Omega)
    : grid_(std::move(grid)), M_(std::move(M)), Omega_(std::move(Omega)) {
  bound_ = green_norm_bound(M_, Omega_, grid_->T());
  Minv_ = M_.fullPivLu().inverse();
  const double T = grid_->T();
  beta_factor_.resize(Omega_.size());
  for (int j = 0; j < Omega_.size(); ++j) {
    const C e = std::polar(1.0, Omega_(j) * T);
    beta_factor_(j) = e / (1.0 - e);
  }
}

Field GreenOperator::apply(const Field& rhs) const {
  const TimeGrid& g = *grid_;
  const int N = g.size();
  const double T = g.T();
  Field out;
  const Eigen::MatrixXd IJ = g.cumulative(rhs.J);
  const Eigen::MatrixXd IIJ = g.cumulative(IJ);
  const Eigen::MatrixXd Ipsi = g.cumulative(rhs.psi);
  const Eigen::VectorXd alpha = -(IIJ.col(N - 1) + Minv_ * Ipsi.col(N - 1)) / T;
  out.J = IJ.colwise() + alpha;
  out.psi = (M_ * alpha) * g.t().transpose() + M_ * IIJ + Ipsi;
  const int m = static_cast<int>(Omega_.size());
  Eigen::MatrixXcd G(m, N);
  for (int j = 0; j < m; ++j)
    for (int q = 0; q < N; ++q) G(j, q) = std::polar(1.0, -Omega_(j) * g.t()(q)) * rhs.w(j, q);
  const Eigen::MatrixXcd IG = g.cumulative(G);
  out.w.resize(m, N);
  for (int j = 0; j < m; ++j) {
    const C beta = beta_factor_(j) * IG(j, N - 1);
    for (int q = 0; q < N; ++q) out.w(j, q) = std::polar(1.0, Omega_(j) * g.t()(q)) * (beta + IG(j, q));
  }
  return out;
}

GreenResidual green_residual(const GreenOperator& L, const Field& rhs, const Field& out) {
  const TimeGrid& g = L.grid();
  const int N = g.size();
  GreenResidual r;
  if (out.psi.size())
    r.psi_endpoints = std::max(out.psi.col(0).cwiseAbs().maxCoeff(), out.psi.col(N - 1).cwiseAbs().maxCoeff());
  if (out.w.size()) r.w_periodicity = (out.w.col(N - 1) - out.w.col(0)).cwiseAbs().maxCoeff();
  const Eigen::MatrixXd dJ = g.derivative(out.J), dpsi = g.derivative(out.psi);
  const Eigen::MatrixXcd dw = g.derivative(out.w);
  const C i(0, 1);
  for (double s : g.midpoints()) {
    const Eigen::VectorXd e1 = g.interpolate(dJ, s) - g.interpolate(rhs.J, s);
    const Eigen::VectorXd e2 = g.interpolate(dpsi, s) - L.M() * g.interpolate(out.J, s) - g.interpolate(rhs.psi, s);
    double e = std::max(e1.size() ? e1.cwiseAbs().maxCoeff() : 0.0, e2.size() ? e2.cwiseAbs().maxCoeff() : 0.0);
    if (out.w.size()) {
      const Eigen::VectorXcd wv = g.interpolate(out.w, s);
      const Eigen::VectorXcd e3 =
          g.interpolate(dw, s) - i * (L.Omega().array() * wv.array()).matrix() - g.interpolate(rhs.w, s);
      e = std::max(e, e3.cwiseAbs().maxCoeff());
    }
    r.midpoint = std::max(r.midpoint, e);
  }
  return r;
}

// ---------------------------------------------------------------------------------------------

Field PointwiseMap::apply(const Field& x, int threads) const {
  const int N = static_cast<int>(x.J.cols());
  Field out = Field::zero(n(), m(), N);
  const int chunks = std::max(1, threads) * 4;
  parallel_for(chunks, threads, [&](int c) {
    Eigen::VectorXd PJ, Pp;
    Eigen::VectorXcd Pw;
    for (int q = c; q < N; q += chunks) {
      eval_node(q, x.J.col(q), x.psi.col(q), x.w.col(q), PJ, Pp, Pw);
      out.J.col(q) = PJ;
      out.psi.col(q) = Pp;
      out.w.col(q) = Pw;
    }
  });
  return out;
}

double PointwiseMap::local_jacobian_norm(int q, const Eigen::VectorXd& J, const Eigen::VectorXd& psi,
                                         const Eigen::VectorXcd& w, double h) const {
  const int n_ = n();
  // On the invariant subspace only the (J, psi) block matters.
  const int m_ = elliptic_subspace_invariant() && (w.array() == C(0)).all() ? 0 : m();
  // Columns: J (n), psi (n), Re w (m), Im w (m). Rows: PJ (n), Ppsi (n), Pw (m, complex).
  const int cols = 2 * n_ + 2 * m_;
  Eigen::VectorXd rowsum = Eigen::VectorXd::Zero(2 * n_ + m_);
  Eigen::VectorXd PJp, Ppp, PJm, Ppm;
  Eigen::VectorXcd Pwp, Pwm;
  for (int c = 0; c < cols; ++c) {
    Eigen::VectorXd Jp = J, Jm = J, pp = psi, pm = psi;
    Eigen::VectorXcd wp = w, wm = w;
    if (c < n_) {
      Jp(c) += h;
      Jm(c) -= h;
    } else if (c < 2 * n_) {
      pp(c - n_) += h;
      pm(c - n_) -= h;
    } else if (c < 2 * n_ + m_) {
      wp(c - 2 * n_) += h;
      wm(c - 2 * n_) -= h;
    } else {
      wp(c - 2 * n_ - m_) += C(0, h);
      wm(c - 2 * n_ - m_) -= C(0, h);
    }
    eval_node(q, Jp, pp, wp, PJp, Ppp, Pwp);
    eval_node(q, Jm, pm, wm, PJm, Ppm, Pwm);
    for (int r = 0; r < n_; ++r) {
      rowsum(r) += std::abs(PJp(r) - PJm(r)) / (2 * h);
      rowsum(n_ + r) += std::abs(Ppp(r) - Ppm(r)) / (2 * h);
    }
    for (int r = 0; r < m_; ++r) rowsum(2 * n_ + r) += std::abs(Pwp(r) - Pwm(r)) / (2 * h);
  }
  return rowsum.maxCoeff();
}

Field contraction_solve(const PointwiseMap& P, const GreenOperator& L, const ContractionOptions& opt,
                        ContractionReport* report, const Field* warm_start, int threads) {
  ContractionReport rep;
  const int N = L.grid().size(), n = P.n(), m = P.m();
  const Field zero = Field::zero(n, m, N);
  const Field x1 = L.apply(P.apply(zero, threads));
  rep.LP0 = x1.norm();
  rep.delta0 = 2 * rep.LP0;
  rep.lipschitz_allowed = 1.0 / (2 * L.bound().rigorous);
  rep.restricted_to_w0 = P.elliptic_subspace_invariant() && (!warm_start || warm_start->w.isZero(0.0));
  auto finish = [&](Field x) {
    rep.solution_norm = x.norm();
    if (report) *report = rep;
    return x;
  };
  if (rep.LP0 == 0) {
    rep.iterations = 1;
    return finish(x1);
  }

  if (opt.check_lipschitz) {
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> node(0, N - 1);
    const double d = rep.delta0;
    const double h = opt.fd_step * std::max(d, 1e-3);
    for (int p = 0; p < opt.lipschitz_points; ++p)
      for (int s = 0; s < std::min(opt.lipschitz_nodes, N); ++s) {
        const int q = node(rng);
        Eigen::VectorXd J(n), psi(n);
        Eigen::VectorXcd w(m);
        for (int i = 0; i < n; ++i) {
          J(i) = d * u(rng);
          psi(i) = d * u(rng);
        }
        for (int j = 0; j < m; ++j)
          w(j) = rep.restricted_to_w0 ? C(0) : std::polar(d * std::abs(u(rng)), std::numbers::pi * u(rng));
        rep.lipschitz_measured = std::max(rep.lipschitz_measured, P.local_jacobian_norm(q, J, psi, w, h));
      }
    if (rep.lipschitz_measured > rep.lipschitz_allowed)
      fail(ErrorKind::ContractionRefused,
           "contraction refused: sup|DP| on the ball of radius " + std::to_string(rep.delta0) + " is " +
               std::to_string(rep.lipschitz_measured) + " > 1/(2|L|) = " + std::to_string(rep.lipschitz_allowed) +
               " (|L(P(0))| = " + std::to_string(rep.LP0) + ")");
  }

  Field x = warm_start ? *warm_start : x1;
  const double tol = opt.stop_tol * rep.delta0;
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= opt.max_iter; ++it) {
    Field next = L.apply(P.apply(x, threads));
    const double step = (next - x).norm();
    rep.steps.push_back(step);
    rep.iterations = it;
    x = std::move(next);
    if (std::isfinite(prev) && prev > 1e-9 * rep.delta0 && step > 1e-9 * rep.delta0) {
      const double ratio = step / prev;
      rep.max_ratio = std::max(rep.max_ratio, ratio);
      if (ratio > 0.5 * (1 + opt.ratio_margin))
        fail(ErrorKind::ContractionRefused, "contraction refused: step ratio " + std::to_string(ratio) +
                                                " exceeds the monitored bound");
    }
    rep.final_step = step;
    const bool stalled = it >= 3 && step >= 0.9 * prev && step <= 1e-9 * rep.delta0;
    if (step <= tol || stalled) {
      if (x.norm() > rep.delta0 * (1 + 1e-9))
        fail(ErrorKind::ContractionRefused, "contraction refused: fixed point left the ball");
      return finish(std::move(x));
    }
    prev = step;
  }
  fail(ErrorKind::ContractionRefused, "contraction did not converge in " + std::to_string(opt.max_iter) +
                                          " iterations (last step " + std::to_string(rep.final_step) + ")");
}

// ---------------------------------------------------------------------------------------------

OrbitProblem::OrbitProblem(TFSeries H, PeriodSetup setup, const OrbitOptions& opt)
    : H_(std::move(H)), setup_(std::move(setup)), opt_(opt) {
  if (!H_.real_flagged()) fail(ErrorKind::Invariant, "OrbitProblem: Hamiltonian is not real-flagged");
  if (H_.n() != setup_.n() || H_.m() != setup_.m())
    fail(ErrorKind::Dimension, "OrbitProblem: setup does not match the Hamiltonian");
  if (!(setup_.eta > 0)) fail(ErrorKind::Invariant, "OrbitProblem: scale must be positive");
  full_ = SeriesEvaluator<double>(H_);
  zfree_ = SeriesEvaluator<double>(project(H_, [](const TermKey& k) { return k.z_degree() <= 1; }));
  double f = setup_.m() ? setup_.Omega_eta.cwiseAbs().maxCoeff() : 0.0;
  for (const auto& [key, c] : H_) {
    double w = 0;
    for (int i = 0; i < key.n; ++i) w += key.ell(i) * setup_.omega_tilde(i);
    for (int j = 0; j < key.m; ++j) w += (key.a(j) - key.abar(j)) * setup_.Omega_eta(j);
    f = std::max(f, std::abs(w));
  }
  max_frequency_ = f;
  z_invariant_ = std::none_of(H_.begin(), H_.end(), [](const auto& t) { return t.first.z_degree() == 1; });
  grid_ = std::make_shared<TimeGrid>(TimeGrid::for_frequency(setup_.T, f, opt_.grid_order, opt_.radians_per_panel));
  green_ = std::make_unique<GreenOperator>(grid_, setup_.M, setup_.Omega_eta);
}

C OrbitProblem::eval(const Eigen::VectorXd& I, const Eigen::VectorXd& phi, const Eigen::VectorXcd& z,
                     Eigen::VectorXcd* grad) const {
  const bool zero = z.size() == 0 || (z.array() == C(0)).all();
  const Eigen::VectorXcd zb = z.conjugate();
  return (zero ? zfree_ : full_).eval(I, phi, z, zb, grad);
}

namespace {

class OrbitMap : public PointwiseMap {
 public:
  OrbitMap(const OrbitProblem& prob, const Eigen::VectorXd& phi0) : prob_(prob), phi0_(phi0) {}
  int n() const override { return prob_.setup().n(); }
  int m() const override { return prob_.setup().m(); }
  bool elliptic_subspace_invariant() const override { return prob_.elliptic_subspace_invariant(); }
  void eval_node(int q, const Eigen::VectorXd& J, const Eigen::VectorXd& psi, const Eigen::VectorXcd& w,
                 Eigen::VectorXd& PJ, Eigen::VectorXd& Ppsi, Eigen::VectorXcd& Pw) const override {
    const PeriodSetup& s = prob_.setup();
    const int n_ = n(), m_ = m();
    const double sc = s.eta, t = prob_.grid().t()(q);
    thread_local Eigen::VectorXcd grad;
    const Eigen::VectorXd I = s.I0 + sc * J;
    const Eigen::VectorXd phi = phi0_ + s.omega_tilde * t + sc * psi;
    const Eigen::VectorXcd z = sc * w;
    prob_.eval(I, phi, z, &grad);
    PJ = -grad.segment(n_, n_).real() / sc;
    Ppsi = (grad.segment(0, n_).real() - s.omega_tilde) / sc - s.M * J;
    Pw.resize(m_);
    for (int j = 0; j < m_; ++j) Pw(j) = C(0, 1) * grad(2 * n_ + m_ + j) / sc - C(0, 1) * s.Omega_eta(j) * w(j);
  }

 private:
  const OrbitProblem& prob_;
  Eigen::VectorXd phi0_;
};

}  // namespace

PhaseState PseudoOrbit::state_at_node(int q) const {
  return {I.col(q), phi.col(q), z.col(q)};
}

PseudoOrbit pseudo_periodic(const Eigen::VectorXd& phi0, const OrbitProblem& prob, const Field* warm_start,
                            bool compute_residual) {
  const PeriodSetup& s = prob.setup();
  const TimeGrid& g = prob.grid();
  const int n = s.n(), m = s.m(), N = g.size();
  if (phi0.size() != n) fail(ErrorKind::Dimension, "pseudo_periodic: phi0 has the wrong size");
  OrbitMap P(prob, phi0);
  PseudoOrbit po;
  po.phi0 = phi0;
  po.x = contraction_solve(P, prob.green(), prob.options().contraction, &po.contraction, warm_start,
                           prob.options().threads);
  const double sc = s.eta;
  po.I = (sc * po.x.J).colwise() + s.I0;
  po.phi = (s.omega_tilde * g.t().transpose() + sc * po.x.psi).colwise() + phi0;
  po.z = sc * po.x.w;
  po.boundary_residual = sc * std::max(std::max(po.x.psi.col(0).cwiseAbs().maxCoeff(),
                                                po.x.psi.col(N - 1).cwiseAbs().maxCoeff()),
                                       m ? (po.x.w.col(N - 1) - po.x.w.col(0)).cwiseAbs().maxCoeff() : 0.0);

  // Action integrand I.dH/dI + z.dH/dz - H along the orbit.
  Eigen::MatrixXcd integrand(1, N);
  {
    Eigen::VectorXcd grad;
    for (int q = 0; q < N; ++q) {
      const C Hq = prob.eval(po.I.col(q), po.phi.col(q), po.z.col(q), &grad);
      C v = -Hq;
      for (int i = 0; i < n; ++i) v += po.I(i, q) * grad(i);
      for (int j = 0; j < m; ++j) v += po.z(j, q) * grad(2 * n + j);
      integrand(0, q) = v;
    }
  }
  const C E = g.cumulative(integrand)(0, N - 1);
  po.action = E.real();
  po.action_imag = E.imag();
  po.gradient = po.I.col(N - 1) - po.I.col(0);

  if (compute_residual) {
    const Eigen::MatrixXd dI = g.derivative(po.I), dphi = g.derivative(po.phi);
    const Eigen::MatrixXcd dz = g.derivative(po.z);
    Eigen::VectorXcd grad;
    for (double t : g.midpoints()) {
      const Eigen::VectorXd I = g.interpolate(po.I, t), ph = g.interpolate(po.phi, t);
      const Eigen::VectorXcd z = g.interpolate(po.z, t);
      const Eigen::VectorXcd zb = z.conjugate();
      prob.eval(I, ph, z, &grad);
      double e = (g.interpolate(dI, t) + grad.segment(n, n).real()).cwiseAbs().maxCoeff();
      e = std::max(e, (g.interpolate(dphi, t) - grad.segment(0, n).real()).cwiseAbs().maxCoeff());
      if (m)
        e = std::max(e, (g.interpolate(dz, t) - C(0, 1) * grad.segment(2 * n + m, m)).cwiseAbs().maxCoeff());
      po.ode_residual = std::max(po.ode_residual, e);
    }
  }
  return po;
}

double reduced_action(const Eigen::VectorXd& phi0, const OrbitProblem& prob) {
  return pseudo_periodic(phi0, prob).action;
}

Eigen::VectorXd action_gradient(const Eigen::VectorXd& phi0, const OrbitProblem& prob) {
  return pseudo_periodic(phi0, prob).gradient;
}

// ---------------------------------------------------------------------------------------------

long long gcd_of(const Eigen::VectorXi& k) {
  long long g = 0;
  for (int i = 0; i < k.size(); ++i) g = std::gcd(g, static_cast<long long>(std::abs(k(i))));
  return g;
}

Eigen::MatrixXi quotient_lattice_basis(const Eigen::VectorXi& k) {
  const int n = static_cast<int>(k.size());
  if (n == 0 || gcd_of(k) == 0) fail(ErrorKind::Invariant, "quotient_lattice_basis: k must be nonzero");
  // Unimodular column operations reduce the row k to (g, 0, ..., 0); the trailing columns of the
  // accumulated transform span the orthogonal lattice.
  Eigen::MatrixXi U = Eigen::MatrixXi::Identity(n, n);
  Eigen::VectorXi r = k;
  while (true) {
    int piv = -1;
    for (int i = 0; i < n; ++i)
      if (r(i) != 0 && (piv < 0 || std::abs(r(i)) < std::abs(r(piv)))) piv = i;
    if (piv != 0) {
      std::swap(r(0), r(piv));
      U.col(0).swap(U.col(piv));
    }
    bool done = true;
    for (int c = 1; c < n; ++c) {
      if (r(c) == 0) continue;
      const int q = r(c) / r(0);
      r(c) -= q * r(0);
      U.col(c) -= q * U.col(0);
      if (r(c) != 0) done = false;
    }
    if (done) break;
  }
  Eigen::MatrixXi B = U.rightCols(n - 1);
  for (int c = 0; c < n - 1; ++c) {
    int first = 0;
    while (first < n && B(first, c) == 0) ++first;
    if (first < n && B(first, c) < 0) B.col(c) *= -1;
  }
  return B;
}

std::string to_string(CriticalKind k) {
  switch (k) {
    case CriticalKind::Min: return "min";
    case CriticalKind::Max: return "max";
    case CriticalKind::MinMaxGrid: return "minmax_grid";
  }
  return "?";
}

double minimal_period_bound(const Eigen::VectorXi& k, double T) {
  const long long g = gcd_of(k);
  return g > 0 ? T / double(g) : T;
}

double minimal_period_asymptotic(double T, double tau) { return std::pow(T, 1.0 / (tau + 1.0)); }

namespace {
double state_distance(const PhaseState& a, const PhaseState& b) {
  double d = (a.I - b.I).cwiseAbs().maxCoeff();
  for (int i = 0; i < a.phi.size(); ++i) d = std::max(d, std::abs(wrap_angle(a.phi(i) - b.phi(i))));
  if (a.z.size()) d = std::max(d, (a.z - b.z).cwiseAbs().maxCoeff());
  return d;
}

PhaseState state_at(const PseudoOrbit& o, const TimeGrid& g, double t) {
  return {g.interpolate(o.I, t), g.interpolate(o.phi, t), g.interpolate(o.z, t)};
}
}  // namespace

double distance_to_orbit(const PseudoOrbit& orbit, const TimeGrid& g, const PhaseState& p) {
  const int N = g.size();
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (int q = 0; q < N; ++q) {
    const double d = state_distance(orbit.state_at_node(q), p);
    if (d < bd) {
      bd = d;
      best = q;
    }
  }
  // Golden-section refinement on the neighbouring intervals.
  double a = g.t()(std::max(best - 1, 0)), b = g.t()(std::min(best + 1, N - 1));
  const double r = (std::sqrt(5.0) - 1) / 2;
  auto f = [&](double t) { return state_distance(state_at(orbit, g, t), p); };
  double c = b - r * (b - a), d = a + r * (b - a), fc = f(c), fd = f(d);
  for (int it = 0; it < 80 && b - a > 1e-14 * std::max(1.0, g.T()); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return std::min({bd, fc, fd});
}

double minimal_period_self_distance(const PseudoOrbit& orbit, const TimeGrid& g, const Eigen::VectorXi& k,
                                    int extra) {
  const long long gg = std::max<long long>(gcd_of(k), 1);
  const PhaseState s0 = orbit.state_at_node(0);
  double best = std::numeric_limits<double>::infinity();
  for (long long q = gg + 1; q <= gg + extra; ++q)
    best = std::min(best, state_distance(state_at(orbit, g, g.T() / double(q)), s0));
  return best;
}

// ---------------------------------------------------------------------------------------------

namespace {

struct Candidate {
  Eigen::VectorXd s;  // coordinates on the quotient torus
  PseudoOrbit orbit;
  Eigen::VectorXd gs;  // gradient with respect to s
};

class CriticalSearch {
 public:
  CriticalSearch(const OrbitProblem& prob, const CriticalSearchOptions& opt)
      : prob_(prob), opt_(opt), n_(prob.setup().n()) {
    B_ = quotient_lattice_basis(prob.setup().k_vec).cast<double>();
  }

  Eigen::VectorXd phi0_of(const Eigen::VectorXd& s) const { return kTwoPi * (B_ * s); }

  Candidate evaluate(const Eigen::VectorXd& s, const Field* warm = nullptr) const {
    Candidate c;
    c.s = s;
    c.orbit = pseudo_periodic(phi0_of(s), prob_, warm);
    c.gs = kTwoPi * (B_.transpose() * c.orbit.gradient);
    return c;
  }

  // Sample points: for n = 2 the restriction of the action to the quotient circle is (nearly)
  // periodic with period 1/|k/g|^2, since every orbit crosses it that many times, so one window
  // suffices for seeding; in higher dimension the whole quotient torus is sampled.
  std::vector<Eigen::VectorXd> grid_points() const {
    std::vector<Eigen::VectorXd> pts;
    const int G = std::max(opt_.grid_per_dim, 3), dim = n_ - 1;
    if (dim == 0) return {Eigen::VectorXd()};
    double width = 1.0;
    if (n_ == 2) {
      const Eigen::VectorXd kh = prob_.setup().k_vec.cast<double>() / double(gcd_of(prob_.setup().k_vec));
      width = 1.0 / kh.squaredNorm();
    }
    window_ = width;
    std::vector<int> idx(dim, 0);
    while (true) {
      Eigen::VectorXd s(dim);
      for (int d = 0; d < dim; ++d) s(d) = width * idx[d] / G;
      pts.push_back(s);
      int d = 0;
      while (d < dim && idx[d] == G - 1) idx[d++] = 0;
      if (d == dim) break;
      ++idx[d];
    }
    return pts;
  }
  double window() const { return window_; }

  // Drives the quotient gradient to zero from a grid seed; sign = +1 for minima, -1 for maxima.
  std::optional<Candidate> refine(const Candidate& seed, double sign, const std::vector<Candidate>& grid, int* iters,
                                  std::string* why) const {
    if (n_ == 2) return refine_1d(seed, sign, grid, iters, why);
    return refine_bb(seed, sign, iters, why);
  }

 private:
  bool closed(const Candidate& c) const { return c.orbit.gradient.cwiseAbs().maxCoeff() <= opt_.closure_tol; }

  std::optional<Candidate> refine_1d(const Candidate& seed, double sign, const std::vector<Candidate>& grid,
                                     int* iters, std::string* why) const {
    // Bracket a sign change of sign*g around the seed using the grid neighbours.
    const int G = static_cast<int>(grid.size());
    int i0 = 0;
    for (int i = 0; i < G; ++i)
      if (grid[i].s(0) == seed.s(0)) i0 = i;
    const double h = window_ / G;
    auto shifted = [&](int i) {
      Candidate c = grid[((i % G) + G) % G];
      const double off = std::floor(double(i) / G) * window_;
      if (off != 0) c = evaluate(Eigen::VectorXd::Constant(1, c.s(0) + off), &c.orbit.x);
      return c;
    };
    Candidate a = seed, b = seed;
    const double g0 = sign * seed.gs(0);
    if (closed(seed)) return seed;
    if (g0 > 0) {
      a = shifted(i0 - 1);
      b = seed;
    } else {
      a = seed;
      b = shifted(i0 + 1);
    }
    if (!(sign * a.gs(0) <= 0 && sign * b.gs(0) >= 0)) {
      // The grid neighbour did not bracket; widen once by another cell.
      if (g0 > 0) a = shifted(i0 - 2);
      else b = shifted(i0 + 2);
      if (!(sign * a.gs(0) <= 0 && sign * b.gs(0) >= 0)) {
        *why = "no sign change of the quotient gradient within two grid cells (h=" + std::to_string(h) + ")";
        return std::nullopt;
      }
    }
    // Safeguarded secant (Barzilai-Borwein step in one dimension) inside the bracket.
    Candidate prev = a, cur = b;
    for (int it = 0; it < opt_.max_refine; ++it) {
      *iters = it + 1;
      const double fa = sign * a.gs(0), fb = sign * b.gs(0);
      double s = 0.5 * (a.s(0) + b.s(0));
      const double dg = cur.gs(0) - prev.gs(0), ds = cur.s(0) - prev.s(0);
      if (dg != 0 && ds != 0) {
        const double trial = cur.s(0) - cur.gs(0) * ds / dg;
        const double lo = std::min(a.s(0), b.s(0)), hi = std::max(a.s(0), b.s(0));
        if (trial > lo + 0.01 * (hi - lo) && trial < hi - 0.01 * (hi - lo)) s = trial;
      } else if (fb != fa) {
        s = a.s(0) - fa * (b.s(0) - a.s(0)) / (fb - fa);
      }
      const Field* warm = &cur.orbit.x;
      Candidate c = evaluate(Eigen::VectorXd::Constant(1, s), warm);
      if (closed(c)) return c;
      const double fc = sign * c.gs(0);
      // Keep the half whose endpoints still bracket; stalled secant falls back to bisection next.
      const double width_before = std::abs(b.s(0) - a.s(0));
      if (fc < 0)
        a = c;
      else
        b = c;
      prev = cur;
      cur = c;
      if (std::abs(b.s(0) - a.s(0)) > 0.7 * width_before) prev = cur;  // force a bisection step
      if (std::abs(b.s(0) - a.s(0)) < 1e-15) {
        return std::abs(a.gs(0)) < std::abs(b.gs(0)) ? a : b;
      }
    }
    *why = "refinement did not reach the closure tolerance in " + std::to_string(opt_.max_refine) + " steps";
    return std::nullopt;
  }

  std::optional<Candidate> refine_bb(const Candidate& seed, double sign, int* iters, std::string* why) const {
    Candidate cur = seed;
    if (closed(cur)) return cur;
    const double h = window_ / std::max(opt_.grid_per_dim, 3);
    double alpha = 0.1 * h / std::max(cur.gs.norm(), 1e-300);
    for (int it = 0; it < opt_.max_refine; ++it) {
      *iters = it + 1;
      const Eigen::VectorXd step = -sign * alpha * cur.gs;
      Candidate next = evaluate(cur.s + step, &cur.orbit.x);
      if (closed(next)) return next;
      const Eigen::VectorXd ds = next.s - cur.s, dg = next.gs - cur.gs;
      const double denom = std::abs(ds.dot(dg));
      alpha = denom > 0 ? ds.squaredNorm() / denom : 2 * alpha;
      alpha = std::min(alpha, h / std::max(next.gs.norm(), 1e-300));
      cur = std::move(next);
    }
    *why = "gradient iteration did not reach the closure tolerance";
    return std::nullopt;
  }

  const OrbitProblem& prob_;
  CriticalSearchOptions opt_;
  int n_;
  Eigen::MatrixXd B_;
  mutable double window_ = 1.0;
};

}  // namespace

std::vector<OrbitSolution> find_critical_points(const OrbitProblem& prob, const CriticalSearchOptions& opt,
                                                CriticalSearchReport* report) {
  CriticalSearch search(prob, opt);
  const auto pts = search.grid_points();
  std::vector<Candidate> grid(pts.size());
  parallel_for(static_cast<int>(pts.size()), prob.options().threads,
               [&](int i) { grid[i] = search.evaluate(pts[i]); });

  CriticalSearchReport rep;
  for (const auto& c : grid) {
    rep.grid_points.push_back(search.phi0_of(c.s));
    rep.grid_actions.push_back(c.orbit.action);
  }
  int imin = 0, imax = 0;
  for (int i = 1; i < static_cast<int>(grid.size()); ++i) {
    if (grid[i].orbit.action < grid[imin].orbit.action) imin = i;
    if (grid[i].orbit.action > grid[imax].orbit.action) imax = i;
  }
  const double spread = grid[imax].orbit.action - grid[imin].orbit.action;
  const double scale = 1.0 + std::abs(grid[imin].orbit.action);
  const PeriodSetup& su = prob.setup();

  auto finish = [&](const Candidate& c, CriticalKind kind, int iters) {
    OrbitSolution s;
    s.phi_star = search.phi0_of(c.s);
    s.kind = kind;
    s.orbit = pseudo_periodic(s.phi_star, prob, &c.orbit.x, true);
    s.action_value = s.orbit.action;
    s.closure_residual = s.orbit.gradient.cwiseAbs().maxCoeff();
    s.min_period_lower_bound = minimal_period_bound(su.k_vec, su.T);
    s.refine_iterations = iters;
    s.min_period_self_distance = minimal_period_self_distance(s.orbit, prob.grid(), su.k_vec);
    return s;
  };

  std::vector<OrbitSolution> out;
  if (spread <= 1e-12 * scale) {
    rep.degenerate_family = true;
    for (int i : {0, static_cast<int>(grid.size()) / 2}) {
      out.push_back(finish(grid[i], CriticalKind::MinMaxGrid, 0));
      out.back().degenerate_family = true;
    }
    if (report) *report = std::move(rep);
    return out;
  }

  for (auto [idx, sign, kind] : {std::tuple{imin, 1.0, CriticalKind::Min}, std::tuple{imax, -1.0, CriticalKind::Max}}) {
    int iters = 0;
    std::string why;
    auto c = search.refine(grid[idx], sign, grid, &iters, &why);
    if (!c) {
      rep.dropped.push_back(to_string(kind) + ": " + why);
      continue;
    }
    OrbitSolution s = finish(*c, kind, iters);
    bool duplicate = false;
    for (const auto& o : out)
      if (distance_to_orbit(o.orbit, prob.grid(), s.orbit.state_at_node(0)) <= opt.distinct_tol) duplicate = true;
    if (duplicate) {
      rep.dropped.push_back(to_string(kind) + ": coincides with an earlier solution after a time shift");
      continue;
    }
    out.push_back(std::move(s));
  }
  if (report) *report = std::move(rep);
  if (out.size() < 2)
    fail(ErrorKind::ClosureUnmet, "critical point search returned " + std::to_string(out.size()) +
                                      " distinct solutions" +
                                      (rep.dropped.empty() ? std::string() : " (" + rep.dropped.front() + ")"));
  return out;
}

// ---------------------------------------------------------------------------------------------

ContinuationResult resonant_torus_continuation(const Eigen::VectorXd& J0, double T, const Eigen::VectorXi& k_vec,
                                               const TFSeries& H_eps, double eps, double c1,
                                               const ContinuationOptions& opt) {
  const int n = H_eps.n(), m = H_eps.m();
  if (J0.size() != n || k_vec.size() != n) fail(ErrorKind::Dimension, "continuation: J0/k size mismatch");
  if (!(eps > 0 && T > 0 && c1 > 0)) fail(ErrorKind::Invariant, "continuation: eps, T, c1 must be positive");
  if (eps * T > 1.0 / c1)
    fail(ErrorKind::PeriodRefused, "continuation refused: eps*T = " + std::to_string(eps * T) +
                                       " exceeds the window bound 1/c1 = " + std::to_string(1.0 / c1));
  const Eigen::VectorXd omega = kTwoPi * k_vec.cast<double>() / T;
  // Integrable part h(J): terms without z and without angles.
  const TFSeries h = project(H_eps, [](const TermKey& k) { return k.z_degree() == 0 && k.ell_zero(); });
  const SeriesEvaluator<double> he(h);
  const Eigen::VectorXd zero_phi = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXcd nz(0);
  std::vector<TFSeries> dh;
  for (int i = 0; i < n; ++i) dh.push_back(partial(h, Var::I, i));
  auto grad_h = [&](const Eigen::VectorXd& J) {
    Eigen::VectorXcd g;
    Eigen::VectorXcd z0 = Eigen::VectorXcd::Zero(m);
    he.eval(J, zero_phi, z0, z0, &g);
    return Eigen::VectorXd(g.segment(0, n).real());
  };
  auto hess_h = [&](const Eigen::VectorXd& J) {
    Eigen::MatrixXd Hs(n, n);
    Eigen::VectorXcd z0 = Eigen::VectorXcd::Zero(m), g;
    for (int i = 0; i < n; ++i) {
      SeriesEvaluator<double> e(dh[i]);
      e.eval(J, zero_phi, z0, z0, &g);
      Hs.row(i) = g.segment(0, n).real().transpose();
    }
    return Hs;
  };
  Eigen::VectorXd J = J0;
  for (int it = 0; it < opt.newton_iter; ++it) {
    const Eigen::VectorXd r = grad_h(J) - omega;
    if (r.cwiseAbs().maxCoeff() <= opt.newton_tol * std::max(1.0, omega.cwiseAbs().maxCoeff())) break;
    const Eigen::MatrixXd Hs = hess_h(J);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(Hs);
    if (!lu.isInvertible()) fail(ErrorKind::TwistSingular, "continuation: Hessian of h is singular");
    J -= lu.solve(r);
  }
  if ((grad_h(J) - omega).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, omega.cwiseAbs().maxCoeff()))
    fail(ErrorKind::Invariant, "continuation: Newton iteration for the resonant action did not converge");

  ContinuationResult res;
  res.J_eps = J;
  res.eps_T = eps * T;
  PeriodSetup& s = res.setup;
  s.T = T;
  s.eta = 1.0;
  s.k_vec = k_vec;
  s.I0 = J;
  s.omega_tilde = omega;
  s.M = hess_h(J);
  s.Omega_eta = Eigen::VectorXd::Zero(m);
  for (const auto& [key, c] : H_eps) {
    if (key.z_degree() != 2 || !key.a_equals_abar() || !key.ell_zero()) continue;
    double v = c.real();
    for (int i = 0; i < n; ++i) v *= std::pow(J(i), key.k(i));
    for (int j = 0; j < m; ++j)
      if (key.a(j)) s.Omega_eta(j) += v;
  }
  const auto gap = monodromy_gap(s.Omega_eta, T);
  if (!gap.invertible) fail(ErrorKind::PeriodRefused, "continuation: monodromy is singular");
  s.minv_bound = gap.minv_norm;

  OrbitProblem prob(H_eps, s, opt.orbit);
  res.solutions = find_critical_points(prob, opt.search);
  for (const auto& sol : res.solutions) res.correction_norm = std::max(res.correction_norm, sol.orbit.x.norm());
  return res;
}

}  // namespace eltor
