#include <doctest.h>

#include <random>

#include "eltor/io.hpp"
#include "eltor/orbit.hpp"
#include "support/models.hpp"

using namespace eltor;
using C = std::complex<double>;

namespace {

Eigen::VectorXi ivec(std::initializer_list<int> v) {
  Eigen::VectorXi x(static_cast<long>(v.size()));
  int i = 0;
  for (int a : v) x(i++) = a;
  return x;
}

std::shared_ptr<const TimeGrid> grid(double T, int panels = 6) { return std::make_shared<TimeGrid>(T, panels, 24); }

Field random_field(std::mt19937_64& rng, int n, int m, const TimeGrid& g) {
  std::uniform_real_distribution<double> u(-1, 1);
  Field f = Field::zero(n, m, g.size());
  // smooth random inputs: a few random Fourier modes in t
  for (int r = 0; r < n; ++r)
    for (int q = 0; q < g.size(); ++q) {
      const double t = g.t()(q) / g.T();
      f.J(r, q) = 0.0;
      f.psi(r, q) = 0.0;
      for (int h = 0; h < 3; ++h) {
        f.J(r, q) += 0.3 * std::cos(2 * M_PI * h * t + r + h);
        f.psi(r, q) += 0.3 * std::sin(2 * M_PI * (h + 1) * t - r);
      }
    }
  const double a = u(rng), b = u(rng), c = u(rng);
  f.J *= a;
  f.psi *= b;
  for (int j = 0; j < m; ++j)
    for (int q = 0; q < g.size(); ++q) f.w(j, q) = C(c, a) * std::polar(1.0, 3 * g.t()(q) / g.T() + j);
  return f;
}

// Affine map P(x) = b + eps x on every node.
class AffineMap : public PointwiseMap {
 public:
  AffineMap(Field b, double eps) : b_(std::move(b)), eps_(eps) {}
  int n() const override { return static_cast<int>(b_.J.rows()); }
  int m() const override { return static_cast<int>(b_.w.rows()); }
  void eval_node(int q, const Eigen::VectorXd& J, const Eigen::VectorXd& psi, const Eigen::VectorXcd& w,
                 Eigen::VectorXd& PJ, Eigen::VectorXd& Ppsi, Eigen::VectorXcd& Pw) const override {
    PJ = b_.J.col(q) + eps_ * J;
    Ppsi = b_.psi.col(q) + eps_ * psi;
    Pw = b_.w.col(q) + eps_ * w;
  }

 private:
  Field b_;
  double eps_;
};

NormalFormResult skeleton_normal_form(FrequencyData& f) {
  f = testing::generic_frequencies();
  auto H = testing::quadratic_part(f);
  H += TFSeries::monomial(TermKey::make(2, 2, {2, 0}, {0, 0}, {0, 0}, {0, 0}), 0.5);
  H += TFSeries::monomial(TermKey::make(2, 2, {1, 1}, {0, 0}, {0, 0}, {0, 0}), 0.2);
  H += TFSeries::monomial(TermKey::make(2, 2, {0, 2}, {0, 0}, {0, 0}, {0, 0}), 0.4);
  H += TFSeries::monomial(TermKey::make(2, 2, {1, 0}, {0, 1}, {0, 1}, {0, 0}), 0.1);
  H.set_real_flag(true);
  return averaged_normal_form(H, f, 0.2);
}

}  // namespace

TEST_CASE("resonant action") {
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(1);
  const double T = 20.5 * M_PI;
  const auto ra = resonant_action(T, 0.1, R, w);
  CHECK(ra.k(0) == 10);
  CHECK(ra.I0(0) == doctest::Approx(-2 * M_PI * 0.25 / (0.01 * T)).epsilon(1e-14));
  CHECK(ra.I0(0) == doctest::Approx(-2.4390243902439).epsilon(1e-10));
  CHECK(std::abs(ra.omega_tilde(0) * T - 20 * M_PI) <= 1e-12);

  const auto exact = resonant_action(6 * M_PI, 0.1, R, w);
  CHECK(exact.I0(0) == 0.0);
  CHECK(exact.k(0) == 3);

  // fractional part -1/2 stays at -1/2
  const auto half = resonant_action(2 * M_PI * 2.5, 0.1, R, w);
  CHECK(half.k(0) == 3);
  CHECK(half.I0(0) > 0);

  CHECK_THROWS_AS(resonant_action(10.0, 0.1, Eigen::MatrixXd::Zero(1, 1), w), Error);
}

TEST_CASE("monodromy gap") {
  const auto half = monodromy_gap(Eigen::Vector2d(M_PI, 3 * M_PI) / 2.0, 2.0);
  CHECK(half.invertible);
  CHECK(half.minv_norm == doctest::Approx(0.5));
  CHECK_FALSE(monodromy_gap(Eigen::Vector2d(1.0, M_PI), 2.0).invertible);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto g = monodromy_gap(Eigen::Vector3d(u(rng), u(rng), u(rng)), 17.0);
    CHECK(g.minv_norm <= g.stima_bound * (1 + 1e-12));
  }
}

TEST_CASE("time grid calculus") {
  const TimeGrid g(5.0, 4, 24);
  CHECK(g.t()(0) == 0.0);
  CHECK(g.t()(g.size() - 1) == doctest::Approx(5.0));
  Eigen::MatrixXd F(1, g.size()), exactI(1, g.size()), exactD(1, g.size());
  for (int q = 0; q < g.size(); ++q) {
    const double t = g.t()(q);
    F(0, q) = std::sin(3 * t) + t * t;
    exactI(0, q) = (1 - std::cos(3 * t)) / 3 + t * t * t / 3;
    exactD(0, q) = 3 * std::cos(3 * t) + 2 * t;
  }
  CHECK((g.cumulative(F) - exactI).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((g.derivative(F) - exactD).cwiseAbs().maxCoeff() <= 1e-9);
  const double s = 2.345;
  CHECK(g.interpolate(F, s)(0) == doctest::Approx(std::sin(3 * s) + s * s).epsilon(1e-12));
  const auto tg = TimeGrid::for_frequency(100.0, 2.0, 24, 8.0);
  CHECK(tg.panels() >= 25);
}

TEST_CASE("green operator closed forms") {
  const double T = 3.0;
  auto G = grid(T);
  Eigen::MatrixXd M(1, 1);
  M << 0.7;
  Eigen::VectorXd Om(1);
  Om << 1.3;
  GreenOperator L(G, M, Om);
  const int N = G->size();

  CHECK(L.apply(Field::zero(1, 1, N)).norm() == 0.0);

  const double c = 0.4;
  Field rhs = Field::zero(1, 1, N);
  rhs.J.setConstant(c);
  const Field out = L.apply(rhs);
  for (int q = 0; q < N; ++q) {
    const double t = G->t()(q);
    CHECK(out.J(0, q) == doctest::Approx(c * (t - T / 2)).epsilon(1e-12));
    CHECK(out.psi(0, q) == doctest::Approx(0.7 * c * (t * t - T * t) / 2).epsilon(1e-12));
  }
  CHECK(std::abs(out.psi(0, 0)) <= 1e-14);
  CHECK(std::abs(out.psi(0, N - 1)) <= 1e-12);

  Field rz = Field::zero(1, 1, N);
  rz.w.setConstant(C(0.5, -0.2));
  const Field oz = L.apply(rz);
  // constant forcing: z = -c/(i Omega) is the periodic solution
  const C zc = -C(0.5, -0.2) / C(0, 1.3);
  CHECK((oz.w.array() - zc).abs().maxCoeff() <= 1e-12);
  const auto res = green_residual(L, rz, oz);
  CHECK(res.w_periodicity <= 1e-12);
  CHECK(res.midpoint <= 1e-9);
}

TEST_CASE("green operator bound dominates random inputs") {
  std::mt19937_64 rng(9);
  const double T = 40.0;
  auto G = grid(T, 12);
  Eigen::MatrixXd M(2, 2);
  M << 0.02, 0.005, 0.005, 0.03;
  GreenOperator L(G, M, Eigen::Vector2d(0.9, 1.7));
  double worst = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const Field f = random_field(rng, 2, 2, *G);
    const Field out = L.apply(f);
    const auto r = green_residual(L, f, out);
    CHECK(r.psi_endpoints <= 1e-9);
    CHECK(r.w_periodicity <= 1e-9);
    CHECK(r.midpoint <= 1e-6 * (1 + out.norm()));
    worst = std::max(worst, out.norm() / f.norm());
  }
  CHECK(worst <= L.bound().rigorous);
  CHECK(L.bound().rigorous <= L.bound().displayed);

  // quadratic growth in T for fixed matrices
  const double b1 = green_norm_bound(M, Eigen::Vector2d(0.9, 1.7), 1000.0).rigorous;
  const double b2 = green_norm_bound(M, Eigen::Vector2d(0.9, 1.7), 2000.0).rigorous;
  CHECK(b2 / b1 == doctest::Approx(4.0).epsilon(0.1));
  // M = eta^2, T = 1/eta^2
  const double eta = 0.05;
  const double be = green_norm_bound(eta * eta * Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(0.9, 1.7),
                                     1 / (eta * eta)).rigorous;
  CHECK(be * eta * eta <= 20.0);
}

TEST_CASE("contraction on affine maps") {
  auto G = grid(2.0, 4);
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(1, 1);
  GreenOperator L(G, M, Eigen::VectorXd::Ones(1));
  const int N = G->size();
  ContractionOptions opt;
  opt.check_lipschitz = false;

  ContractionReport rep0;
  const Field x0 = contraction_solve(AffineMap(Field::zero(1, 1, N), 0.0), L, opt, &rep0);
  CHECK(x0.norm() == 0.0);
  CHECK(rep0.iterations <= 1);

  std::mt19937_64 rng(1);
  const Field b = random_field(rng, 1, 1, *G);
  const double eps = 0.5 / L.bound().rigorous;
  ContractionReport rep;
  const Field x = contraction_solve(AffineMap(b, eps), L, opt, &rep);
  Field neumann = L.apply(b), term = neumann;
  for (int j = 0; j < 80; ++j) {
    term = L.apply(eps * term);
    neumann += term;
  }
  CHECK((x - neumann).norm() <= 1e-12 * (1 + neumann.norm()));
  CHECK(rep.max_ratio <= 0.5 * (1 + opt.ratio_margin));
}

TEST_CASE("integer lattice helpers") {
  const auto B = quotient_lattice_basis(ivec({2, 1}));
  REQUIRE(B.cols() == 1);
  CHECK(B.col(0) == ivec({1, -2}));
  const auto E = quotient_lattice_basis(ivec({1, 0, 0}));
  REQUIRE(E.cols() == 2);
  CHECK((ivec({1, 0, 0}).transpose() * E).cwiseAbs().sum() == 0);
  CHECK(std::abs(E.bottomRows(2).cast<double>().determinant()) == doctest::Approx(1.0));
  const Eigen::VectorXi k = ivec({4, 6, 10});
  const auto Bk = quotient_lattice_basis(k);
  Eigen::MatrixXd full(3, 3);
  full << Bk.cast<double>(), (k / 2).cast<double>();
  CHECK(std::abs(full.determinant()) >= 0.5);
  CHECK((k.transpose() * Bk).cwiseAbs().sum() == 0);
  CHECK(gcd_of(ivec({4, 6})) == 2);
  CHECK(minimal_period_bound(ivec({4, 6}), 10.0) == doctest::Approx(5.0));
  CHECK(minimal_period_bound(ivec({3, 5}), 10.0) == doctest::Approx(10.0));
}

TEST_CASE("integrable skeleton: exact family and constant action") {
  FrequencyData f;
  const auto nf = skeleton_normal_form(f);
  const double eta = 0.2, T = 1 / (eta * eta) + 3.3;
  const auto su = make_period_setup(nf, f, eta, T);
  CHECK((su.omega_tilde * T / (2 * M_PI) - su.k_vec.cast<double>()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((su.Omega_eta - (f.Omega + eta * eta * nf.Q * su.I0)).cwiseAbs().maxCoeff() <= 1e-15);
  const OrbitProblem prob(nf.rescaled(eta), su);
  CHECK(prob.elliptic_subspace_invariant());

  const Eigen::Vector2d p1(0.3, -1.0), p2(2.0, 0.7);
  const auto o1 = pseudo_periodic(p1, prob, nullptr, true);
  CHECK(o1.x.norm() <= 1e-13);
  CHECK(o1.gradient.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(o1.ode_residual <= 1e-8);
  CHECK(std::abs(o1.action_imag) <= 1e-10);
  CHECK(reduced_action(p2, prob) == doctest::Approx(o1.action).epsilon(1e-12));

  CriticalSearchReport rep;
  const auto sols = find_critical_points(prob, {.grid_per_dim = 4}, &rep);
  CHECK(rep.degenerate_family);
  REQUIRE(sols.size() == 2);
  for (const auto& s : sols) CHECK(s.closure_residual <= 1e-12);
}

TEST_CASE("gradient matches finite differences on the bundled model") {
  const auto md = load_model(std::string(ELTOR_DATA_DIR) + "/model_n2m2.json");
  const double eta = 0.1;
  const auto nf = averaged_normal_form(md.H, md.freq, eta);
  const auto cert = select_period_lemma_a(md.freq, detect_resonances(md.freq), nf.R, nf.Q, 1 / (eta * eta));
  const auto su = make_period_setup(nf, md.freq, eta, cert.T, cert.minv_bound);
  const OrbitProblem prob(nf.rescaled(eta), su);
  const Eigen::Vector2d p0(0.4, -0.9);
  const auto g = action_gradient(p0, prob);
  Eigen::Vector2d fd;
  const double h = 1e-3;
  for (int i = 0; i < 2; ++i) {
    Eigen::Vector2d a = p0, b = p0;
    a(i) += h;
    b(i) -= h;
    fd(i) = (reduced_action(a, prob) - reduced_action(b, prob)) / (2 * h);
  }
  CHECK((g - fd).norm() <= 1e-5 * g.norm());
  CHECK(std::abs(su.omega_tilde.dot(g)) <= 1e-3 * std::pow(eta, 3) * (1 + g.norm()));
}
