#include <doctest.h>

#include <random>

#include "eltor/tfseries.hpp"
#include "support/models.hpp"

using namespace eltor;
using C = std::complex<double>;

namespace {

double max_abs_coeff(const TFSeries& f) {
  double m = 0;
  for (const auto& [k, c] : f) m = std::max(m, std::abs(c));
  return m;
}

TFSeries angle_exp(int n, int m, std::initializer_list<int> ell) {
  std::vector<int> l(ell);
  TermKey key(n, m);
  for (int i = 0; i < n; ++i) key.ell_ref(i) = static_cast<std::int8_t>(l[i]);
  return TFSeries::monomial(key, 1.0);
}

}  // namespace

TEST_CASE("term key degree and conjugation") {
  const auto key = TermKey::make(2, 1, {1, 2}, {3}, {0}, {-1, 4});
  CHECK(key.degree() == 2 * 3 + 3);
  CHECK(key.ell_norm1() == 5);
  const auto c = key.conjugate();
  CHECK(c.a(0) == 0);
  CHECK(c.abar(0) == 3);
  CHECK(c.ell(0) == 1);
  CHECK(c.ell(1) == -4);
  CHECK(c.conjugate() == key);
  CHECK_THROWS_AS(TermKey::make(1, 0, {-1}, {}, {}, {0}), Error);
}

TEST_CASE("caps and canonical form") {
  SeriesCaps caps{4, 2, 1e-15};
  auto f = TFSeries::action(1, 1, 0, caps);
  auto g = f * f * f;  // degree 6 > cap
  CHECK(g.empty());
  CHECK(g.truncation_loss() > 0);
  auto h = f * f;
  REQUIRE(h.size() == 1);
  CHECK(h.coeff(TermKey::make(1, 1, {2}, {0}, {0}, {0})) == C(1));
  auto zero = f - f;
  CHECK(zero.empty());
  auto e3 = angle_exp(1, 1, {3}).with_caps(caps);
  CHECK(e3.empty());
}

TEST_CASE("monomial multiplication keeps reality") {
  const auto z = TFSeries::z(1, 1, 0), zb = TFSeries::zbar(1, 1, 0);
  auto p = z * zb;
  REQUIRE(p.size() == 1);
  CHECK(p.coeff(TermKey::make(1, 1, {0}, {1}, {1}, {0})) == C(1));
  auto zz = z + zb;
  zz.set_real_flag(true);
  auto sq = zz * zz;
  sq.set_real_flag(true);
  CHECK(check_reality(sq).max_violation == doctest::Approx(0.0));
  auto f = TFSeries::action(1, 1, 0) + TFSeries::constant(1, 1, 2.0);
  CHECK((f + TFSeries(1, 1)).terms() == f.terms());
}

TEST_CASE("bracket closed forms") {
  // {e^{i phi}, I} = i e^{i phi}
  const auto e = angle_exp(1, 0, {1});
  const auto I = TFSeries::action(1, 0, 0);
  const auto b = poisson_bracket(e, I);
  REQUIRE(b.size() == 1);
  CHECK(std::abs(b.coeff(TermKey::make(1, 0, {0}, {}, {}, {1})) - C(0, 1)) < 1e-15);

  // {z zbar, z} = -i z
  const auto z = TFSeries::z(0, 1, 0), zb = TFSeries::zbar(0, 1, 0);
  const auto b2 = poisson_bracket(z * zb, z);
  REQUIRE(b2.size() == 1);
  CHECK(std::abs(b2.coeff(TermKey::make(0, 1, {}, {1}, {0}, {})) - C(0, -1)) < 1e-15);
}

TEST_CASE("bracket antisymmetry, Leibniz and Jacobi on random series") {
  std::mt19937_64 rng(11);
  const SeriesCaps wide{14, 12, 0.0};
  for (int rep = 0; rep < 5; ++rep) {
    const auto f = testing::random_real_series(rng, 2, 1, 2, 4, 2, 6, 1.0, wide);
    const auto g = testing::random_real_series(rng, 2, 1, 2, 4, 2, 6, 1.0, wide);
    const auto h = testing::random_real_series(rng, 2, 1, 2, 4, 2, 6, 1.0, wide);
    CHECK(poisson_bracket(f, f).empty());
    CHECK(max_abs_coeff(poisson_bracket(f, g) + poisson_bracket(g, f)) <= 1e-12);
    const auto leib = poisson_bracket(f, g * h) - (poisson_bracket(f, g) * h + g * poisson_bracket(f, h));
    CHECK(max_abs_coeff(leib) <= 1e-12 * (1 + max_abs_coeff(f * g * h)));
    const auto jac = poisson_bracket(f, poisson_bracket(g, h)) + poisson_bracket(g, poisson_bracket(h, f)) +
                     poisson_bracket(h, poisson_bracket(f, g));
    CHECK(max_abs_coeff(jac) <= 1e-11);
  }
}

TEST_CASE("projection") {
  const int n = 2, m = 1;
  auto quad_action = TFSeries::monomial(TermKey::make(n, m, {1, 1}, {0}, {0}, {0, 0}), 1.0);
  auto cubic = TFSeries::monomial(TermKey::make(n, m, {0, 0}, {2}, {1}, {1, 0}), 1.0);
  auto f = quad_action + cubic;
  CHECK(project(f, [](const TermKey&) { return true; }).terms() == f.terms());
  CHECK(project(f, [](const TermKey&) { return false; }).empty());
  auto s = project(f, [](const TermKey& k) { return k.k_norm() == 2 && k.z_degree() == 0 && k.ell_zero(); });
  REQUIRE(s.size() == 1);
  CHECK(s.terms()[0].first == quad_action.terms()[0].first);
}

TEST_CASE("reality check") {
  const auto k1 = TermKey::make(1, 1, {0}, {1}, {0}, {2});
  SeriesBuilder<double> b(1, 1, {});
  b.add(k1, 1.0);
  b.add(k1.conjugate(), 1.0);
  CHECK(check_reality(std::move(b).finish()).max_violation == doctest::Approx(0.0));
  SeriesBuilder<double> b2(1, 1, {});
  b2.add(k1, 1.0);
  b2.add(k1.conjugate(), C(1, 1));
  CHECK(check_reality(std::move(b2).finish()).max_violation == doctest::Approx(1.0));
}

TEST_CASE("evaluation") {
  Eigen::VectorXd I(1), phi(1);
  I << 2;
  phi << M_PI / 2;
  Eigen::VectorXcd z(0);
  const auto f = TFSeries::action(1, 0, 0) * angle_exp(1, 0, {1});
  CHECK(std::abs(evaluate(f, I, phi, z) - C(0, 2)) < 1e-14);
  CHECK(evaluate(TFSeries::constant(1, 0, 3.5), I, phi, z) == C(3.5));

  Eigen::VectorXd e0(0);
  Eigen::VectorXcd z1(1);
  z1 << C(1, 1);
  const auto zz = TFSeries::z(0, 1, 0) * TFSeries::zbar(0, 1, 0);
  CHECK(std::abs(evaluate(zz, e0, e0, z1) - C(2)) < 1e-14);
}

TEST_CASE("evaluator gradient matches symbolic partials") {
  std::mt19937_64 rng(3);
  const auto f = testing::random_real_series(rng, 2, 2, 2, 6, 3, 40);
  SeriesEvaluator<double> ev(f);
  Eigen::VectorXd I(2), phi(2);
  I << 0.3, -0.2;
  phi << 1.1, -0.4;
  Eigen::VectorXcd z(2);
  z << C(0.2, -0.1), C(-0.3, 0.25);
  const Eigen::VectorXcd zb = z.conjugate();
  Eigen::VectorXcd grad;
  const C v = ev.eval(I, phi, z, zb, &grad);
  CHECK(std::abs(v - evaluate(f, I, phi, z)) < 1e-13);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(grad(i) - evaluate(partial(f, Var::I, i), I, phi, z)) < 1e-12);
    CHECK(std::abs(grad(2 + i) - evaluate(partial(f, Var::Phi, i), I, phi, z)) < 1e-12);
    CHECK(std::abs(grad(4 + i) - evaluate(partial(f, Var::Z, i), I, phi, z)) < 1e-12);
    CHECK(std::abs(grad(6 + i) - evaluate(partial(f, Var::Zbar, i), I, phi, z)) < 1e-12);
  }
  CHECK(std::abs(v.imag()) < 1e-13);
}

TEST_CASE("hamiltonian vector field") {
  // H = omega.I gives phi_dot = omega, everything else zero.
  auto H = 1.5 * TFSeries::action(2, 0, 0) + 0.5 * TFSeries::action(2, 0, 1);
  H.set_real_flag(true);
  const auto X = hamiltonian_vector_field(H);
  CHECK(X.I_dot[0].empty());
  CHECK(X.phi_dot[0].coeff(TermKey(2, 0)) == C(1.5));
  CHECK(X.phi_dot[1].coeff(TermKey(2, 0)) == C(0.5));

  // H = Omega z zbar gives z_dot = i Omega z.
  auto Hz = 2.0 * (TFSeries::z(0, 1, 0) * TFSeries::zbar(0, 1, 0));
  Hz.set_real_flag(true);
  const auto Xz = hamiltonian_vector_field(Hz);
  CHECK(std::abs(Xz.z_dot[0].coeff(TermKey::make(0, 1, {}, {1}, {0}, {})) - C(0, 2)) < 1e-15);

  // H = (e^{i phi} + e^{-i phi}) I: I_dot = (i e^{-i phi} - i e^{i phi}) I
  auto Hc = (angle_exp(1, 0, {1}) + angle_exp(1, 0, {-1})) * TFSeries::action(1, 0, 0);
  Hc.set_real_flag(true);
  const auto Xc = hamiltonian_vector_field(Hc);
  CHECK(std::abs(Xc.I_dot[0].coeff(TermKey::make(1, 0, {1}, {}, {}, {1})) - C(0, -1)) < 1e-15);
  CHECK(std::abs(Xc.I_dot[0].coeff(TermKey::make(1, 0, {1}, {}, {}, {-1})) - C(0, 1)) < 1e-15);

  auto not_real = TFSeries::z(0, 1, 0);
  CHECK_THROWS_AS(hamiltonian_vector_field(not_real), Error);
}

TEST_CASE("sup-Fourier norm") {
  CHECK(sup_fourier_norm(TFSeries(2, 0), 1.0, 1.0, 1.0) == 0.0);
  const auto f = TFSeries::monomial(TermKey::make(2, 0, {1, 0}, {}, {}, {1, 0}), 2.0);
  CHECK(sup_fourier_norm(f, 0.5, 1.0, 1.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-14));
  CHECK(sup_fourier_norm(C(0, -3) * f, 0.5, 1.0, 1.0) ==
        doctest::Approx(3 * std::exp(1.0)).epsilon(1e-14));
}

TEST_CASE("rescaling weights by degree") {
  const int n = 1, m = 1;
  auto f = TFSeries::monomial(TermKey::make(n, m, {2}, {0}, {0}, {0}), 1.0) +
           TFSeries::monomial(TermKey::make(n, m, {1}, {0}, {0}, {0}), 1.0) +
           TFSeries::monomial(TermKey::make(n, m, {0}, {1}, {1}, {0}), 1.0) +
           TFSeries::monomial(TermKey::make(n, m, {0}, {2}, {1}, {0}), 1.0);
  const auto r = rescale(f, 0.1);
  CHECK(r.coeff(TermKey::make(n, m, {2}, {0}, {0}, {0})).real() == doctest::Approx(0.01));
  CHECK(r.coeff(TermKey::make(n, m, {1}, {0}, {0}, {0})).real() == doctest::Approx(1.0));
  CHECK(r.coeff(TermKey::make(n, m, {0}, {1}, {1}, {0})).real() == doctest::Approx(1.0));
  CHECK(r.coeff(TermKey::make(n, m, {0}, {2}, {1}, {0})).real() == doctest::Approx(0.1));
}
