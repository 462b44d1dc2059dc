#include <doctest.h>

#include <random>

#include "eltor/io.hpp"
#include "eltor/normalform.hpp"
#include "support/models.hpp"

using namespace eltor;
using C = std::complex<double>;

namespace {

const std::string data_dir = ELTOR_DATA_DIR;

TFSeries term(int n, int m, std::initializer_list<int> k, std::initializer_list<int> a,
              std::initializer_list<int> ab, std::initializer_list<int> l, C c) {
  return TFSeries::monomial(TermKey::make(n, m, k, a, ab, l), c);
}

TFSeries real(TFSeries f) {
  f.set_real_flag(true);
  return f;
}

FrequencyData one_one() {
  FrequencyData f;
  f.omega = Eigen::VectorXd::Ones(1);
  f.Omega = Eigen::VectorXd::Constant(1, std::sqrt(2.0));
  return f;
}

}  // namespace

TEST_CASE("resonant set membership") {
  CHECK(resonant_set_member(TermKey::make(2, 2, {0, 0}, {2, 0}, {0, 1}, {1, -3})) == ResonantClass::S1);
  CHECK(resonant_set_member(TermKey::make(2, 2, {1, 0}, {0, 1}, {0, 1}, {0, 0})) == ResonantClass::S2_1);
  CHECK(resonant_set_member(TermKey::make(2, 2, {1, 0}, {0, 1}, {0, 0}, {2, 1})) == ResonantClass::None);
  CHECK(in_eliminated_class(TermKey::make(2, 2, {1, 0}, {0, 1}, {0, 0}, {2, 1})));
  CHECK(resonant_set_member(TermKey::make(2, 2, {1, 1}, {0, 0}, {0, 0}, {0, 0})) == ResonantClass::S2_2);
  CHECK(resonant_set_member(TermKey::make(2, 2, {0, 1}, {0, 0}, {0, 0}, {0, 0})) == ResonantClass::None);
  CHECK(eta_exponent(TermKey::make(1, 1, {2}, {0}, {0}, {0})) == 2);
  CHECK(eta_exponent(TermKey::make(1, 1, {0}, {2}, {1}, {0})) == 1);
  CHECK(eta_exponent(TermKey::make(1, 1, {1}, {0}, {0}, {0})) == 0);
}

TEST_CASE("generating function closed form") {
  const auto f = one_one();
  const auto F = term(1, 1, {1}, {1}, {0}, {0}, 1.0);
  const auto chi = build_generating_function(F, f, 1, {});
  REQUIRE(chi.size() == 1);
  CHECK(std::abs(chi.coeff(TermKey::make(1, 1, {1}, {1}, {0}, {0})) - C(0, -1 / std::sqrt(2.0))) < 1e-15);

  // keys in the resonant set get no generating-function coefficient
  const auto S = term(1, 1, {1}, {1}, {1}, {0}, 1.0);
  CHECK(build_generating_function(S, f, 2, {}).empty());
}

TEST_CASE("small divisor is refused") {
  FrequencyData f;
  f.omega = Eigen::VectorXd::Ones(1);
  f.Omega = Eigen::VectorXd::Constant(1, 2.0);
  // omega.ell + Omega = -2 + 2 = 0 for ell = -2
  const auto F = term(1, 1, {1}, {1}, {0}, {-2}, 1.0);
  try {
    build_generating_function(F, f, 1, {});
    FAIL("expected a small-divisor error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SmallDivisor);
  }
}

TEST_CASE("lie series identities") {
  std::mt19937_64 rng(4);
  const auto H = testing::random_model(rng, testing::generic_frequencies(), 2, 10, 0.3);
  CHECK(lie_series(H, TFSeries(2, 2, H.caps())).terms() == H.terms());

  // first order: [H]_1 = R1 + {H0, chi1} keeps only the S1 part of R1
  const auto f = testing::generic_frequencies();
  const auto H0 = testing::quadratic_part(f);
  const auto R1 = testing::random_real_series(rng, 2, 2, 3, 3, 2, 8);
  const auto chi = build_generating_function(R1, f, 1, {});
  const auto lhs = degree_slice(lie_series(H0 + R1, chi), 3);
  const auto rhs = project(R1, [](const TermKey& k) { return resonant_set_member(k) == ResonantClass::S1; });
  double err = 0;
  for (const auto& [k, c] : lhs - rhs) err = std::max(err, std::abs(c));
  CHECK(err <= 1e-13);
}

TEST_CASE("twist matrix fixtures") {
  FrequencyData f;
  f.omega = Eigen::Vector2d(1.0, std::sqrt(2.0));
  f.Omega = Eigen::VectorXd::Constant(1, std::sqrt(3.0));
  auto H = testing::quadratic_part(f) + term(2, 1, {2, 0}, {0}, {0}, {0, 0}, 0.7) +
           term(2, 1, {1, 1}, {0}, {0}, {0, 0}, -0.2) + term(2, 1, {0, 2}, {0}, {0}, {0, 0}, 0.4);
  H = real(H);
  const auto R = compute_twist_matrix(H, f).value;
  Eigen::Matrix2d expect;
  expect << 1.4, -0.2, -0.2, 0.8;
  CHECK((R - expect).cwiseAbs().maxCoeff() == 0.0);

  const auto intera = load_model(data_dir + "/intera.json");
  CHECK(std::abs(compute_twist_matrix(intera.H, intera.freq).value(0, 0)) <= 1e-12);
}

TEST_CASE("cross term shifts the twist by its divisor sums") {
  const auto f = one_one();
  const double c = 0.3;
  auto H = testing::quadratic_part(f) + term(1, 1, {1}, {1}, {0}, {1}, c) + term(1, 1, {1}, {0}, {1}, {-1}, c);
  H = real(H);
  // only l = 1 has both partners present: -(c c + c c) / (omega + Omega)
  const double expect = -(2 * c * c) / (1.0 + std::sqrt(2.0));
  CHECK(compute_twist_matrix(H, f).value(0, 0) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("coupling matrix fixtures") {
  auto f = testing::generic_frequencies();
  auto H = real(testing::quadratic_part(f) + term(2, 2, {0, 1}, {1, 0}, {1, 0}, {0, 0}, 0.25));
  const auto Q = compute_coupling_matrix(H, f).value;
  CHECK(Q(0, 1) == doctest::Approx(0.25));
  CHECK(std::abs(Q(0, 0)) + std::abs(Q(1, 0)) + std::abs(Q(1, 1)) == 0.0);

  const auto lin = load_model(data_dir + "/linint.json");
  const auto Ql = compute_coupling_matrix(lin.H, lin.freq).value;
  Eigen::MatrixXd expect(4, 2);
  expect << 1, 1, 1, 2, 1, 3, 0, 1;
  expect /= 3.0;
  CHECK((Ql - expect).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("averaging on a model already in normal form") {
  const auto f = testing::generic_frequencies();
  auto H = real(testing::quadratic_part(f) + term(2, 2, {2, 0}, {0, 0}, {0, 0}, {0, 0}, 0.5) +
                term(2, 2, {0, 2}, {0, 0}, {0, 0}, {0, 0}, 0.5) + term(2, 2, {1, 0}, {0, 1}, {0, 1}, {0, 0}, 0.1));
  const auto nf = averaged_normal_form(H, f, 0.1);
  for (const auto& chi : nf.chi) CHECK(chi.empty());
  CHECK(nf.H_avg.terms() == H.terms());
  CHECK(nf.R(0, 0) == doctest::Approx(1.0));
  CHECK(nf.Q(1, 0) == doctest::Approx(0.1));
}

TEST_CASE("averaging removes the eliminated classes on a generic model") {
  std::mt19937_64 rng(8);
  const auto f = testing::generic_frequencies();
  const auto H = testing::random_model(rng, f, 2, 60, 0.2);
  const auto nf = averaged_normal_form(H, f, 0.1);
  CHECK(nf.diag.eliminated_residual <= 1e-10);
  CHECK(nf.diag.R_slice_vs_direct <= 1e-12);
  CHECK(nf.diag.Q_slice_vs_direct <= 1e-12);
  CHECK(nf.diag.R_asymmetry <= 1e-12);
  CHECK(nf.diag.R_imag <= 1e-12);
  CHECK(nf.H_avg.real_flagged());
  for (const auto& [k, c] : nf.H_avg)
    if (k.degree() >= 3 && k.degree() <= 5) CHECK_FALSE(in_eliminated_class(k));

  const auto intera = load_model(data_dir + "/intera.json");
  const auto nfi = averaged_normal_form(intera.H, intera.freq, 0.1);
  CHECK(std::abs(nfi.R(0, 0)) <= 1e-10);
  for (const auto& [k, c] : nfi.H_avg)
    if (k.k_norm() >= 1 && k.z_degree() == 1) CHECK(std::abs(c) <= 1e-12);
}
