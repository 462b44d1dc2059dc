#include <doctest.h>

#include <numeric>
#include <random>

#include "eltor/io.hpp"
#include "eltor/resonance.hpp"

using namespace eltor;

namespace {

FrequencyData freq(std::vector<double> w, std::vector<double> W, double gamma = 1e-3, double tau = 2) {
  FrequencyData f;
  f.omega = Eigen::Map<Eigen::VectorXd>(w.data(), long(w.size()));
  f.Omega = Eigen::Map<Eigen::VectorXd>(W.data(), long(W.size()));
  f.gamma = gamma;
  f.tau = tau;
  return f;
}

ResonanceStructure structure(int n, int m, std::vector<Relation> rel) {
  ResonanceStructure rs;
  rs.n = n;
  rs.m = m;
  rs.m_hat = static_cast<int>(rel.size());
  rs.relations = std::move(rel);
  for (int j = 0; j < m; ++j) rs.reorder.push_back(j);
  return rs;
}

Eigen::VectorXi ivec(std::initializer_list<int> v) {
  Eigen::VectorXi x(static_cast<long>(v.size()));
  int i = 0;
  for (int a : v) x(i++) = a;
  return x;
}

double exact_minv(const Eigen::VectorXd& phase) {
  double worst = 0;
  for (double th : phase) worst = std::max(worst, 1.0 / std::abs(1.0 - std::polar(1.0, th)));
  return worst;
}

double dist_2piZ(double x) { return 2 * M_PI * dist_to_integers(x / (2 * M_PI)); }

FrequencyData linint_freq() {
  // omega = (1, sqrt 2), Omega_j = a_j.omega / 3
  const double s2 = std::sqrt(2.0);
  return freq({1.0, s2}, {(1 + s2) / 3, (1 + 2 * s2) / 3, (1 + 3 * s2) / 3, s2 / 3});
}

}  // namespace

TEST_CASE("wrap convention") {
  CHECK(wrap_half(-0.5) == -0.5);
  CHECK(wrap_half(0.5) == -0.5);
  CHECK(wrap_half(1.25) == doctest::Approx(0.25));
  CHECK(dist_to_integers(2.9) == doctest::Approx(0.1));
}

TEST_CASE("melnikov check") {
  const auto good = melnikov_check(freq({1.0, std::sqrt(2.0)}, {std::sqrt(3.0), std::sqrt(5.0)}), 10);
  CHECK(good.passes());

  const auto bad = melnikov_check(freq({1.0, 1.0}, {std::sqrt(3.0)}), 6);
  CHECK_FALSE(bad.passes());
  CHECK(bad.min_margin == doctest::Approx(0.0));
  CHECK(std::abs(bad.worst_ell(0)) == 1);
  CHECK(bad.worst_ell(0) == -bad.worst_ell(1));
  CHECK(bad.worst_h.cwiseAbs().sum() == 0);

  const auto first = melnikov_check(freq({1.0, std::sqrt(2.0)}, {1.0}), 6);
  CHECK_FALSE(first.passes());
  CHECK(first.worst_ell.cwiseAbs() == ivec({1, 0}));
  CHECK(first.worst_h.cwiseAbs() == ivec({1}));
  CHECK(first.worst_ell(0) == -first.worst_h(0));
}

TEST_CASE("congruence counting") {
  const std::vector<long long> a1{1};
  CHECK(count_congruence_solutions(a1, 7, 3) == 1);
  const std::vector<long long> a2{2, 3};
  CHECK(count_congruence_solutions(a2, 5, 1) == 5);
  const std::vector<long long> a3{1, 1};
  CHECK(count_congruence_solutions(a3, 1, 0) == 1);
  const std::vector<long long> bad{2, 4};
  CHECK_THROWS_AS(count_congruence_solutions(bad, 6, 1), Error);

  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const long long M = 2 + rng() % 6;
    std::vector<long long> a(3);
    do
      for (auto& x : a) x = static_cast<long long>(rng() % 20) - 10;
    while (std::gcd(std::gcd(std::gcd(a[0], a[1]), a[2]), M) != 1);
    const long long b = static_cast<long long>(rng() % M);
    std::uint64_t brute = 0;
    for (long long i = 0; i < M; ++i)
      for (long long j = 0; j < M; ++j)
        for (long long k = 0; k < M; ++k) brute += (((a[0] * i + a[1] * j + a[2] * k - b) % M) + M) % M == 0;
    CHECK(count_congruence_solutions(a, M, b) == brute);
    CHECK(brute == static_cast<std::uint64_t>(M * M));
  }
}

TEST_CASE("resonance detection") {
  const double s2 = std::sqrt(2.0);
  CHECK(detect_resonances(freq({1.0, s2}, {std::sqrt(3.0)})).m_hat == 0);

  const auto rs = detect_resonances(freq({1.0, s2}, {(1 + 2 * s2) / 3}));
  REQUIRE(rs.m_hat == 1);
  CHECK(rs.relations[0].M == 3);
  CHECK(rs.relations[0].a == ivec({1, 2}));

  const auto lin = detect_resonances(linint_freq());
  CHECK(lin.m_hat == 4);
  for (const auto& r : lin.relations) CHECK(r.M == 3);
  CHECK(lin.max_residual <= 1e-12);
}

TEST_CASE("declared relations are certified") {
  const double s2 = std::sqrt(2.0);
  const auto f = freq({1.0, s2}, {(1 + 2 * s2) / 3});
  const auto rs = certify_declared(f, {{1, 3, {1, 2}}}, 1e-12);
  CHECK(rs.m_hat == 1);
  CHECK(rs.declared);
  CHECK_THROWS_AS(certify_declared(f, {{1, 3, {1, 1}}}, 1e-12), Error);
  CHECK_THROWS_AS(certify_declared(f, {{2, 3, {1, 2}}}, 1e-12), Error);
}

TEST_CASE("non-resonant lattice point") {
  CHECK(nonresonant_lattice_point(structure(1, 1, {{2, ivec({1})}})) == ivec({1}));
  CHECK(nonresonant_lattice_point(structure(2, 2, {{2, ivec({1, 0})}, {2, ivec({0, 1})}})) == ivec({1, 1}));
  CHECK_THROWS_AS(nonresonant_lattice_point(structure(1, 1, {{1, ivec({1})}})), Error);
}

TEST_CASE("non-resonant time shift") {
  const auto f = freq({1.0}, {std::sqrt(2.0)});
  const auto rs = detect_resonances(f);
  REQUIRE(rs.m_hat == 0);
  const auto sr = nonresonant_shift(f, rs, 0.1, 0.0, 1e4);
  CHECK(dist_to_integers(sr.tau) <= 0.1);
  CHECK(dist_to_integers(std::sqrt(2.0) * sr.tau) >= 0.25);
  CHECK(sr.beta == 2.0);
  CHECK(sr.d0 == 0.25);

  // single relation with M = 1 and no elliptic component
  const double s2 = std::sqrt(2.0);
  const auto g = freq({1.0, s2}, {1 + s2});
  CHECK_THROWS_AS(nonresonant_shift(g, structure(2, 1, {{1, ivec({1, 1})}}), 0.05, 0.0, 1e4), Error);
}

TEST_CASE("condition (a)") {
  CHECK_FALSE(condition_a_violation(structure(2, 2, {{1, ivec({1, 1})}})).has_value());
  CHECK_FALSE(condition_a_violation(structure(2, 3, {})).has_value());
  const auto lin = detect_resonances(linint_freq());
  CHECK(condition_a_violation(lin).has_value());
}

TEST_CASE("lemma a certificate re-checks") {
  const auto f = freq({1.0, std::sqrt(2.0)}, {std::sqrt(3.0), std::sqrt(5.0) + 0.1});
  const auto rs = detect_resonances(f);
  Eigen::MatrixXd R(2, 2), Q(2, 2);
  R << 1.0, 0.3, 0.3, 0.8;
  Q << 0.1, 0.05, 0.02, 0.12;
  const auto c = select_period_lemma_a(f, rs, R, Q, 100.0);
  CHECK(c.T >= 100.0);
  CHECK(c.T_lo <= c.T);
  CHECK(c.T <= c.T_hi);
  const Eigen::VectorXd ph = shifted_phase(f, R, Q, c.T);
  double dmin = 1e300;
  for (double x : ph) dmin = std::min(dmin, dist_2piZ(x));
  CHECK(dmin >= M_PI * c.d0 / 2);
  CHECK(c.minv_bound == doctest::Approx(4 / (M_PI * c.d0)));
  CHECK(exact_minv(ph) <= c.minv_bound);
}

TEST_CASE("lemma b with vanishing coupling") {
  const auto f = freq({1.0}, {std::sqrt(2.0)});
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(1, 1), Q = Eigen::MatrixXd::Zero(1, 1);
  const auto c = select_period_lemma_b(f, R, Q, 50.0);
  CHECK(c.alpha == doctest::Approx(std::sqrt(2.0)));
  CHECK(c.minv_bound == doctest::Approx(2 / c.d1));
  const Eigen::VectorXd ph = shifted_phase(f, R, Q, c.T);
  CHECK(dist_2piZ(ph(0)) >= c.d1);
  CHECK(exact_minv(ph) <= c.minv_bound);
}

TEST_CASE("linint fixture is refused by both period lemmas") {
  const auto f = linint_freq();
  const auto rs = detect_resonances(f);
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd Q(4, 2);
  Q << 1, 1, 1, 2, 1, 3, 0, 1;
  Q /= 3.0;
  CHECK_THROWS_AS(select_period_lemma_a(f, rs, R, Q, 100.0), Error);
  try {
    select_period_lemma_b(f, R, Q, 100.0);
    FAIL("lemma b accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PeriodRefused);
  }
}

TEST_CASE("epsilon window") {
  const auto w = epsilon_window(10.0, 1, 1, 1, 1);
  CHECK(w.eps_lo == doctest::Approx(std::exp(-10.0)).epsilon(1e-14));
  for (double x : {1e-6, 1e-5, 1e-4, 1e-3, 1e-2}) CHECK(std::abs(G_eps(G_inverse(x)) - x) <= 1e-12 * x + 1e-18);
  const auto T0 = window_threshold(1, 1, 1, 1);
  REQUIRE(T0.has_value());
  CHECK(epsilon_window(*T0 * 0.9, 1, 1, 1, 1).empty());
  CHECK_FALSE(epsilon_window(*T0 * 1.1, 1, 1, 1, 1).empty());
}
