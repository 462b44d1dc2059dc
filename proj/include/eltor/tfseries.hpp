#pragma once

// Truncated Taylor-Fourier series in n actions I, n angles phi and m complex pairs (z, zbar).
//
// A term is  c * I^k * z^a * zbar^abar * exp(i ell.phi).  Terms are graded by the weighted
// degree d = 2|k| + |a + abar| and truncated at a degree cap and an l1 Fourier cap.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "eltor/errors.hpp"

namespace eltor {

inline constexpr int kMaxKeySlots = 24;

// Exponent key laid out as [k | a | abar | ell] inside a fixed array.
struct TermKey {
  std::int8_t n = 0;
  std::int8_t m = 0;
  std::array<std::int8_t, kMaxKeySlots> e{};

  TermKey() = default;
  TermKey(int n_, int m_) : n(static_cast<std::int8_t>(n_)), m(static_cast<std::int8_t>(m_)) {
    if (n_ < 0 || m_ < 0 || 2 * n_ + 2 * m_ > kMaxKeySlots)
      fail(ErrorKind::Dimension, "TermKey: unsupported dimensions n=" + std::to_string(n_) +
                                     " m=" + std::to_string(m_));
  }

  static TermKey make(int n, int m, std::span<const int> k, std::span<const int> a,
                      std::span<const int> abar, std::span<const int> ell) {
    TermKey key(n, m);
    auto put = [&](std::span<const int> src, int off, int len, const char* what) {
      if (src.empty()) return;
      if (static_cast<int>(src.size()) != len)
        fail(ErrorKind::Dimension, std::string("TermKey: wrong length for ") + what);
      for (int i = 0; i < len; ++i) {
        if (src[i] < -127 || src[i] > 127) fail(ErrorKind::Parse, "TermKey: exponent out of range");
        key.e[off + i] = static_cast<std::int8_t>(src[i]);
      }
    };
    put(k, 0, n, "k");
    put(a, n, m, "a");
    put(abar, n + m, m, "abar");
    put(ell, n + 2 * m, n, "ell");
    for (int i = 0; i < n + 2 * m; ++i)
      if (key.e[i] < 0) fail(ErrorKind::Parse, "TermKey: negative Taylor exponent");
    return key;
  }
  static TermKey make(int n, int m, std::initializer_list<int> k, std::initializer_list<int> a,
                      std::initializer_list<int> abar, std::initializer_list<int> ell) {
    return make(n, m, std::span<const int>(k.begin(), k.size()),
                std::span<const int>(a.begin(), a.size()),
                std::span<const int>(abar.begin(), abar.size()),
                std::span<const int>(ell.begin(), ell.size()));
  }

  int k(int i) const { return e[i]; }
  int a(int j) const { return e[n + j]; }
  int abar(int j) const { return e[n + m + j]; }
  int ell(int i) const { return e[n + 2 * m + i]; }
  std::int8_t& k_ref(int i) { return e[i]; }
  std::int8_t& a_ref(int j) { return e[n + j]; }
  std::int8_t& abar_ref(int j) { return e[n + m + j]; }
  std::int8_t& ell_ref(int i) { return e[n + 2 * m + i]; }

  int k_norm() const {
    int s = 0;
    for (int i = 0; i < n; ++i) s += k(i);
    return s;
  }
  int z_degree() const {
    int s = 0;
    for (int j = 0; j < m; ++j) s += a(j) + abar(j);
    return s;
  }
  int degree() const { return 2 * k_norm() + z_degree(); }
  int ell_norm1() const {
    int s = 0;
    for (int i = 0; i < n; ++i) s += std::abs(ell(i));
    return s;
  }
  bool ell_zero() const { return ell_norm1() == 0; }
  bool a_equals_abar() const {
    for (int j = 0; j < m; ++j)
      if (a(j) != abar(j)) return false;
    return true;
  }

  // Partner key under complex conjugation: (k, abar, a, -ell).
  TermKey conjugate() const {
    TermKey c = *this;
    for (int j = 0; j < m; ++j) std::swap(c.a_ref(j), c.abar_ref(j));
    for (int i = 0; i < n; ++i) c.ell_ref(i) = static_cast<std::int8_t>(-ell(i));
    return c;
  }

  auto operator<=>(const TermKey&) const = default;
  bool operator==(const TermKey&) const = default;

  std::string str() const;
};

struct TermKeyHash {
  std::size_t operator()(const TermKey& key) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::uint8_t b) {
      h ^= b;
      h *= 1099511628211ull;
    };
    mix(static_cast<std::uint8_t>(key.n));
    mix(static_cast<std::uint8_t>(key.m));
    const int len = 2 * key.n + 2 * key.m;
    for (int i = 0; i < len; ++i) mix(static_cast<std::uint8_t>(key.e[i]));
    return static_cast<std::size_t>(h);
  }
};

inline std::string TermKey::str() const {
  auto vec = [&](int off, int len) {
    std::string s = "(";
    for (int i = 0; i < len; ++i) s += (i ? "," : "") + std::to_string(int(e[off + i]));
    return s + ")";
  };
  return "k=" + vec(0, n) + " a=" + vec(n, m) + " abar=" + vec(n + m, m) + " ell=" + vec(n + 2 * m, n);
}

struct SeriesCaps {
  int degree = 6;
  int fourier = 8;
  double drop_tol = 1e-15;

  bool admits(const TermKey& key) const { return key.degree() <= degree && key.ell_norm1() <= fourier; }
  static SeriesCaps meet(const SeriesCaps& x, const SeriesCaps& y) {
    return {std::min(x.degree, y.degree), std::min(x.fourier, y.fourier), std::max(x.drop_tol, y.drop_tol)};
  }
};

template <class Real>
class BasicTFSeries;

// Accumulates terms into a hash map and produces a canonical sorted series.
template <class Real>
class SeriesBuilder {
 public:
  using Scalar = std::complex<Real>;

  SeriesBuilder(int n, int m, SeriesCaps caps) : n_(n), m_(m), caps_(caps) {}

  void add(const TermKey& key, const Scalar& c) {
    if (c == Scalar(0)) return;
    if (!caps_.admits(key)) {
      ++lost_;
      return;
    }
    acc_[key] += c;
  }
  void add_loss(std::size_t k) { lost_ += k; }

  BasicTFSeries<Real> finish(bool real_flag = false) &&;

 private:
  int n_, m_;
  SeriesCaps caps_;
  std::size_t lost_ = 0;
  std::unordered_map<TermKey, Scalar, TermKeyHash> acc_;
};

template <class Real>
class BasicTFSeries {
 public:
  using Scalar = std::complex<Real>;
  using Term = std::pair<TermKey, Scalar>;

  BasicTFSeries() = default;
  BasicTFSeries(int n, int m, SeriesCaps caps = {}) : n_(n), m_(m), caps_(caps) { TermKey check(n, m); }

  int n() const { return n_; }
  int m() const { return m_; }
  const SeriesCaps& caps() const { return caps_; }
  const std::vector<Term>& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }
  bool empty() const { return terms_.empty(); }
  bool real_flagged() const { return real_; }
  void set_real_flag(bool r) { real_ = r; }
  std::size_t truncation_loss() const { return lost_; }
  void add_truncation_loss(std::size_t k) { lost_ += k; }

  auto begin() const { return terms_.begin(); }
  auto end() const { return terms_.end(); }

  Scalar coeff(const TermKey& key) const {
    auto it = std::lower_bound(terms_.begin(), terms_.end(), key,
                               [](const Term& t, const TermKey& k) { return t.first < k; });
    return (it != terms_.end() && it->first == key) ? it->second : Scalar(0);
  }

  int max_degree() const {
    int d = 0;
    for (const auto& t : terms_) d = std::max(d, t.first.degree());
    return d;
  }

  SeriesBuilder<Real> builder() const { return SeriesBuilder<Real>(n_, m_, caps_); }

  // Same data under different caps; terms beyond the new caps are counted as lost.
  BasicTFSeries with_caps(SeriesCaps caps) const {
    SeriesBuilder<Real> b(n_, m_, caps);
    for (const auto& [k, c] : terms_) b.add(k, c);
    auto r = std::move(b).finish(real_);
    r.lost_ += lost_;
    return r;
  }

  static BasicTFSeries constant(int n, int m, Scalar c, SeriesCaps caps = {}) {
    SeriesBuilder<Real> b(n, m, caps);
    b.add(TermKey(n, m), c);
    return std::move(b).finish(c.imag() == Real(0));
  }
  static BasicTFSeries monomial(const TermKey& key, Scalar c, SeriesCaps caps = {}) {
    SeriesBuilder<Real> b(key.n, key.m, caps);
    b.add(key, c);
    return std::move(b).finish(false);
  }
  static BasicTFSeries action(int n, int m, int i, SeriesCaps caps = {}) {
    TermKey key(n, m);
    key.k_ref(i) = 1;
    auto s = monomial(key, 1, caps);
    s.real_ = true;
    return s;
  }
  static BasicTFSeries z(int n, int m, int j, SeriesCaps caps = {}) {
    TermKey key(n, m);
    key.a_ref(j) = 1;
    return monomial(key, 1, caps);
  }
  static BasicTFSeries zbar(int n, int m, int j, SeriesCaps caps = {}) {
    TermKey key(n, m);
    key.abar_ref(j) = 1;
    return monomial(key, 1, caps);
  }

 private:
  friend class SeriesBuilder<Real>;
  int n_ = 0, m_ = 0;
  SeriesCaps caps_{};
  bool real_ = false;
  std::size_t lost_ = 0;
  std::vector<Term> terms_;
};

template <class Real>
BasicTFSeries<Real> SeriesBuilder<Real>::finish(bool real_flag) && {
  BasicTFSeries<Real> s(n_, m_, caps_);
  s.terms_.reserve(acc_.size());
  for (const auto& [k, c] : acc_)
    if (std::abs(c) > caps_.drop_tol) s.terms_.emplace_back(k, c);
  std::sort(s.terms_.begin(), s.terms_.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  s.real_ = real_flag;
  s.lost_ = lost_;
  return s;
}

using TFSeries = BasicTFSeries<double>;

// ---------------------------------------------------------------------------------------------
// Ring arithmetic.

namespace detail {
template <class Real>
void require_same_shape(const BasicTFSeries<Real>& f, const BasicTFSeries<Real>& g, const char* op) {
  if (f.n() != g.n() || f.m() != g.m())
    fail(ErrorKind::Dimension, std::string(op) + ": dimension mismatch (" + std::to_string(f.n()) + "," +
                                   std::to_string(f.m()) + ") vs (" + std::to_string(g.n()) + "," +
                                   std::to_string(g.m()) + ")");
}

// Key of the product monomial, or false if an ell entry overflows int8.
inline TermKey add_keys(const TermKey& x, const TermKey& y) {
  TermKey r = x;
  const int len = 2 * x.n + 2 * x.m;
  for (int i = 0; i < len; ++i) r.e[i] = static_cast<std::int8_t>(x.e[i] + y.e[i]);
  return r;
}
}  // namespace detail

template <class Real>
BasicTFSeries<Real> operator+(const BasicTFSeries<Real>& f, const BasicTFSeries<Real>& g) {
  detail::require_same_shape(f, g, "add");
  SeriesBuilder<Real> b(f.n(), f.m(), SeriesCaps::meet(f.caps(), g.caps()));
  for (const auto& [k, c] : f) b.add(k, c);
  for (const auto& [k, c] : g) b.add(k, c);
  b.add_loss(f.truncation_loss() + g.truncation_loss());
  return std::move(b).finish(f.real_flagged() && g.real_flagged());
}

template <class Real>
BasicTFSeries<Real> operator*(const std::complex<Real>& s, const BasicTFSeries<Real>& f) {
  SeriesBuilder<Real> b(f.n(), f.m(), f.caps());
  if (s != std::complex<Real>(0))
    for (const auto& [k, c] : f) b.add(k, s * c);
  b.add_loss(f.truncation_loss());
  return std::move(b).finish(f.real_flagged() && s.imag() == Real(0));
}

template <class Real>
BasicTFSeries<Real> operator*(Real s, const BasicTFSeries<Real>& f) {
  return std::complex<Real>(s) * f;
}

template <class Real>
BasicTFSeries<Real> operator-(const BasicTFSeries<Real>& f, const BasicTFSeries<Real>& g) {
  return f + Real(-1) * g;
}

template <class Real>
BasicTFSeries<Real> operator-(const BasicTFSeries<Real>& f) {
  return Real(-1) * f;
}

template <class Real>
BasicTFSeries<Real> operator*(const BasicTFSeries<Real>& f, const BasicTFSeries<Real>& g) {
  detail::require_same_shape(f, g, "mul");
  const SeriesCaps caps = SeriesCaps::meet(f.caps(), g.caps());
  SeriesBuilder<Real> b(f.n(), f.m(), caps);
  for (const auto& [kf, cf] : f) {
    const int df = kf.degree();
    for (const auto& [kg, cg] : g) {
      if (df + kg.degree() > caps.degree) {
        b.add_loss(1);
        continue;
      }
      b.add(detail::add_keys(kf, kg), cf * cg);
    }
  }
  b.add_loss(f.truncation_loss() + g.truncation_loss());
  return std::move(b).finish(f.real_flagged() && g.real_flagged());
}

template <class Real>
BasicTFSeries<Real>& operator+=(BasicTFSeries<Real>& f, const BasicTFSeries<Real>& g) {
  return f = f + g;
}

// Keeps the terms whose key satisfies pred.
template <class Real, class Pred>
BasicTFSeries<Real> project(const BasicTFSeries<Real>& f, Pred&& pred) {
  SeriesBuilder<Real> b(f.n(), f.m(), f.caps());
  for (const auto& [k, c] : f)
    if (pred(k)) b.add(k, c);
  return std::move(b).finish(f.real_flagged());
}

// Terms of weighted degree exactly d.
template <class Real>
BasicTFSeries<Real> degree_slice(const BasicTFSeries<Real>& f, int d) {
  return project(f, [d](const TermKey& k) { return k.degree() == d; });
}

// ---------------------------------------------------------------------------------------------
// Poisson bracket
//   {f,g} = d_phi f . d_I g - d_I f . d_phi g + i (d_z f . d_zbar g - d_zbar f . d_z g)
// evaluated monomial-by-monomial:
//   {c1 m1, c2 m2} = i c1 c2 [ sum_i (l_i k'_i - l'_i k_i) m(k+k'-e_i, ...)
//                            + sum_j (a_j abar'_j - abar_j a'_j) m(..., a+a'-e_j, abar+abar'-e_j) ].
template <class Real>
BasicTFSeries<Real> poisson_bracket(const BasicTFSeries<Real>& f, const BasicTFSeries<Real>& g) {
  using C = std::complex<Real>;
  detail::require_same_shape(f, g, "poisson_bracket");
  const SeriesCaps caps = SeriesCaps::meet(f.caps(), g.caps());
  const int n = f.n(), m = f.m();
  SeriesBuilder<Real> b(n, m, caps);
  b.add_loss(f.truncation_loss() + g.truncation_loss());
  // {f, f} vanishes identically; the accumulation order would otherwise leave rounding residue
  if (&f == &g || f.terms() == g.terms()) return std::move(b).finish(f.real_flagged() && g.real_flagged());

  // Bucket g by degree so that pairs beyond the cap are skipped without a scan.
  std::vector<std::vector<const typename BasicTFSeries<Real>::Term*>> by_deg(
      static_cast<std::size_t>(std::max(g.max_degree(), 0) + 1));
  for (const auto& t : g) by_deg[t.first.degree()].push_back(&t);

  for (const auto& [k1, c1] : f) {
    const int d1 = k1.degree();
    for (int d2 = 0; d2 < static_cast<int>(by_deg.size()); ++d2) {
      const bool fits = d1 + d2 - 2 <= caps.degree;
      for (const auto* tg : by_deg[d2]) {
        const TermKey& k2 = tg->first;
        const C cc = C(0, 1) * c1 * tg->second;
        const TermKey sum = detail::add_keys(k1, k2);
        for (int i = 0; i < n; ++i) {
          const int w = k1.ell(i) * k2.k(i) - k2.ell(i) * k1.k(i);
          if (w == 0) continue;
          if (!fits) {
            b.add_loss(1);
            continue;
          }
          TermKey key = sum;
          --key.k_ref(i);
          b.add(key, cc * Real(w));
        }
        for (int j = 0; j < m; ++j) {
          const int w = k1.a(j) * k2.abar(j) - k1.abar(j) * k2.a(j);
          if (w == 0) continue;
          if (!fits) {
            b.add_loss(1);
            continue;
          }
          TermKey key = sum;
          --key.a_ref(j);
          --key.abar_ref(j);
          b.add(key, cc * Real(w));
        }
      }
    }
  }
  return std::move(b).finish(f.real_flagged() && g.real_flagged());
}

// ---------------------------------------------------------------------------------------------
// Partial derivatives, exact on monomials.

enum class Var { I, Phi, Z, Zbar };

template <class Real>
BasicTFSeries<Real> partial(const BasicTFSeries<Real>& f, Var v, int idx) {
  using C = std::complex<Real>;
  SeriesBuilder<Real> b(f.n(), f.m(), f.caps());
  for (auto [key, c] : f) {
    switch (v) {
      case Var::I: {
        const int p = key.k(idx);
        if (p == 0) continue;
        --key.k_ref(idx);
        b.add(key, c * Real(p));
        break;
      }
      case Var::Phi: {
        const int l = key.ell(idx);
        if (l == 0) continue;
        b.add(key, c * C(0, l));
        break;
      }
      case Var::Z: {
        const int p = key.a(idx);
        if (p == 0) continue;
        --key.a_ref(idx);
        b.add(key, c * Real(p));
        break;
      }
      case Var::Zbar: {
        const int p = key.abar(idx);
        if (p == 0) continue;
        --key.abar_ref(idx);
        b.add(key, c * Real(p));
        break;
      }
    }
  }
  // d/dphi and d/dI of a real function stay real; d/dz and d/dzbar are conjugate to each other.
  return std::move(b).finish(f.real_flagged() && (v == Var::I || v == Var::Phi));
}

template <class Real>
struct VectorFieldSeries {
  std::vector<BasicTFSeries<Real>> I_dot;     // -dH/dphi
  std::vector<BasicTFSeries<Real>> phi_dot;   //  dH/dI
  std::vector<BasicTFSeries<Real>> z_dot;     //  i dH/dzbar
  std::vector<BasicTFSeries<Real>> zbar_dot;  // -i dH/dz
};

template <class Real>
VectorFieldSeries<Real> hamiltonian_vector_field(const BasicTFSeries<Real>& H) {
  using C = std::complex<Real>;
  if (!H.real_flagged()) fail(ErrorKind::Invariant, "hamiltonian_vector_field: H is not real-flagged");
  VectorFieldSeries<Real> X;
  for (int i = 0; i < H.n(); ++i) {
    X.I_dot.push_back(Real(-1) * partial(H, Var::Phi, i));
    X.phi_dot.push_back(partial(H, Var::I, i));
  }
  for (int j = 0; j < H.m(); ++j) {
    X.z_dot.push_back(C(0, 1) * partial(H, Var::Zbar, j));
    X.zbar_dot.push_back(C(0, -1) * partial(H, Var::Z, j));
  }
  return X;
}

// ---------------------------------------------------------------------------------------------
// Point evaluation.

template <class Real, class DI, class DP>
std::complex<Real> evaluate(const BasicTFSeries<Real>& f, const Eigen::MatrixBase<DI>& I,
                            const Eigen::MatrixBase<DP>& phi,
                            const Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, 1>& z,
                            const Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, 1>& zbar) {
  using C = std::complex<Real>;
  const int n = f.n(), m = f.m();
  if (I.size() != n || phi.size() != n || z.size() != m || zbar.size() != m)
    fail(ErrorKind::Dimension, "evaluate: argument dimensions do not match the series");
  C acc(0);
  for (const auto& [key, c] : f) {
    C v = c;
    Real arg = 0;
    for (int i = 0; i < n; ++i) {
      if (key.k(i)) v *= std::pow(Real(I(i)), key.k(i));
      arg += key.ell(i) * Real(phi(i));
    }
    for (int j = 0; j < m; ++j) {
      if (key.a(j)) v *= std::pow(z(j), key.a(j));
      if (key.abar(j)) v *= std::pow(zbar(j), key.abar(j));
    }
    acc += v * std::polar(Real(1), arg);
  }
  return acc;
}

template <class Real, class DI, class DP>
std::complex<Real> evaluate(const BasicTFSeries<Real>& f, const Eigen::MatrixBase<DI>& I,
                            const Eigen::MatrixBase<DP>& phi,
                            const Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, 1>& z) {
  return evaluate(f, I, phi, z, Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, 1>(z.conjugate()));
}

// ---------------------------------------------------------------------------------------------
// Diagnostics.

struct RealityReport {
  double max_violation = 0;
  TermKey worst_key;
  bool passes(double tol) const { return max_violation <= tol; }
};

// Violation of c_{conj key} = conj(c_key), measured relative to max(1, min(|c|, |c'|)).
template <class Real>
RealityReport check_reality(const BasicTFSeries<Real>& f) {
  RealityReport r;
  for (const auto& [key, c] : f) {
    const auto partner = f.coeff(key.conjugate());
    const double v = std::abs(std::conj(c) - partner) / std::max(1.0, double(std::min(std::abs(c), std::abs(partner))));
    if (v > r.max_violation) {
      r.max_violation = v;
      r.worst_key = key;
    }
  }
  return r;
}

// Polydisc majorant: sum |c| r^|k| rho^|a+abar| e^{|ell|_1 s}.
template <class Real>
Real sup_fourier_norm(const BasicTFSeries<Real>& f, Real r, Real rho, Real s) {
  if (!(r > 0 && rho > 0 && s > 0)) fail(ErrorKind::Invariant, "sup_fourier_norm: radii must be positive");
  Real acc = 0;
  for (const auto& [key, c] : f)
    acc += std::abs(c) * std::pow(r, key.k_norm()) * std::pow(rho, key.z_degree()) *
           std::exp(s * key.ell_norm1());
  return acc;
}

// Multiplies each coefficient by eta^(d-2); grading of the rescaled normal form.
template <class Real>
BasicTFSeries<Real> rescale(const BasicTFSeries<Real>& f, Real eta) {
  if (!(eta > 0)) fail(ErrorKind::Invariant, "rescale: eta must be positive");
  SeriesBuilder<Real> b(f.n(), f.m(), f.caps());
  for (const auto& [key, c] : f) b.add(key, c * std::pow(eta, key.degree() - 2));
  return std::move(b).finish(f.real_flagged());
}

// ---------------------------------------------------------------------------------------------
// Compiled evaluator for the value and full gradient of a series at many points.
//
// For a state (I, phi, z, zbar) it returns H and its partials in each variable. The flattened
// gradient layout is [dI (n) | dphi (n) | dz (m) | dzbar (m)].
template <class Real>
class SeriesEvaluator {
 public:
  using C = std::complex<Real>;
  using CVec = Eigen::Matrix<C, Eigen::Dynamic, 1>;
  using RVec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

  SeriesEvaluator() = default;
  explicit SeriesEvaluator(const BasicTFSeries<Real>& f) : n_(f.n()), m_(f.m()) {
    nv_ = n_ + 2 * m_;
    max_pow_ = 0;
    max_ell_ = 0;
    for (const auto& [key, c] : f) {
      Packed p;
      p.c = c;
      p.first = static_cast<int>(factors_.size());
      for (int v = 0; v < nv_; ++v) {
        const int e = key.e[v];
        if (e) {
          factors_.push_back({v, e});
          max_pow_ = std::max(max_pow_, e);
        }
      }
      p.count = static_cast<int>(factors_.size()) - p.first;
      p.ell_first = static_cast<int>(ells_.size());
      for (int i = 0; i < n_; ++i) {
        const int l = key.ell(i);
        if (l) {
          ells_.push_back({i, l});
          max_ell_ = std::max(max_ell_, std::abs(l));
        }
      }
      p.ell_count = static_cast<int>(ells_.size()) - p.ell_first;
      terms_.push_back(p);
    }
  }

  int n() const { return n_; }
  int m() const { return m_; }

  // Returns H; fills grad (size 2n+2m) with the partials.
  C eval(const RVec& I, const RVec& phi, const CVec& z, const CVec& zbar, CVec* grad) const {
    const int stride = max_pow_ + 1;
    const int estride = 2 * max_ell_ + 1;
    // Thread-local scratch keeps eval() reentrant without per-call allocation.
    thread_local std::vector<C> pw, ph;
    thread_local std::vector<C> pre;
    pw.assign(static_cast<std::size_t>(nv_ * stride), C(0));
    ph.assign(static_cast<std::size_t>(std::max(n_, 1) * estride), C(0));
    for (int v = 0; v < nv_; ++v) {
      C x = v < n_ ? C(I(v)) : (v < n_ + m_ ? z(v - n_) : zbar(v - n_ - m_));
      C* row = &pw[v * stride];
      row[0] = 1;
      for (int p = 1; p <= max_pow_; ++p) row[p] = row[p - 1] * x;
    }
    for (int i = 0; i < n_; ++i) {
      C* row = &ph[i * estride + max_ell_];
      const C u = std::polar(Real(1), Real(phi(i)));
      row[0] = 1;
      for (int l = 1; l <= max_ell_; ++l) {
        row[l] = row[l - 1] * u;
        row[-l] = std::conj(row[l]);
      }
    }
    if (grad) grad->setZero(2 * n_ + 2 * m_);
    C total(0);
    for (const auto& t : terms_) {
      C phase(1);
      for (int q = 0; q < t.ell_count; ++q) {
        const auto& [i, l] = ells_[t.ell_first + q];
        phase *= ph[i * estride + max_ell_ + l];
      }
      const C cp = t.c * phase;
      // Prefix products over the nonzero factors; suffix accumulated on the way back.
      pre.resize(static_cast<std::size_t>(t.count + 1));
      pre[0] = 1;
      for (int q = 0; q < t.count; ++q) {
        const auto& [v, e] = factors_[t.first + q];
        pre[q + 1] = pre[q] * pw[v * stride + e];
      }
      const C val = cp * pre[t.count];
      total += val;
      if (!grad) continue;
      C suf(1);
      for (int q = t.count - 1; q >= 0; --q) {
        const auto& [v, e] = factors_[t.first + q];
        const C d = cp * pre[q] * suf * (Real(e) * pw[v * stride + e - 1]);
        const int slot = v < n_ ? v : n_ + v;  // z and zbar slots follow dphi
        (*grad)(slot) += d;
        suf *= pw[v * stride + e];
      }
      for (int q = 0; q < t.ell_count; ++q) {
        const auto& [i, l] = ells_[t.ell_first + q];
        (*grad)(n_ + i) += C(0, l) * val;
      }
    }
    return total;
  }

 private:
  struct Packed {
    C c;
    int first = 0, count = 0, ell_first = 0, ell_count = 0;
  };
  int n_ = 0, m_ = 0, nv_ = 0, max_pow_ = 0, max_ell_ = 0;
  std::vector<Packed> terms_;
  std::vector<std::pair<int, int>> factors_;
  std::vector<std::pair<int, int>> ells_;
};

}  // namespace eltor
