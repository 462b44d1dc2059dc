#include "eltor/resonance.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "eltor/errors.hpp"

namespace eltor {

namespace {

// All integer vectors of dimension n and l1 norm exactly s, in descending lexicographic order.
void shell(int n, int s, std::vector<Eigen::VectorXi>& out) {
  Eigen::VectorXi v = Eigen::VectorXi::Zero(n);
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == n - 1) {
      if (left == 0) {
        v(i) = 0;
        out.push_back(v);
      } else {
        v(i) = left;
        out.push_back(v);
        v(i) = -left;
        out.push_back(v);
      }
      return;
    }
    for (int x = left; x >= -left; --x) {
      v(i) = x;
      rec(i + 1, left - std::abs(x));
    }
  };
  if (n == 0) {
    if (s == 0) out.emplace_back(0);
    return;
  }
  rec(0, s);
}

int first_nonzero_sign(const Eigen::VectorXi& v) {
  for (int i = 0; i < v.size(); ++i)
    if (v(i) != 0) return v(i) > 0 ? 1 : -1;
  return 0;
}

long long gcd_all(const Eigen::VectorXi& a, long long M) {
  long long g = std::abs(M);
  for (int i = 0; i < a.size(); ++i) g = std::gcd(g, static_cast<long long>(std::abs(a(i))));
  return g;
}

double pow_l1(int l1, double tau) { return l1 == 0 ? 0.0 : std::pow(double(l1), tau); }

// Odometer over {-B..B}^d excluding the pivot coordinate, which is solved for by rounding.
// Calls fn(v) for every v whose pivot entry lies within bounds; stops when fn returns true.
bool bounded_search(const Eigen::VectorXd& w, int B, double target, int pivot,
                    const std::function<bool(const Eigen::VectorXi&, double)>& fn) {
  const int d = static_cast<int>(w.size());
  Eigen::VectorXi v = Eigen::VectorXi::Constant(d, -B);
  v(pivot) = 0;
  while (true) {
    double partial = 0;
    for (int i = 0; i < d; ++i)
      if (i != pivot) partial += v(i) * w(i);
    const double q = std::nearbyint((target - partial) / w(pivot));
    if (std::abs(q) <= B) {
      v(pivot) = static_cast<int>(q);
      const double resid = std::abs(target - partial - q * w(pivot));
      if (fn(v, resid)) return true;
      v(pivot) = 0;
    }
    int i = d - 1;
    for (; i >= 0; --i) {
      if (i == pivot) continue;
      if (v(i) < B) {
        ++v(i);
        break;
      }
      v(i) = -B;
    }
    if (i < 0) return false;
  }
}

int pivot_of(const Eigen::VectorXd& w) {
  int p = 0;
  w.cwiseAbs().maxCoeff(&p);
  return p;
}

bool has_bounded_relation(const Eigen::VectorXd& w, int B, double tol) {
  if (w.size() == 0) return false;
  if (w.cwiseAbs().maxCoeff() == 0) return true;
  return bounded_search(w, B, 0.0, pivot_of(w), [&](const Eigen::VectorXi& v, double resid) {
    return resid < tol && v.cwiseAbs().maxCoeff() > 0;
  });
}

std::optional<Relation> find_relation(double Om, const Eigen::VectorXd& w, int M_max, int B, double tol) {
  if (w.size() == 0) return std::nullopt;
  for (int M = 1; M <= M_max; ++M) {
    std::optional<Relation> found;
    bounded_search(w, B, M * Om, pivot_of(w), [&](const Eigen::VectorXi& v, double resid) {
      if (resid < tol) {
        found = Relation{M, v};
        return true;
      }
      return false;
    });
    if (found) return found;
  }
  return std::nullopt;
}

Relation normalized(Relation r) {
  const long long g = gcd_all(r.a, r.M);
  if (g > 1) {
    r.M = static_cast<int>(r.M / g);
    r.a /= static_cast<int>(g);
  }
  return r;
}

double relation_residual(const Relation& r, double Om, const Eigen::VectorXd& w) {
  return std::abs(r.M * Om - r.a.cast<double>().dot(w));
}

}  // namespace

// ---------------------------------------------------------------------------------------------

MelnikovReport melnikov_check(const FrequencyData& f, int cutoff) {
  if (cutoff < 1) fail(ErrorKind::Invariant, "melnikov_check: cutoff must be >= 1");
  const int n = f.n(), m = f.m();
  MelnikovReport rep;
  rep.cutoff = cutoff;
  std::vector<Eigen::VectorXi> hs;
  for (int s = 0; s <= 2; ++s) shell(m, s, hs);
  for (int s = 0; s <= cutoff; ++s) {
    std::vector<Eigen::VectorXi> ells;
    shell(n, s, ells);
    const double weight = (1.0 + pow_l1(s, f.tau)) / f.gamma;
    for (const auto& ell : ells) {
      const double wl = ell.cast<double>().dot(f.omega);
      for (const auto& h : hs) {
        const int hs_sign = first_nonzero_sign(h);
        if (hs_sign < 0) continue;
        if (hs_sign == 0 && first_nonzero_sign(ell) <= 0) continue;
        const double margin = std::abs(wl + h.cast<double>().dot(f.Omega)) * weight;
        ++rep.pairs_checked;
        if (margin < rep.min_margin) {
          rep.min_margin = margin;
          rep.worst_ell = ell;
          rep.worst_h = h;
        }
      }
    }
  }
  return rep;
}

std::uint64_t count_congruence_solutions(std::span<const long long> a, long long M, long long b) {
  if (M < 1) fail(ErrorKind::Invariant, "count_congruence_solutions: modulus must be positive");
  long long g = M;
  for (long long x : a) g = std::gcd(g, std::abs(x));
  if (g != 1)
    fail(ErrorKind::Invariant, "count_congruence_solutions: gcd(a_1..a_n, M) = " + std::to_string(g) +
                                   " > 1, the counting lemma does not apply");
  auto mod = [M](long long x) { return ((x % M) + M) % M; };
  std::vector<std::uint64_t> ways(static_cast<std::size_t>(M), 0), next(ways.size());
  ways[0] = 1;
  for (long long ai : a) {
    std::fill(next.begin(), next.end(), 0);
    const long long s = mod(ai);
    for (long long r = 0; r < M; ++r) {
      if (!ways[r]) continue;
      for (long long k = 0; k < M; ++k) next[mod(r + k * s)] += ways[r];
    }
    ways.swap(next);
  }
  return ways[mod(b)];
}

// ---------------------------------------------------------------------------------------------

int ResonanceStructure::lcm_M() const {
  long long L = 1;
  for (const auto& r : relations) L = std::lcm(L, static_cast<long long>(r.M));
  return static_cast<int>(L);
}
int ResonanceStructure::max_M() const {
  int x = 0;
  for (const auto& r : relations) x = std::max(x, r.M);
  return x;
}
int ResonanceStructure::max_a_l1() const {
  int x = 0;
  for (const auto& r : relations) x = std::max(x, r.a.cwiseAbs().sum());
  return x;
}
Eigen::VectorXd ResonanceStructure::omega_hat(const FrequencyData& f) const {
  Eigen::VectorXd w(n_hat());
  w.head(n) = f.omega;
  for (int q = m_hat; q < m; ++q) w(n + q - m_hat) = f.Omega(reorder[q]);
  return w;
}
Eigen::VectorXd ResonanceStructure::Omega_reordered(const FrequencyData& f) const {
  Eigen::VectorXd o(m);
  for (int q = 0; q < m; ++q) o(q) = f.Omega(reorder[q]);
  return o;
}

ResonanceStructure detect_resonances(const FrequencyData& f, const DetectOptions& opt) {
  if (opt.M_max < 1 || opt.a_max < 1) fail(ErrorKind::Invariant, "detect_resonances: bounds must be >= 1");
  const int n = f.n(), m = f.m();
  std::optional<ResonanceStructure> best;
  int best_sumM = std::numeric_limits<int>::max();

  for (int mh = 0; mh <= m && !best; ++mh) {
    std::vector<bool> pick(m, false);
    std::fill(pick.begin(), pick.begin() + mh, true);
    // prev_permutation over a sorted-descending mask walks subsets in lexicographic order
    do {
      ResonanceStructure rs;
      rs.n = n;
      rs.m = m;
      rs.m_hat = mh;
      for (int j = 0; j < m; ++j)
        if (pick[j]) rs.reorder.push_back(j);
      for (int j = 0; j < m; ++j)
        if (!pick[j]) rs.reorder.push_back(j);
      const Eigen::VectorXd w = rs.omega_hat(f);
      bool ok = true;
      int sumM = 0;
      for (int q = 0; q < mh && ok; ++q) {
        auto r = find_relation(f.Omega(rs.reorder[q]), w, opt.M_max, opt.a_max, opt.tol);
        if (!r) {
          ok = false;
          break;
        }
        Relation nr = normalized(*r);
        rs.max_residual = std::max(rs.max_residual, relation_residual(nr, f.Omega(rs.reorder[q]), w));
        sumM += nr.M;
        rs.relations.push_back(std::move(nr));
      }
      if (!ok || sumM >= best_sumM) continue;
      if (has_bounded_relation(w, opt.a_max, opt.tol)) continue;
      best = std::move(rs);
      best_sumM = sumM;
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }

  if (!best) {
    // omega itself carries a bounded relation; nothing can be certified, report all as independent
    ResonanceStructure rs;
    rs.n = n;
    rs.m = m;
    rs.m_hat = 0;
    for (int j = 0; j < m; ++j) rs.reorder.push_back(j);
    return rs;
  }
  return *best;
}

ResonanceStructure certify_declared(const FrequencyData& f, const std::vector<DeclaredRelation>& decl,
                                    double tol) {
  const int n = f.n(), m = f.m();
  ResonanceStructure rs;
  rs.n = n;
  rs.m = m;
  rs.m_hat = static_cast<int>(decl.size());
  rs.declared = true;
  std::vector<bool> used(m, false);
  for (const auto& d : decl) {
    if (d.j < 1 || d.j > m) fail(ErrorKind::Parse, "relations: index j out of range");
    if (used[d.j - 1]) fail(ErrorKind::Parse, "relations: duplicate index j");
    if (d.M < 1) fail(ErrorKind::Parse, "relations: M must be positive");
    used[d.j - 1] = true;
    rs.reorder.push_back(d.j - 1);
  }
  for (int j = 0; j < m; ++j)
    if (!used[j]) rs.reorder.push_back(j);
  const Eigen::VectorXd w = rs.omega_hat(f);
  for (std::size_t q = 0; q < decl.size(); ++q) {
    if (static_cast<int>(decl[q].a.size()) != rs.n_hat())
      fail(ErrorKind::Parse, "relations: a must have n + m - m_hat entries");
    Relation r{decl[q].M, Eigen::Map<const Eigen::VectorXi>(decl[q].a.data(), rs.n_hat())};
    r = normalized(r);
    const double res = relation_residual(r, f.Omega(rs.reorder[q]), w);
    if (res > tol * std::max(1.0, std::abs(r.M * f.Omega(rs.reorder[q]))))
      fail(ErrorKind::Invariant, "relations: declared relation for j=" + std::to_string(decl[q].j) +
                                     " has residual " + std::to_string(res));
    rs.max_residual = std::max(rs.max_residual, res);
    rs.relations.push_back(std::move(r));
  }
  return rs;
}

Eigen::VectorXi nonresonant_lattice_point(const ResonanceStructure& rs) {
  const int mh = rs.m_hat, nh = rs.n_hat();
  if (mh < 1) fail(ErrorKind::PeriodRefused, "nonresonant_lattice_point: no resonance relations (m_hat = 0)");
  for (int j = 0; j < mh; ++j)
    if (rs.relations[j].M < mh)
      fail(ErrorKind::PeriodRefused, "nonresonant_lattice_point: hypothesis M_j >= m_hat fails for j=" +
                                         std::to_string(j + 1) + " (M_j=" + std::to_string(rs.relations[j].M) +
                                         ", m_hat=" + std::to_string(mh) + ")");
  if (mh == 1 && rs.relations[0].M < 2)
    fail(ErrorKind::PeriodRefused, "nonresonant_lattice_point: hypothesis M_1 >= 2 fails for m_hat = 1");
  const long long M = rs.lcm_M();
  Eigen::VectorXi k = Eigen::VectorXi::Zero(nh);
  while (true) {
    int i = nh - 1;
    for (; i >= 0; --i) {
      if (k(i) + 1 < M) {
        ++k(i);
        break;
      }
      k(i) = 0;
    }
    if (i < 0) break;
    bool good = true;
    for (int j = 0; j < mh && good; ++j) {
      const long long s = static_cast<long long>(rs.relations[j].a.cast<long long>().dot(k.cast<long long>()));
      good = (s % rs.relations[j].M) != 0;
    }
    if (good) return k;
  }
  fail(ErrorKind::Internal, "nonresonant_lattice_point: no admissible k although the hypotheses hold");
}

// ---------------------------------------------------------------------------------------------

ShiftResult nonresonant_shift(const FrequencyData& f, const ResonanceStructure& rs, double delta, double t0,
                              double budget, double start_offset) {
  const int n = f.n(), m = f.m(), mh = rs.m_hat, nh = rs.n_hat();
  ShiftResult out;
  const Eigen::VectorXd w = rs.omega_hat(f);
  Eigen::VectorXd target = Eigen::VectorXd::Zero(nh);
  int M = 1;
  double d0 = 0.25, beta = 2.0;

  if (mh == 0) {
    for (int i = n; i < nh; ++i) target(i) = 0.5;
  } else {
    beta = 2.0 * rs.max_a_l1();
    d0 = std::min(1.0 / (2.0 * beta), 1.0 / (4.0 * rs.max_M()));
    if (mh == 1 && rs.relations[0].M == 1) {
      const Eigen::VectorXi& a = rs.relations[0].a;
      int ell_sum = 0;
      for (int i = n; i < nh; ++i) ell_sum += std::abs(a(i));
      if (ell_sum == 0)
        fail(ErrorKind::PeriodRefused,
             "nonresonant_shift: m_hat = 1 = M_1 and the relation has no elliptic component "
             "(no index i > n with a_1i != 0)");
      const int a1 = a.cwiseAbs().sum();
      for (int i = n; i < nh; ++i)
        target(i) = a(i) != 0 ? (a(i) > 0 ? 1.0 : -1.0) / (2.0 * ell_sum) : 1.0 / (2.0 * a1);
    } else {
      M = rs.lcm_M();
      const Eigen::VectorXi k = nonresonant_lattice_point(rs);
      Eigen::VectorXd c = k.cast<double>();
      for (int i = n; i < nh; ++i) c(i) += 1.0 / beta;
      target = c / M;
    }
  }
  if (!(delta > 0) || delta > 1.0 / (2.0 * beta) + 1e-15)
    fail(ErrorKind::Invariant, "nonresonant_shift: delta must lie in (0, 1/(2 beta)]");

  const Eigen::VectorXd v = w / M;
  const Eigen::VectorXd x = wrap_half(target - v * t0);
  const double thr = delta / M;
  const double h = delta / (2.0 * M * w.cwiseAbs().maxCoeff());
  out.beta = beta;
  out.d0 = d0;
  out.M = M;
  out.target = x;

  double s = start_offset;
  double best = std::numeric_limits<double>::infinity();
  while (s <= budget) {
    ++out.steps;
    double dmax = 0;
    int imax = 0;
    for (int i = 0; i < nh; ++i) {
      const double di = dist_to_integers(v(i) * s - x(i));
      if (di > dmax) {
        dmax = di;
        imax = i;
      }
    }
    best = std::min(best, dmax);
    if (dmax <= thr) {
      const double tau = t0 + s;
      double wd = 0, Om = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) wd = std::max(wd, dist_to_integers(f.omega(i) * tau));
      for (int j = 0; j < m; ++j) Om = std::min(Om, dist_to_integers(f.Omega(j) * tau));
      if (wd <= delta && Om >= d0) {
        out.tau = tau;
        out.omega_dist = wd;
        out.Omega_margin = Om;
        return out;
      }
      s += h;
      continue;
    }
    // the worst coordinate cannot re-enter the window faster than its own speed allows
    const double vi = std::abs(v(imax));
    s += vi > 0 ? std::max(h, (dmax - thr) / vi) : h;
  }
  fail(ErrorKind::PeriodRefused, "nonresonant_shift: ergodization budget " + std::to_string(budget) +
                                     " exhausted; best flow distance " + std::to_string(best) + " vs window " +
                                     std::to_string(thr));
}

// ---------------------------------------------------------------------------------------------

Eigen::VectorXd shifted_phase(const FrequencyData& f, const Eigen::MatrixXd& R, const Eigen::MatrixXd& Q,
                              double T) {
  const Eigen::VectorXd frac = wrap_half(f.omega * (T / (2 * M_PI)));
  const Eigen::VectorXd corr = Q * R.partialPivLu().solve(frac);
  return 2 * M_PI * (f.Omega * (T / (2 * M_PI)) - corr);
}

double shifted_phase_margin(const FrequencyData& f, const Eigen::MatrixXd& R, const Eigen::MatrixXd& Q,
                            double T) {
  const Eigen::VectorXd ph = shifted_phase(f, R, Q, T);
  double d = std::numeric_limits<double>::infinity();
  for (int j = 0; j < ph.size(); ++j) d = std::min(d, 2 * M_PI * dist_to_integers(ph(j) / (2 * M_PI)));
  return d;
}

std::optional<std::string> condition_a_violation(const ResonanceStructure& rs) {
  if (rs.m <= 2 || rs.m_hat == 0) return std::nullopt;
  for (int j = 0; j < rs.m_hat; ++j)
    if (rs.relations[j].M < rs.m_hat)
      return "condition (a)(iii) violated: M_" + std::to_string(j + 1) + " = " +
             std::to_string(rs.relations[j].M) + " < m_hat = " + std::to_string(rs.m_hat) +
             "; the lemma-b path may still apply";
  return std::nullopt;
}

namespace {
void require_invertible(const Eigen::MatrixXd& R) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(R);
  if (R.size() == 0 || !lu.isInvertible() || std::abs(lu.determinant()) < 1e-14 * std::pow(R.norm(), R.rows()))
    fail(ErrorKind::TwistSingular, "twist matrix is singular");
}
double max_row_l1(const Eigen::MatrixXd& A) {
  return A.rows() == 0 ? 0.0 : A.cwiseAbs().rowwise().sum().maxCoeff();
}
}  // namespace

PeriodCertificate select_period_lemma_a(const FrequencyData& f, const ResonanceStructure& rs,
                                        const Eigen::MatrixXd& R, const Eigen::MatrixXd& Q, double t0,
                                        const LemmaAOptions& opt) {
  if (auto why = condition_a_violation(rs)) fail(ErrorKind::PeriodRefused, "lemma a: " + *why);
  require_invertible(R);
  const Eigen::MatrixXd QRi = Q * R.inverse();
  const double qr = max_row_l1(QRi);
  auto inv_or_inf = [](double x) { return x > 0 ? 1.0 / x : std::numeric_limits<double>::infinity(); };

  PeriodCertificate c;
  c.kind = CertificateKind::LemmaA;
  if (rs.m_hat >= 1) {
    const double A = rs.max_a_l1();
    c.d0 = std::min(1.0 / (4 * A), 1.0 / (4.0 * rs.max_M()));
    c.delta = std::min(c.d0 * inv_or_inf(2 * qr), 1.0 / (4 * A));
    c.beta = 2 * A;
  } else {
    c.d0 = 0.25;
    c.delta = std::min(inv_or_inf(8 * qr), 0.25);
    c.beta = 2;
  }
  const double wmax = f.omega.cwiseAbs().maxCoeff();
  const double Wmax = f.m() ? f.Omega.cwiseAbs().maxCoeff() : 0.0;
  c.Theta = std::min(c.delta / (4 * wmax), c.d0 * inv_or_inf(8 * Wmax));
  c.d_bound = M_PI * c.d0 / 2;
  c.minv_bound = 4 / (M_PI * c.d0);

  // T = 2 pi tau and the interval reaches 2 pi Theta below T, so start tau at t0/2pi + Theta.
  const double tau0 = std::max(t0, 0.0) / (2 * M_PI) + c.Theta;
  double offset = 0;
  for (int attempt = 0; attempt < opt.max_retries; ++attempt) {
    const ShiftResult sr = nonresonant_shift(f, rs, c.delta, tau0, opt.budget, offset);
    const double T = 2 * M_PI * sr.tau;
    const double margin = shifted_phase_margin(f, R, Q, T);
    if (margin >= c.d_bound) {
      c.T = T;
      c.T_lo = T - 2 * M_PI * c.Theta;
      c.T_hi = T + 2 * M_PI * c.Theta;
      c.measured_dist = margin;
      c.tau_shift = sr.tau;
      return c;
    }
    c.skipped.push_back(T);
    offset = sr.tau - tau0 + c.delta / (2.0 * sr.M * rs.omega_hat(f).cwiseAbs().maxCoeff());
  }
  fail(ErrorKind::PeriodRefused, "lemma a: no candidate passed direct re-verification after " +
                                     std::to_string(opt.max_retries) + " attempts");
}

PeriodCertificate select_period_lemma_b(const FrequencyData& f, const Eigen::MatrixXd& R,
                                        const Eigen::MatrixXd& Q, double t0, int scan_points) {
  require_invertible(R);
  const int n = f.n(), m = f.m();
  const Eigen::VectorXd xi = f.Omega - Q * R.partialPivLu().solve(f.omega);
  PeriodCertificate c;
  c.kind = CertificateKind::LemmaB;
  c.alpha = m ? xi.cwiseAbs().minCoeff() : 0.0;
  const double scale = std::max(1.0, f.Omega.size() ? f.Omega.cwiseAbs().maxCoeff() : 1.0);
  if (!(c.alpha > 1e-12 * scale))
    fail(ErrorKind::PeriodRefused, "lemma b: condition (b) violated, alpha = min_j |(Omega - Q R^-1 omega)_j| = " +
                                       std::to_string(c.alpha));
  c.theta = 1.0 / f.omega.cwiseAbs().maxCoeff();
  c.d1 = std::min(M_PI / (8.0 * m), M_PI * c.alpha * c.theta / (2.0 * n * m));
  c.d_bound = c.d1;
  c.minv_bound = 2 / c.d1;

  const double lo = std::max(t0, 0.0), hi = lo + 4 * M_PI * c.theta;
  const double dt = (hi - lo) / scan_points;
  int run_start = -1;
  double best = 0;
  for (int i = 0; i <= scan_points + 1; ++i) {
    const bool inside = i <= scan_points;
    const double T = lo + i * dt;
    const double mg = inside ? shifted_phase_margin(f, R, Q, T) : 0.0;
    best = std::max(best, mg);
    const bool ok = inside && mg > c.d1;
    if (ok && run_start < 0) run_start = i;
    if (!ok && run_start >= 0) {
      const int mid = (run_start + i - 1) / 2;
      c.T = lo + mid * dt;
      c.T_lo = lo + run_start * dt;
      c.T_hi = lo + (i - 1) * dt;
      c.measured_dist = shifted_phase_margin(f, R, Q, c.T);
      if (c.measured_dist > c.d1) return c;
      run_start = -1;
    }
  }
  fail(ErrorKind::PeriodRefused, "lemma b: no T in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                     "] with margin above d1 = " + std::to_string(c.d1) + " (best " +
                                     std::to_string(best) + ")");
}

// ---------------------------------------------------------------------------------------------

double G_eps(double e) {
  const double L = std::log(1.0 / e);
  return e * L * L;
}

double G_inverse(double x) {
  const double top = std::exp(-2.0);
  if (!(x > 0)) return 0.0;
  if (x >= G_eps(top)) return top;
  // bisection in log space keeps relative resolution near zero
  double lo = std::log(std::numeric_limits<double>::min()), hi = -2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (G_eps(std::exp(mid)) < x ? lo : hi) = mid;
    if (hi - lo < 1e-15) break;
  }
  return std::exp(0.5 * (lo + hi));
}

EpsilonWindow epsilon_window(double T, double c1, double c2, double c3, double eps1) {
  if (!(T > 0 && c1 > 0 && c2 > 0 && c3 > 0 && eps1 > 0))
    fail(ErrorKind::Invariant, "epsilon_window: T and constants must be positive");
  EpsilonWindow w;
  const double common = std::min(1.0 / (c1 * T), eps1);
  w.eps_lo = std::min(std::exp(-T / c2), common);
  w.eps_hi = std::min(G_inverse(c3 / (T * T)), common);
  return w;
}

std::optional<double> window_threshold(double c1, double c2, double c3, double eps1, double T_max) {
  auto gap = [&](double T) {
    auto w = epsilon_window(T, c1, c2, c3, eps1);
    return w.eps_lo - w.eps_hi;
  };
  // log-spaced scan for the last interval where the window is empty
  const int N = 4000;
  const double a = std::log(1e-6), b = std::log(T_max);
  double last_empty = -1;
  int last_i = -1;
  for (int i = 0; i <= N; ++i) {
    const double T = std::exp(a + (b - a) * i / N);
    if (gap(T) > 0) {
      last_empty = T;
      last_i = i;
    }
  }
  if (last_i < 0 || last_i == N) return std::nullopt;
  double lo = last_empty, hi = std::exp(a + (b - a) * (last_i + 1) / N);
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) > 0 ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace eltor
