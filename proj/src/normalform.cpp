#include "eltor/normalform.hpp"

#include <map>
#include <set>

namespace eltor {

std::string to_string(ResonantClass c) {
  switch (c) {
    case ResonantClass::S1: return "S1";
    case ResonantClass::S2_0: return "S2_0";
    case ResonantClass::S2_1: return "S2_1";
    case ResonantClass::S2_2: return "S2_2";
    case ResonantClass::S3: return "S3";
    case ResonantClass::None: return "none";
  }
  return "none";
}

namespace {
bool is_unit(const TermKey& key, int off, int len) {
  int s = 0;
  for (int i = 0; i < len; ++i) s += key.e[off + i];
  return s == 1;
}
}  // namespace

ResonantClass resonant_set_member(const TermKey& key) {
  const int kk = key.k_norm(), za = key.z_degree(), d = key.degree();
  switch (d) {
    case 3:
      return kk == 0 ? ResonantClass::S1 : ResonantClass::None;
    case 4:
      if (kk == 0) return ResonantClass::S2_0;
      if (kk == 1 && key.ell_zero() && key.a_equals_abar() && is_unit(key, key.n, key.m))
        return ResonantClass::S2_1;
      if (kk == 2 && key.ell_zero()) return ResonantClass::S2_2;
      return ResonantClass::None;
    case 5:
      return (za == 3 || za == 5) ? ResonantClass::S3 : ResonantClass::None;
    default:
      return ResonantClass::None;
  }
}

bool in_eliminated_class(const TermKey& key) {
  const int d = key.degree();
  return d >= 3 && d <= 5 && !in_resonant_set(key);
}

double divisor(const TermKey& key, const FrequencyData& freq) {
  double s = 0;
  for (int i = 0; i < key.n; ++i) s += freq.omega(i) * key.ell(i);
  for (int j = 0; j < key.m; ++j) s += freq.Omega(j) * (key.a(j) - key.abar(j));
  return s;
}

namespace {
std::string divisor_message(const TermKey& key, double D, double bound) {
  std::string ell = "(", h = "(";
  for (int i = 0; i < key.n; ++i) ell += (i ? "," : "") + std::to_string(key.ell(i));
  for (int j = 0; j < key.m; ++j) h += (j ? "," : "") + std::to_string(key.a(j) - key.abar(j));
  return "small divisor at ell=" + ell + ") a-abar=" + h + "): |divisor|=" + std::to_string(std::abs(D)) +
         " below " + std::to_string(bound);
}
}  // namespace

TFSeries build_generating_function(const TFSeries& F, const FrequencyData& freq, int d,
                                   const DivisorPolicy& policy) {
  if (d < 1 || d > 3) fail(ErrorKind::Invariant, "build_generating_function: order must be 1..3");
  auto b = F.builder();
  for (const auto& [key, c] : F) {
    if (key.degree() != d + 2 || in_resonant_set(key)) continue;
    const double D = divisor(key, freq), bound = policy.bound(key);
    if (std::abs(D) < bound) fail(ErrorKind::SmallDivisor, divisor_message(key, D, bound));
    b.add(key, std::complex<double>(0, -1) * c / D);
  }
  return std::move(b).finish(F.real_flagged());
}

TFSeries lie_series(const TFSeries& H, const TFSeries& chi) {
  TFSeries acc = H, term = H;
  for (int j = 1; !term.empty() && !chi.empty(); ++j) {
    term = (1.0 / j) * poisson_bracket(term, chi);
    acc += term;
    if (j > 4 * std::max(H.caps().degree, 1)) fail(ErrorKind::Internal, "lie_series: no nilpotency");
  }
  acc.set_real_flag(H.real_flagged() && chi.real_flagged());
  return acc;
}

LieTransformResult lie_transform(const TFSeries& H, const std::vector<TFSeries>& chi, int j0) {
  if (j0 < 1) fail(ErrorKind::Invariant, "lie_transform: j0 must be >= 1");
  const int required = j0 + 3;
  if (H.caps().degree < required)
    fail(ErrorKind::Invariant, "lie_transform: degree cap " + std::to_string(H.caps().degree) +
                                   " too small, need at least " + std::to_string(required));
  TFSeries total(H.n(), H.m(), H.caps());
  total.set_real_flag(true);
  for (const auto& c : chi) total += c;
  const TFSeries full = total.empty() ? H : lie_series(H, total);
  const int cut = j0 + 2;
  LieTransformResult r;
  r.polynomial = project(full, [cut](const TermKey& k) { return k.degree() <= cut; });
  r.remainder = project(full, [cut](const TermKey& k) { return k.degree() > cut; });
  return r;
}

Eigen::MatrixXd twist_from_slice(const TFSeries& H) {
  const int n = H.n(), m = H.m();
  Eigen::MatrixXd R(n, n);
  for (int i = 0; i < n; ++i)
    for (int ip = 0; ip < n; ++ip) {
      TermKey key(n, m);
      ++key.k_ref(i);
      ++key.k_ref(ip);
      R(i, ip) = (i == ip ? 2.0 : 1.0) * H.coeff(key).real();
    }
  return R;
}

Eigen::MatrixXd coupling_from_slice(const TFSeries& H) {
  const int n = H.n(), m = H.m();
  Eigen::MatrixXd Q(m, n);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) {
      TermKey key(n, m);
      key.k_ref(i) = 1;
      key.a_ref(j) = 1;
      key.abar_ref(j) = 1;
      Q(j, i) = H.coeff(key).real();
    }
  return Q;
}

namespace {

// Builds the key with the given unit/zero pattern and Fourier vector.
struct KeyMaker {
  int n, m;
  TermKey operator()(std::initializer_list<int> ks, std::initializer_list<int> as, std::initializer_list<int> abs,
                     const std::vector<int>& ell, int sign) const {
    TermKey key(n, m);
    for (int i : ks) ++key.k_ref(i);
    for (int j : as) ++key.a_ref(j);
    for (int j : abs) ++key.abar_ref(j);
    for (int i = 0; i < n; ++i) key.ell_ref(i) = static_cast<std::int8_t>(sign * ell[i]);
    return key;
  }
};

// Fourier vectors appearing among the degree-3 terms; the ell-sums run over this set.
std::vector<std::vector<int>> cubic_ell_support(const TFSeries& H) {
  std::set<std::vector<int>> s;
  for (const auto& [key, c] : H) {
    if (key.degree() != 3) continue;
    std::vector<int> ell(H.n());
    for (int i = 0; i < H.n(); ++i) ell[i] = key.ell(i);
    s.insert(ell);
    for (auto& x : ell) x = -x;
    s.insert(ell);
  }
  return {s.begin(), s.end()};
}

double omega_dot(const FrequencyData& f, const std::vector<int>& ell) {
  double s = 0;
  for (int i = 0; i < f.n(); ++i) s += f.omega(i) * ell[i];
  return s;
}

void check_div(double D, const TermKey& key, const DivisorPolicy& policy) {
  const double bound = policy.bound(key);
  if (std::abs(D) < bound) fail(ErrorKind::SmallDivisor, divisor_message(key, D, bound));
}

// Geometric extrapolation of a sum whose |ell|_1 shells are given.
double geometric_tail(const std::map<int, double>& shells) {
  if (shells.size() < 2) return 0;
  auto last = shells.rbegin();
  const double s1 = last->second;
  const double s0 = std::next(last)->second;
  if (s0 <= 0 || s1 <= 0) return 0;
  const double q = s1 / s0;
  return q < 1 ? s1 * q / (1 - q) : std::numeric_limits<double>::infinity();
}

}  // namespace

MatrixReport compute_twist_matrix(const TFSeries& H, const FrequencyData& freq, const DivisorPolicy& policy) {
  using C = std::complex<double>;
  const int n = H.n(), m = H.m();
  const KeyMaker K{n, m};
  const auto ells = cubic_ell_support(H);
  const std::vector<int> zero(n, 0);
  Eigen::MatrixXcd R = Eigen::MatrixXcd::Zero(n, n);
  std::map<int, double> shells;
  for (int i = 0; i < n; ++i)
    for (int ip = 0; ip < n; ++ip) {
      R(i, ip) = (i == ip ? 2.0 : 1.0) * H.coeff(K({i, ip}, {}, {}, zero, 1));
      for (int j = 0; j < m; ++j)
        for (const auto& ell : ells) {
          const TermKey kd = K({i}, {j}, {}, ell, 1);
          const double D = omega_dot(freq, ell) + freq.Omega(j);
          const C num = H.coeff(kd) * H.coeff(K({ip}, {}, {j}, ell, -1)) +
                        H.coeff(K({i}, {}, {j}, ell, -1)) * H.coeff(K({ip}, {j}, {}, ell, 1));
          if (num == C(0)) continue;
          check_div(D, kd, policy);
          R(i, ip) -= num / D;
          int l1 = 0;
          for (int x : ell) l1 += std::abs(x);
          shells[l1] += std::abs(num / D);
        }
    }
  MatrixReport rep;
  rep.imag_residual = R.imag().cwiseAbs().maxCoeff();
  const Eigen::MatrixXd Rr = R.real();
  rep.asymmetry = (Rr - Rr.transpose()).cwiseAbs().maxCoeff();
  rep.value = 0.5 * (Rr + Rr.transpose());
  rep.tail_estimate = geometric_tail(shells);
  return rep;
}

MatrixReport compute_coupling_matrix(const TFSeries& H, const FrequencyData& freq, const DivisorPolicy& policy) {
  using C = std::complex<double>;
  const int n = H.n(), m = H.m();
  const KeyMaker K{n, m};
  const auto ells = cubic_ell_support(H);
  const std::vector<int> zero(n, 0);
  Eigen::MatrixXcd Q = Eigen::MatrixXcd::Zero(m, n);
  std::map<int, double> shells;
  auto add_shell = [&](const std::vector<int>& ell, double v) {
    int l1 = 0;
    for (int x : ell) l1 += std::abs(x);
    shells[l1] += v;
  };
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) {
      Q(j, i) = H.coeff(K({i}, {j}, {j}, zero, 1));
      for (const auto& ell : ells) {
        const double D = omega_dot(freq, ell) + freq.Omega(j);
        for (int ip = 0; ip < n; ++ip) {
          if (ell[ip] == 0) continue;
          const TermKey kd = K({i}, {j}, {}, ell, 1);
          const C num = H.coeff(kd) * H.coeff(K({ip}, {}, {j}, ell, -1)) +
                        H.coeff(K({i}, {}, {j}, ell, -1)) * H.coeff(K({ip}, {j}, {}, ell, 1));
          if (num == C(0)) continue;
          check_div(D, kd, policy);
          Q(j, i) -= double(ell[ip]) * num / D;
          add_shell(ell, std::abs(double(ell[ip]) * num / D));
        }
        for (int jp = 0; jp < m; ++jp) {
          const double Dp = omega_dot(freq, ell) + freq.Omega(jp);
          const TermKey kd = K({i}, {jp}, {}, ell, 1);
          const C num = H.coeff(K({}, {j}, {j, jp}, ell, -1)) * H.coeff(kd) +
                        H.coeff(K({}, {j, jp}, {j}, ell, 1)) * H.coeff(K({i}, {}, {jp}, ell, -1));
          if (num == C(0)) continue;
          check_div(Dp, kd, policy);
          // z_j zbar_j^2 (and its conjugate) differentiates with a factor 2 when jp == j.
          const double w = jp == j ? 2.0 : 1.0;
          Q(j, i) -= w * num / Dp;
          add_shell(ell, std::abs(w * num / Dp));
        }
      }
    }
  MatrixReport rep;
  rep.imag_residual = Q.imag().cwiseAbs().maxCoeff();
  rep.value = Q.real();
  rep.tail_estimate = geometric_tail(shells);
  return rep;
}

TFSeries NormalFormResult::chi_total() const {
  TFSeries total = chi.empty() ? TFSeries(H_avg.n(), H_avg.m(), H_avg.caps()) : chi.front();
  for (std::size_t d = 1; d < chi.size(); ++d) total += chi[d];
  total.set_real_flag(true);
  return total;
}

NormalFormResult averaged_normal_form(const TFSeries& H_star, const FrequencyData& freq, double eta,
                                      const NormalFormOptions& opt) {
  if (!(eta > 0)) fail(ErrorKind::Invariant, "averaged_normal_form: eta must be positive");
  if (!H_star.real_flagged()) fail(ErrorKind::Invariant, "averaged_normal_form: H is not real-flagged");
  if (H_star.caps().degree < 6)
    fail(ErrorKind::Invariant, "averaged_normal_form: degree cap must be at least 6 (third order plus one guard)");
  const int n = H_star.n(), m = H_star.m();
  DivisorPolicy policy = opt.divisor;
  policy.gamma = freq.gamma;
  policy.tau = freq.tau;

  NormalFormResult nf;
  nf.eta = eta;
  NormalFormDiagnostics& dg = nf.diag;
  dg.min_divisor_ratio = std::numeric_limits<double>::infinity();
  for (const auto& [key, c] : H_star)
    if (in_eliminated_class(key))
      dg.min_divisor_ratio = std::min(dg.min_divisor_ratio, std::abs(divisor(key, freq)) / policy.bound(key));

  // Order by order: the degree-(d+2) slice of exp(L_{chi_<d}) H* determines chi_d, and adding
  // chi_d changes that slice only through {R0, chi_d}.
  TFSeries chi_sum(n, m, H_star.caps());
  chi_sum.set_real_flag(true);
  for (int d = 1; d <= 3; ++d) {
    const TFSeries current = chi_sum.empty() ? H_star : lie_series(H_star, chi_sum);
    TFSeries chi_d = build_generating_function(degree_slice(current, d + 2), freq, d, policy);
    chi_d.set_real_flag(true);
    nf.chi.push_back(chi_d);
    chi_sum += chi_d;
    chi_sum.set_real_flag(true);
  }
  const auto lt = lie_transform(H_star, nf.chi, 3);
  nf.H_avg = lt.polynomial + lt.remainder;
  dg.truncation_loss = nf.H_avg.truncation_loss();

  const auto reality = check_reality(nf.H_avg);
  dg.reality_violation = reality.max_violation;
  nf.H_avg.set_real_flag(reality.passes(1e-12));
  if (!nf.H_avg.real_flagged())
    fail(ErrorKind::Internal, "averaged_normal_form: reality lost at " + reality.worst_key.str() + " by " +
                                  std::to_string(reality.max_violation) + " coeff " +
                                  std::to_string(std::abs(nf.H_avg.coeff(reality.worst_key))));

  for (const auto& [key, c] : nf.H_avg)
    if (in_eliminated_class(key)) dg.eliminated_residual = std::max(dg.eliminated_residual, std::abs(c));
  if (dg.eliminated_residual > opt.eliminated_tol)
    fail(ErrorKind::Internal, "averaged_normal_form: eliminated class survives with size " +
                                  std::to_string(dg.eliminated_residual));

  nf.R = twist_from_slice(nf.H_avg);
  nf.Q = coupling_from_slice(nf.H_avg);
  {
    double ri = 0, qi = 0;
    for (const auto& [key, c] : nf.H_avg) {
      const auto cls = resonant_set_member(key);
      if (cls == ResonantClass::S2_2) ri = std::max(ri, std::abs(c.imag()));
      if (cls == ResonantClass::S2_1) qi = std::max(qi, std::abs(c.imag()));
    }
    dg.R_imag = ri;
    dg.Q_imag = qi;
  }
  const auto Rd = compute_twist_matrix(H_star, freq, policy);
  const auto Qd = compute_coupling_matrix(H_star, freq, policy);
  dg.R_asymmetry = Rd.asymmetry;
  dg.R_tail = Rd.tail_estimate;
  dg.Q_tail = Qd.tail_estimate;
  dg.R_imag = std::max(dg.R_imag, Rd.imag_residual);
  dg.Q_imag = std::max(dg.Q_imag, Qd.imag_residual);
  dg.R_slice_vs_direct = (nf.R - Rd.value).cwiseAbs().maxCoeff();
  dg.Q_slice_vs_direct = m ? (nf.Q - Qd.value).cwiseAbs().maxCoeff() : 0.0;
  const double scale = 1.0 + std::max(Rd.value.cwiseAbs().maxCoeff(), m ? Qd.value.cwiseAbs().maxCoeff() : 0.0);
  if (dg.R_slice_vs_direct > opt.cross_check_tol * scale || dg.Q_slice_vs_direct > opt.cross_check_tol * scale)
    fail(ErrorKind::Internal, "averaged_normal_form: twist/coupling cross-check mismatch (R " +
                                  std::to_string(dg.R_slice_vs_direct) + ", Q " +
                                  std::to_string(dg.Q_slice_vs_direct) + ")");

  std::map<int, double> shells;
  for (const auto& [key, c] : H_star) shells[key.ell_norm1()] += std::abs(c);
  dg.fourier_tail = geometric_tail(shells);
  return nf;
}

TFSeries integrable_skeleton(const NormalFormResult& nf, const FrequencyData& freq, double eta) {
  const int n = nf.H_avg.n(), m = nf.H_avg.m();
  auto b = nf.H_avg.builder();
  const double e2 = eta * eta;
  for (int i = 0; i < n; ++i) {
    TermKey key(n, m);
    key.k_ref(i) = 1;
    b.add(key, freq.omega(i));
    for (int ip = i; ip < n; ++ip) {
      TermKey kk(n, m);
      ++kk.k_ref(i);
      ++kk.k_ref(ip);
      b.add(kk, e2 * (i == ip ? 0.5 : 1.0) * nf.R(i, ip));
    }
    for (int j = 0; j < m; ++j) {
      TermKey kz(n, m);
      kz.k_ref(i) = 1;
      kz.a_ref(j) = 1;
      kz.abar_ref(j) = 1;
      b.add(kz, e2 * nf.Q(j, i));
    }
  }
  for (int j = 0; j < m; ++j) {
    TermKey key(n, m);
    key.a_ref(j) = 1;
    key.abar_ref(j) = 1;
    b.add(key, freq.Omega(j));
  }
  return std::move(b).finish(true);
}

}  // namespace eltor
