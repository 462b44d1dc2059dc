#include "eltor/io.hpp"

#include <fstream>
#include <sstream>

namespace eltor {

namespace {
std::vector<int> ints(const json& j, const char* key, std::size_t expect) {
  if (!j.contains(key)) {
    if (expect == 0) return {};
    return std::vector<int>(expect, 0);
  }
  auto v = j.at(key).get<std::vector<int>>();
  if (v.size() != expect)
    fail(ErrorKind::Parse, std::string("term field '") + key + "' has " + std::to_string(v.size()) +
                               " entries, expected " + std::to_string(expect));
  return v;
}
}  // namespace

json series_to_json(const TFSeries& f) {
  json terms = json::array();
  for (const auto& [key, c] : f) {
    std::vector<int> k(f.n()), a(f.m()), ab(f.m()), ell(f.n());
    for (int i = 0; i < f.n(); ++i) {
      k[i] = key.k(i);
      ell[i] = key.ell(i);
    }
    for (int j = 0; j < f.m(); ++j) {
      a[j] = key.a(j);
      ab[j] = key.abar(j);
    }
    terms.push_back({{"k", k}, {"a", a}, {"abar", ab}, {"ell", ell}, {"re", c.real()}, {"im", c.imag()}});
  }
  return {{"n", f.n()},
          {"m", f.m()},
          {"degree_cap", f.caps().degree},
          {"fourier_cap", f.caps().fourier},
          {"terms", terms}};
}

TFSeries series_from_json(const json& j) {
  try {
    const int n = j.at("n").get<int>(), m = j.at("m").get<int>();
    if (n < 1 || m < 0) fail(ErrorKind::Parse, "series: need n >= 1 and m >= 0");
    SeriesCaps caps;
    caps.degree = j.value("degree_cap", caps.degree);
    caps.fourier = j.value("fourier_cap", caps.fourier);
    if (caps.degree < 0 || caps.fourier < 0) fail(ErrorKind::Parse, "series: caps must be nonnegative");
    SeriesBuilder<double> b(n, m, caps);
    for (const auto& t : j.at("terms")) {
      const auto k = ints(t, "k", n), a = ints(t, "a", m), ab = ints(t, "abar", m), ell = ints(t, "ell", n);
      const TermKey key = TermKey::make(n, m, k, a, ab, ell);
      if (!caps.admits(key))
        fail(ErrorKind::Invariant, "series: term " + key.str() + " exceeds the declared caps");
      b.add(key, {t.value("re", 0.0), t.value("im", 0.0)});
    }
    auto s = std::move(b).finish(false);
    s.set_real_flag(check_reality(s).passes(1e-12));
    return s;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("series: ") + e.what());
  }
}

FrequencyData extract_frequencies(const TFSeries& H, double gamma, double tau) {
  const int n = H.n(), m = H.m();
  const auto rep = check_reality(H);
  if (!rep.passes(1e-12))
    fail(ErrorKind::Invariant, "Hamiltonian violates the reality condition at " + rep.worst_key.str() +
                                   " (violation " + std::to_string(rep.max_violation) + ")");
  FrequencyData f;
  f.omega = Eigen::VectorXd::Zero(n);
  f.Omega = Eigen::VectorXd::Zero(m);
  f.gamma = gamma;
  f.tau = tau;
  for (const auto& [key, c] : H) {
    const int d = key.degree();
    if (d == 1) fail(ErrorKind::Invariant, "Hamiltonian has a linear term " + key.str());
    if (d != 2) continue;
    bool ok = key.ell_zero() && std::abs(c.imag()) <= 1e-14 * std::max(1.0, std::abs(c));
    if (ok && key.k_norm() == 1) {
      for (int i = 0; i < n; ++i)
        if (key.k(i)) f.omega(i) = c.real();
    } else if (ok && key.z_degree() == 2 && key.a_equals_abar()) {
      for (int j = 0; j < m; ++j)
        if (key.a(j)) f.Omega(j) = c.real();
    } else {
      fail(ErrorKind::Invariant, "quadratic part must be omega.I + Omega z zbar; offending term " + key.str());
    }
  }
  if (!(gamma > 0 && tau > 0)) fail(ErrorKind::Invariant, "gamma and tau must be positive");
  return f;
}

Model model_from_json(const json& j, const std::string& name) {
  Model md;
  md.name = j.value("name", name);
  md.H = series_from_json(j);
  md.freq = extract_frequencies(md.H, j.value("gamma", 1e-3), j.value("tau", 2.0));
  md.H.set_real_flag(true);
  if (j.contains("relations")) {
    try {
      for (const auto& r : j.at("relations"))
        md.relations.push_back({r.at("j").get<int>(), r.at("M").get<int>(), r.at("a").get<std::vector<int>>()});
    } catch (const json::exception& e) {
      fail(ErrorKind::Parse, std::string("relations: ") + e.what());
    }
  }
  for (const auto& [k, v] : j.items())
    if (k != "n" && k != "m" && k != "degree_cap" && k != "fourier_cap" && k != "terms" && k != "gamma" &&
        k != "tau" && k != "relations" && k != "name")
      md.extra[k] = v;
  return md;
}

Model load_model(const std::filesystem::path& path) {
  return model_from_json(read_json(path), path.stem().string());
}

json model_to_json(const Model& md) {
  json j = series_to_json(md.H);
  j["name"] = md.name;
  j["gamma"] = md.freq.gamma;
  j["tau"] = md.freq.tau;
  if (!md.relations.empty()) {
    json rel = json::array();
    for (const auto& r : md.relations) rel.push_back({{"j", r.j}, {"M", r.M}, {"a", r.a}});
    j["relations"] = rel;
  }
  for (const auto& [k, v] : md.extra.items()) j[k] = v;
  return j;
}

json matrix_to_json(const Eigen::MatrixXd& A) {
  json rows = json::array();
  for (int i = 0; i < A.rows(); ++i) {
    std::vector<double> r(A.cols());
    for (int c = 0; c < A.cols(); ++c) r[c] = A(i, c);
    rows.push_back(r);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  const int r = static_cast<int>(rows.size()), c = r ? static_cast<int>(rows[0].size()) : 0;
  Eigen::MatrixXd A(r, c);
  for (int i = 0; i < r; ++i) {
    if (static_cast<int>(rows[i].size()) != c) fail(ErrorKind::Parse, "ragged matrix");
    for (int k = 0; k < c; ++k) A(i, k) = rows[i][k];
  }
  return A;
}

json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
json vector_to_json(const Eigen::VectorXi& v) { return std::vector<int>(v.data(), v.data() + v.size()); }

std::string dump_artifact(const json& j) { return j.dump(2) + "\n"; }

void write_artifact(const std::filesystem::path& p, const json& j) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) fail(ErrorKind::Parse, "cannot write " + p.string());
  os << dump_artifact(j);
}

json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) fail(ErrorKind::Parse, "cannot open " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, p.string() + ": " + e.what());
  }
}

}  // namespace eltor
