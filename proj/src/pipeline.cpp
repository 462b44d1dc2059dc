#include "eltor/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "eltor/dynamics.hpp"
#include "eltor/normalform.hpp"
#include "eltor/orbit.hpp"

namespace eltor {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------------------------
// Configuration

json PipelineConfig::to_json() const {
  json j;
  j["input"] = input.string();
  j["out"] = out.string();
  j["eta"] = eta;
  j["t0"] = t0 ? json(*t0) : json(nullptr);
  j["budget"] = budget;
  j["degree_cap"] = degree_cap;
  j["fourier_cap"] = fourier_cap;
  j["melnikov_cutoff"] = melnikov_cutoff;
  j["period_method"] = period_method;
  j["grid_per_dim"] = grid_per_dim;
  j["grid_order"] = grid_order;
  j["radians_per_panel"] = radians_per_panel;
  j["tol"] = {{"divisor", tol_divisor},         {"eliminated", tol_eliminated}, {"contraction", tol_contraction},
              {"closure", tol_closure},         {"verify", tol_verify},         {"energy", tol_energy}};
  j["integrator"] = integrator;
  j["points_per_period"] = points_per_period;
  j["trajectory_rows"] = trajectory_rows;
  j["threads"] = threads;
  j["seed"] = seed;
  j["stages"] = stages;
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& j, PipelineConfig c) {
  static const std::set<std::string> known{"input",       "out",          "eta",        "t0",
                                           "budget",      "degree_cap",   "fourier_cap", "melnikov_cutoff",
                                           "period_method", "grid_per_dim", "grid_order", "radians_per_panel",
                                           "tol",         "integrator",   "points_per_period", "trajectory_rows",
                                           "threads",     "seed",         "stages"};
  if (!j.is_object()) fail(ErrorKind::Parse, "config: expected a JSON object");
  try {
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) fail(ErrorKind::Parse, "config: unknown key '" + k + "'");
    if (j.contains("input")) c.input = j["input"].get<std::string>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    if (j.contains("eta")) c.eta = j["eta"].is_array() ? j["eta"].get<std::vector<double>>() : std::vector{j["eta"].get<double>()};
    if (j.contains("t0")) c.t0 = j["t0"].is_null() ? std::nullopt : std::optional(j["t0"].get<double>());
    c.budget = j.value("budget", c.budget);
    c.degree_cap = j.value("degree_cap", c.degree_cap);
    c.fourier_cap = j.value("fourier_cap", c.fourier_cap);
    c.melnikov_cutoff = j.value("melnikov_cutoff", c.melnikov_cutoff);
    c.period_method = j.value("period_method", c.period_method);
    c.grid_per_dim = j.value("grid_per_dim", c.grid_per_dim);
    c.grid_order = j.value("grid_order", c.grid_order);
    c.radians_per_panel = j.value("radians_per_panel", c.radians_per_panel);
    if (j.contains("tol")) {
      const auto& t = j["tol"];
      static const std::set<std::string> tk{"divisor", "eliminated", "contraction", "closure", "verify", "energy"};
      for (const auto& [k, v] : t.items())
        if (!tk.count(k)) fail(ErrorKind::Parse, "config: unknown tolerance '" + k + "'");
      c.tol_divisor = t.value("divisor", c.tol_divisor);
      c.tol_eliminated = t.value("eliminated", c.tol_eliminated);
      c.tol_contraction = t.value("contraction", c.tol_contraction);
      c.tol_closure = t.value("closure", c.tol_closure);
      c.tol_verify = t.value("verify", c.tol_verify);
      c.tol_energy = t.value("energy", c.tol_energy);
    }
    c.integrator = j.value("integrator", c.integrator);
    c.points_per_period = j.value("points_per_period", c.points_per_period);
    c.trajectory_rows = j.value("trajectory_rows", c.trajectory_rows);
    c.threads = j.value("threads", c.threads);
    c.seed = j.value("seed", c.seed);
    if (j.contains("stages")) c.stages = j["stages"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig PipelineConfig::from_json(const json& j) { return from_json(j, PipelineConfig{}); }

void PipelineConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0)) fail(ErrorKind::Invariant, std::string("config: ") + what + " must be > 0");
  };
  positive(tol_divisor, "tol.divisor");
  positive(tol_eliminated, "tol.eliminated");
  positive(tol_contraction, "tol.contraction");
  positive(tol_closure, "tol.closure");
  positive(tol_verify, "tol.verify");
  positive(tol_energy, "tol.energy");
  positive(budget, "budget");
  positive(points_per_period, "points_per_period");
  positive(radians_per_panel, "radians_per_panel");
  if (t0) positive(*t0, "t0");
  if (threads < 1) fail(ErrorKind::Invariant, "config: threads must be >= 1");
  if (grid_per_dim < 3) fail(ErrorKind::Invariant, "config: grid_per_dim must be >= 3");
  if (grid_order < 4) fail(ErrorKind::Invariant, "config: grid_order must be >= 4");
  if (melnikov_cutoff < 1) fail(ErrorKind::Invariant, "config: melnikov_cutoff must be >= 1");
  if (period_method != "auto" && period_method != "a" && period_method != "b")
    fail(ErrorKind::Invariant, "config: period_method must be auto, a or b");
  method_from_string(integrator);
  for (const auto& s : stages)
    if (std::find(pipeline_stages().begin(), pipeline_stages().end(), s) == pipeline_stages().end())
      fail(ErrorKind::Invariant, "config: unknown stage '" + s + "'");
  if ((has_stage("periods") || has_stage("orbits") || has_stage("verify")) && eta.empty())
    fail(ErrorKind::Invariant, "config: eta list must be nonempty for orbit stages");
  for (double e : eta) positive(e, "eta");
  if (input.empty()) fail(ErrorKind::Invariant, "config: input path is required");
}

bool PipelineConfig::has_stage(const std::string& s) const {
  return std::find(stages.begin(), stages.end(), s) != stages.end();
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string eta_tag(double eta) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "eta_%.6g", eta);
  return buf;
}

json cvec_to_json(const Eigen::VectorXcd& v) {
  json re = json::array(), im = json::array();
  for (int i = 0; i < v.size(); ++i) {
    re.push_back(v(i).real());
    im.push_back(v(i).imag());
  }
  return {{"re", re}, {"im", im}};
}

json state_to_json(const PhaseState& s) {
  return {{"I", vector_to_json(s.I)}, {"phi", vector_to_json(s.phi)}, {"z", cvec_to_json(s.z)}};
}

json certificate_to_json(const PeriodCertificate& c) {
  return {{"kind", c.kind == CertificateKind::LemmaA ? "lemma_a" : "lemma_b"},
          {"T", c.T},
          {"T_lo", c.T_lo},
          {"T_hi", c.T_hi},
          {"d_bound", c.d_bound},
          {"minv_bound", c.minv_bound},
          {"measured_dist", c.measured_dist},
          {"beta", c.beta},
          {"d0", c.d0},
          {"delta", c.delta},
          {"Theta", c.Theta},
          {"d1", c.d1},
          {"alpha", c.alpha},
          {"theta", c.theta},
          {"tau_shift", c.tau_shift},
          {"skipped", c.skipped}};
}

json contraction_to_json(const ContractionReport& r) {
  return {{"iterations", r.iterations},
          {"LP0", r.LP0},
          {"delta0", r.delta0},
          {"lipschitz_measured", r.lipschitz_measured},
          {"lipschitz_allowed", r.lipschitz_allowed},
          {"max_ratio", r.max_ratio},
          {"final_step", r.final_step},
          {"solution_norm", r.solution_norm},
          {"restricted_to_w0", r.restricted_to_w0}};
}

struct EtaRun {
  double eta = 0, t0 = 0;
  PeriodCertificate cert;
  std::string refusal_a, refusal_b;
  std::optional<PeriodSetup> setup;
  std::unique_ptr<OrbitProblem> problem;
  std::vector<OrbitSolution> solutions;
  CriticalSearchReport search;
  std::vector<VerifyReport> verify;
  std::vector<OriginalNorms> original;
};

class Pipeline {
 public:
  Pipeline(const PipelineConfig& cfg, std::ostream* log) : cfg_(cfg), log_(log) {}

  void run(PipelineOutcome& out) {
    out_ = &out;
    stage_ = "config";
    cfg_.validate();
    fs::create_directories(cfg_.out);
    stage_ = "input";
    model_ = load_model(cfg_.input);
    model_.H = model_.H.with_caps({cfg_.degree_cap, cfg_.fourier_cap, model_.H.caps().drop_tol});
    if (model_.H.truncation_loss() > 0)
      note("input: " + std::to_string(model_.H.truncation_loss()) + " terms beyond the caps were dropped");
    if (cfg_.has_stage("melnikov")) melnikov();
    if (needs("resonances")) resonances();
    if (needs("normalform")) normalform();
    if (needs("periods")) periods();
    if (needs("orbits")) orbits();
    if (cfg_.has_stage("verify")) verify();
  }

  const std::string& stage() const { return stage_; }

 private:
  // A stage runs when selected or when a later selected stage depends on it.
  bool needs(const std::string& s) const {
    const auto& all = pipeline_stages();
    const auto pos = std::find(all.begin(), all.end(), s) - all.begin();
    for (std::size_t i = pos; i < all.size(); ++i)
      if (all[i] != "melnikov" && cfg_.has_stage(all[i])) return true;
    return false;
  }

  void note(const std::string& msg) {
    if (log_) *log_ << "[" << stage_ << "] " << msg << "\n";
  }

  void write(const fs::path& rel, json j) {
    j["config"] = cfg_.to_json();
    j["model"] = model_.name;
    const fs::path p = cfg_.out / rel;
    write_artifact(p, j);
    out_->artifacts.push_back(p);
  }

  void melnikov() {
    stage_ = "melnikov";
    const auto rep = melnikov_check(model_.freq, cfg_.melnikov_cutoff);
    write("melnikov.json", {{"passes", rep.passes()},
                            {"min_margin", rep.min_margin},
                            {"worst_ell", vector_to_json(rep.worst_ell)},
                            {"worst_h", vector_to_json(rep.worst_h)},
                            {"cutoff", rep.cutoff},
                            {"pairs_checked", rep.pairs_checked},
                            {"omega", vector_to_json(model_.freq.omega)},
                            {"Omega", vector_to_json(model_.freq.Omega)},
                            {"gamma", model_.freq.gamma},
                            {"tau", model_.freq.tau}});
    std::ostringstream os;
    os << "min margin " << rep.min_margin << " at ell=(" << rep.worst_ell.transpose() << ") h=("
       << rep.worst_h.transpose() << ")";
    note(os.str());
    if (!rep.passes()) fail(ErrorKind::Melnikov, "second-order Melnikov condition fails: " + os.str());
  }

  void resonances() {
    stage_ = "resonances";
    rs_ = model_.relations.empty() ? detect_resonances(model_.freq) : certify_declared(model_.freq, model_.relations, 1e-9);
    json rel = json::array();
    for (const auto& r : rs_.relations) rel.push_back({{"M", r.M}, {"a", vector_to_json(r.a)}});
    const auto cond = condition_a_violation(rs_);
    write("resonances.json", {{"m_hat", rs_.m_hat},
                              {"n_hat", rs_.n_hat()},
                              {"reorder", rs_.reorder},
                              {"relations", rel},
                              {"declared", rs_.declared},
                              {"max_residual", rs_.max_residual},
                              {"condition_a", cond ? json(*cond) : json("satisfied")}});
    note("m_hat = " + std::to_string(rs_.m_hat));
  }

  void normalform() {
    stage_ = "normalform";
    NormalFormOptions opt;
    opt.divisor = {model_.freq.gamma, model_.freq.tau, cfg_.tol_divisor};
    opt.eliminated_tol = cfg_.tol_eliminated;
    nf_ = averaged_normal_form(model_.H, model_.freq, cfg_.eta.empty() ? 0.1 : cfg_.eta.front(), opt);
    const auto& d = nf_->diag;
    json chi = json::array();
    for (const auto& c : nf_->chi) chi.push_back(series_to_json(c));
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(nf_->R);
    write("normalform.json",
          {{"R", matrix_to_json(nf_->R)},
           {"Q", matrix_to_json(nf_->Q)},
           {"R_norm", nf_->R.cwiseAbs().maxCoeff()},
           {"R_invertible", lu.isInvertible()},
           {"H_avg", series_to_json(nf_->H_avg)},
           {"chi", chi},
           {"diagnostics",
            {{"eliminated_residual", d.eliminated_residual},
             {"reality_violation", d.reality_violation},
             {"R_asymmetry", d.R_asymmetry},
             {"R_imag", d.R_imag},
             {"Q_imag", d.Q_imag},
             {"R_slice_vs_direct", d.R_slice_vs_direct},
             {"Q_slice_vs_direct", d.Q_slice_vs_direct},
             {"R_tail", d.R_tail},
             {"Q_tail", d.Q_tail},
             {"fourier_tail", d.fourier_tail},
             {"min_divisor_ratio", d.min_divisor_ratio},
             {"truncation_loss", d.truncation_loss}}}});
    note("|R| = " + short_num(nf_->R.cwiseAbs().maxCoeff()) + ", eliminated residual " + short_num(d.eliminated_residual));
    if (!lu.isInvertible())
      fail(ErrorKind::TwistSingular, "twist matrix is singular (max |R_ij| = " + short_num(nf_->R.cwiseAbs().maxCoeff()) +
                                         "); resonant actions cannot be solved for");
  }

  void periods() {
    stage_ = "periods";
    json entries = json::array();
    for (double eta : cfg_.eta) {
      EtaRun r;
      r.eta = eta;
      r.t0 = cfg_.t0 ? *cfg_.t0 : 1.0 / (eta * eta);
      bool ok = false;
      if (cfg_.period_method != "b") {
        try {
          r.cert = select_period_lemma_a(model_.freq, rs_, nf_->R, nf_->Q, r.t0, {cfg_.budget});
          ok = true;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::PeriodRefused) throw;
          r.refusal_a = e.what();
        }
      }
      if (!ok && cfg_.period_method != "a") {
        try {
          r.cert = select_period_lemma_b(model_.freq, nf_->R, nf_->Q, r.t0);
          ok = true;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::PeriodRefused) throw;
          r.refusal_b = e.what();
        }
      }
      json e = {{"eta", eta}, {"t0", r.t0}};
      if (!r.refusal_a.empty()) e["refusal_a"] = r.refusal_a;
      if (!r.refusal_b.empty()) e["refusal_b"] = r.refusal_b;
      if (ok) {
        e["certificate"] = certificate_to_json(r.cert);
        r.setup = make_period_setup(*nf_, model_.freq, eta, r.cert.T, r.cert.minv_bound);
        const auto& s = *r.setup;
        e["k"] = vector_to_json(s.k_vec);
        e["I0"] = vector_to_json(s.I0);
        e["omega_tilde"] = vector_to_json(s.omega_tilde);
        e["Omega_eta"] = vector_to_json(s.Omega_eta);
        e["monodromy"] = {{"min_dist", monodromy_gap(s.Omega_eta, s.T).min_dist},
                          {"minv_norm", monodromy_gap(s.Omega_eta, s.T).minv_norm}};
        note(eta_tag(eta) + ": T = " + short_num(s.T) + " (" + (r.cert.kind == CertificateKind::LemmaA ? "a" : "b") + ")");
      }
      entries.push_back(e);
      if (!ok) {
        write("certificates.json", {{"entries", entries}});
        fail(ErrorKind::PeriodRefused, "period selection refused for eta = " + short_num(eta) + ":" +
                                           (r.refusal_a.empty() ? std::string() : " [a] " + r.refusal_a) +
                                           (r.refusal_b.empty() ? std::string() : " [b] " + r.refusal_b));
      }
      runs_.push_back(std::move(r));
    }
    write("certificates.json", {{"entries", entries}});
  }

  void orbits() {
    stage_ = "orbits";
    for (auto& r : runs_) {
      OrbitOptions oo;
      oo.grid_order = cfg_.grid_order;
      oo.radians_per_panel = cfg_.radians_per_panel;
      oo.threads = cfg_.threads;
      oo.contraction.stop_tol = cfg_.tol_contraction;
      oo.contraction.seed = cfg_.seed;
      r.problem = std::make_unique<OrbitProblem>(nf_->rescaled(r.eta), *r.setup, oo);
      CriticalSearchOptions so;
      so.grid_per_dim = cfg_.grid_per_dim;
      so.closure_tol = cfg_.tol_closure;
      r.solutions = find_critical_points(*r.problem, so, &r.search);
      for (const auto& s : r.solutions) write(orbit_file(r, s), orbit_json(r, s));
      note(eta_tag(r.eta) + ": " + std::to_string(r.solutions.size()) + " orbits");
      write_summary(false);
    }
  }

  fs::path orbit_file(const EtaRun& r, const OrbitSolution& s) const {
    return fs::path("orbits") / (eta_tag(r.eta) + "_" + to_string(s.kind) + ".json");
  }

  json orbit_json(const EtaRun& r, const OrbitSolution& s) const {
    const auto& su = *r.setup;
    const auto& g = r.problem->grid();
    const auto& o = s.orbit;
    const int N = g.size();
    const int stride = std::max(1, N / 256);
    json t = json::array(), I = json::array(), phi = json::array(), zr = json::array(), zi = json::array();
    for (int q = 0; q < N; q += stride) {
      t.push_back(g.t()(q));
      I.push_back(vector_to_json(Eigen::VectorXd(o.I.col(q))));
      phi.push_back(vector_to_json(Eigen::VectorXd(o.phi.col(q))));
      zr.push_back(vector_to_json(Eigen::VectorXd(o.z.col(q).real())));
      zi.push_back(vector_to_json(Eigen::VectorXd(o.z.col(q).imag())));
    }
    const auto gb = r.problem->green().bound();
    return {{"eta", r.eta},
            {"T", su.T},
            {"k", vector_to_json(su.k_vec)},
            {"I0", vector_to_json(su.I0)},
            {"omega_tilde", vector_to_json(su.omega_tilde)},
            {"Omega_eta", vector_to_json(su.Omega_eta)},
            {"kind", to_string(s.kind)},
            {"phi_star", vector_to_json(s.phi_star)},
            {"initial_state", state_to_json(o.state_at_node(0))},
            {"action", s.action_value},
            {"action_imag", o.action_imag},
            {"closure_residual", s.closure_residual},
            {"ode_residual", o.ode_residual},
            {"boundary_residual", o.boundary_residual},
            {"refine_iterations", s.refine_iterations},
            {"degenerate_family", s.degenerate_family},
            {"min_period",
             {{"lower_bound", s.min_period_lower_bound},
              {"asymptotic", minimal_period_asymptotic(su.T, model_.freq.tau)},
              {"self_distance", s.min_period_self_distance}}},
            {"contraction", contraction_to_json(o.contraction)},
            {"green_bound", {{"rigorous", gb.rigorous}, {"displayed", gb.displayed}, {"C", gb.C}}},
            {"grid", {{"panels", g.panels()}, {"order", g.order()}, {"nodes", N}}},
            {"quotient_scan", {{"actions", r.search.grid_actions}, {"dropped", r.search.dropped}}},
            {"samples", {{"t", t}, {"I", I}, {"phi", phi}, {"z_re", zr}, {"z_im", zi}}}};
  }

  void verify() {
    stage_ = "verify";
    IntegratorConfig ic;
    ic.method = method_from_string(cfg_.integrator);
    ic.points_per_period = cfg_.points_per_period;
    json orbits = json::array();
    std::vector<double> etas, sup_i, sup_ii;
    std::string failure;
    for (auto& r : runs_) {
      const auto& su = *r.setup;
      const TFSeries chi = rescale(nf_->chi_total(), r.eta);
      double wi = 0, wii = 0;
      for (const auto& s : r.solutions) {
        Trajectory tr;
        const VerifyReport v =
            verify_orbit(r.problem->hamiltonian(), s.orbit.state_at_node(0), su.T, su.k_vec, su.I0, su.omega_tilde, ic, &tr);
        const OriginalNorms on = original_coordinate_norms(chi, r.eta, tr, su.omega_tilde);
        r.verify.push_back(v);
        r.original.push_back(on);
        wi = std::max(wi, on.action_elliptic_sup);
        wii = std::max(wii, on.phase_sup);
        const bool closes = v.closure <= cfg_.tol_verify;
        const bool energy = v.energy_drift <= cfg_.tol_energy * su.T;
        if ((!closes || !energy) && failure.empty())
          failure = eta_tag(r.eta) + " " + to_string(s.kind) + ": closure " + num(v.closure) + ", energy drift " +
                    num(v.energy_drift);
        orbits.push_back({{"eta", r.eta},
                          {"T", su.T},
                          {"kind", to_string(s.kind)},
                          {"phi_star", vector_to_json(s.phi_star)},
                          {"closure", v.closure},
                          {"closure_ok", closes},
                          {"energy_drift", v.energy_drift},
                          {"energy_ok", energy},
                          {"conjugacy_defect", v.conjugacy_defect},
                          {"normal_form",
                           {{"torus_sup_I", v.torus_sup_I}, {"torus_sup_z", v.torus_sup_z}, {"phase_sup", v.phase_sup}}},
                          {"original",
                           {{"action_elliptic_sup", on.action_elliptic_sup},
                            {"phase_sup", on.phase_sup},
                            {"samples", on.samples}}},
                          {"min_period_self_distance", s.min_period_self_distance},
                          {"steps", v.steps},
                          {"dt", v.dt}});
        write_trajectory(r, s, tr);
      }
      etas.push_back(r.eta);
      sup_i.push_back(wi);
      sup_ii.push_back(wii);
    }
    json scaling = {{"eta", etas}, {"sup_i", sup_i}, {"sup_ii", sup_ii}};
    if (etas.size() >= 2) {
      scaling["exponent_i"] = loglog_slope(etas, sup_i);
      scaling["exponent_ii"] = loglog_slope(etas, sup_ii);
    }
    write("verify_report.json", {{"orbits", orbits}, {"scaling", scaling}, {"integrator", cfg_.integrator}});
    write_summary(true);
    if (!failure.empty()) fail(ErrorKind::ClosureUnmet, "verification failed: " + failure);
  }

  void write_trajectory(const EtaRun& r, const OrbitSolution& s, const Trajectory& tr) {
    const fs::path rel = fs::path("orbits") / (eta_tag(r.eta) + "_" + to_string(s.kind) + "_trajectory.csv");
    const fs::path p = cfg_.out / rel;
    fs::create_directories(p.parent_path());
    std::ofstream os(p);
    const int n = tr.states.front().n(), m = tr.states.front().m();
    os << "t";
    for (int i = 0; i < n; ++i) os << ",I" << i + 1;
    for (int i = 0; i < n; ++i) os << ",phi" << i + 1;
    for (int i = 0; i < n; ++i) os << ",phi" << i + 1 << "_wrapped";
    for (int j = 0; j < m; ++j) os << ",re_z" << j + 1 << ",im_z" << j + 1;
    os << "\n";
    const std::size_t stride = std::max<std::size_t>(1, tr.states.size() / std::max(cfg_.trajectory_rows, 1));
    for (std::size_t q = 0; q < tr.states.size(); q += stride) {
      const auto& st = tr.states[q];
      os << num(tr.t[q]);
      for (int i = 0; i < n; ++i) os << "," << num(st.I(i));
      for (int i = 0; i < n; ++i) os << "," << num(st.phi(i));
      const Eigen::VectorXd w = st.phi_wrapped();
      for (int i = 0; i < n; ++i) os << "," << num(w(i));
      for (int j = 0; j < m; ++j) os << "," << num(st.z(j).real()) << "," << num(st.z(j).imag());
      os << "\n";
    }
    out_->artifacts.push_back(p);
  }

  void write_summary(bool with_verify) {
    const fs::path p = cfg_.out / "summary.csv";
    std::ofstream os(p);
    const int n = model_.freq.n();
    os << "eta,T";
    for (int i = 0; i < n; ++i) os << ",k" << i + 1;
    for (int i = 0; i < n; ++i) os << ",phi_star" << i + 1;
    os << ",kind,action,closure_residual,ode_residual,min_period_lower_bound,min_period_asymptotic,"
          "min_period_self_distance,verify_closure,energy_drift,sup_action_elliptic,sup_phase\n";
    for (const auto& r : runs_) {
      for (std::size_t q = 0; q < r.solutions.size(); ++q) {
        const auto& s = r.solutions[q];
        const auto& su = *r.setup;
        os << num(r.eta) << "," << num(su.T);
        for (int i = 0; i < n; ++i) os << "," << su.k_vec(i);
        for (int i = 0; i < n; ++i) os << "," << num(s.phi_star(i));
        os << "," << to_string(s.kind) << "," << num(s.action_value) << "," << num(s.closure_residual) << ","
           << num(s.orbit.ode_residual) << "," << num(s.min_period_lower_bound) << ","
           << num(minimal_period_asymptotic(su.T, model_.freq.tau)) << "," << num(s.min_period_self_distance);
        if (with_verify && q < r.verify.size())
          os << "," << num(r.verify[q].closure) << "," << num(r.verify[q].energy_drift) << ","
             << num(r.original[q].action_elliptic_sup) << "," << num(r.original[q].phase_sup);
        else
          os << ",,,,";
        os << "\n";
      }
    }
    if (std::find(out_->artifacts.begin(), out_->artifacts.end(), p) == out_->artifacts.end())
      out_->artifacts.push_back(p);
  }

  PipelineConfig cfg_;
  std::ostream* log_;
  PipelineOutcome* out_ = nullptr;
  std::string stage_;
  Model model_;
  ResonanceStructure rs_;
  std::optional<NormalFormResult> nf_;
  std::vector<EtaRun> runs_;
};

}  // namespace

PipelineOutcome run_pipeline(const PipelineConfig& cfg, std::ostream* log) {
  PipelineOutcome out;
  Pipeline p(cfg, log);
  auto record = [&](int code, const std::string& kind, const std::string& msg) {
    out.exit_code = code;
    out.failed_stage = p.stage();
    out.message = msg;
    if (log) *log << "[" << p.stage() << "] error (" << kind << "): " << msg << "\n";
    try {
      json d = {{"stage", p.stage()}, {"kind", kind}, {"exit_code", code}, {"message", msg}, {"config", cfg.to_json()}};
      if (!cfg.out.empty()) {
        write_artifact(cfg.out / "diagnostic.json", d);
        out.artifacts.push_back(cfg.out / "diagnostic.json");
      }
    } catch (...) {
      // the diagnostic is best effort; the exit code already carries the failure
    }
  };
  try {
    p.run(out);
  } catch (const Error& e) {
    record(exit_code(e.kind()), to_string(e.kind()), e.what());
  } catch (const json::exception& e) {
    record(2, "parse", e.what());
  } catch (const std::exception& e) {
    record(1, "internal", e.what());
  }
  return out;
}

}  // namespace eltor
