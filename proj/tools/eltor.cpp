#include <iostream>

#include <CLI11.hpp>

#include "eltor/pipeline.hpp"
#include "eltor/resonance.hpp"

namespace {

using eltor::PipelineConfig;

// Flags shared by every pipeline subcommand. Values given on the command line override the
// config file, which overrides the built-in defaults.
struct Flags {
  std::string config, input, out, stages, period_method, integrator;
  std::vector<double> eta;
  double t0 = 0, budget = 0, tol_divisor = 0, tol_eliminated = 0, tol_contraction = 0, tol_closure = 0,
         tol_verify = 0, tol_energy = 0;
  int degree_cap = 0, fourier_cap = 0, grid = 0, threads = 0;
  std::uint64_t seed = 0;
  bool quiet = false;
  std::map<std::string, CLI::Option*> opt;

  void attach(CLI::App* app, bool with_stages) {
    opt["config"] = app->add_option("--config", config, "JSON config file");
    opt["input"] = app->add_option("--input,-i", input, "Hamiltonian model (JSON)");
    opt["out"] = app->add_option("--out,-o", out, "output directory");
    opt["eta"] = app->add_option("--eta", eta, "rescaling parameter(s)");
    opt["t0"] = app->add_option("--t0", t0, "start of the period search (default 1/eta^2)");
    opt["budget"] = app->add_option("--budget", budget, "ergodization-time budget");
    opt["degree_cap"] = app->add_option("--degree-cap", degree_cap, "series degree cap");
    opt["fourier_cap"] = app->add_option("--fourier-cap", fourier_cap, "series Fourier cap");
    opt["grid"] = app->add_option("--grid", grid, "quotient-torus samples per dimension");
    opt["tol_divisor"] = app->add_option("--tol-divisor", tol_divisor, "small-divisor floor");
    opt["tol_eliminated"] = app->add_option("--tol-eliminated", tol_eliminated, "eliminated-class tolerance");
    opt["tol_contraction"] = app->add_option("--tol-contraction", tol_contraction, "fixed-point stop tolerance");
    opt["tol_closure"] = app->add_option("--tol-closure", tol_closure, "action closure tolerance");
    opt["tol_verify"] = app->add_option("--tol-verify", tol_verify, "reintegration closure tolerance");
    opt["tol_energy"] = app->add_option("--tol-energy", tol_energy, "energy drift per unit time");
    opt["threads"] = app->add_option("--threads", threads, "worker threads");
    opt["period_method"] = app->add_option("--period-method", period_method, "auto, a or b");
    opt["integrator"] = app->add_option("--integrator", integrator, "rk8 or rk4");
    opt["seed"] = app->add_option("--seed", seed, "seed for the randomized Lipschitz probe");
    if (with_stages) opt["stages"] = app->add_option("--stages", stages, "comma-separated stage list");
    app->add_flag("--quiet,-q", quiet, "suppress progress output");
  }

  bool given(const std::string& k) const {
    auto it = opt.find(k);
    return it != opt.end() && it->second->count() > 0;
  }

  PipelineConfig build(const std::vector<std::string>& default_stages) const {
    PipelineConfig c;
    c.stages = default_stages;
    if (given("config")) c = PipelineConfig::from_json(eltor::read_json(config), c);
    if (given("input")) c.input = input;
    if (given("out")) c.out = out;
    if (given("eta")) c.eta = eta;
    if (given("t0")) c.t0 = t0;
    if (given("budget")) c.budget = budget;
    if (given("degree_cap")) c.degree_cap = degree_cap;
    if (given("fourier_cap")) c.fourier_cap = fourier_cap;
    if (given("grid")) c.grid_per_dim = grid;
    if (given("tol_divisor")) c.tol_divisor = tol_divisor;
    if (given("tol_eliminated")) c.tol_eliminated = tol_eliminated;
    if (given("tol_contraction")) c.tol_contraction = tol_contraction;
    if (given("tol_closure")) c.tol_closure = tol_closure;
    if (given("tol_verify")) c.tol_verify = tol_verify;
    if (given("tol_energy")) c.tol_energy = tol_energy;
    if (given("threads")) c.threads = threads;
    if (given("period_method")) c.period_method = period_method;
    if (given("integrator")) c.integrator = integrator;
    if (given("seed")) c.seed = seed;
    if (given("stages")) {
      c.stages.clear();
      std::stringstream ss(stages);
      for (std::string s; std::getline(ss, s, ',');)
        if (!s.empty()) c.stages.push_back(s);
    }
    return c;
  }
};

std::vector<std::string> stages_through(const std::string& last) {
  std::vector<std::string> s;
  for (const auto& st : eltor::pipeline_stages()) {
    if (st != "melnikov" || last == "melnikov") s.push_back(st);
    if (st == last) break;
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Periodic orbits near elliptic tori: normal form, period selection and orbit search"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> stage_cmds{
      {"melnikov", "check the second-order Melnikov conditions"},
      {"resonances", "detect or certify elliptic resonances"},
      {"normalform", "averaged normal form, twist and coupling matrices"},
      {"periods", "select certified periods for each eta"},
      {"orbits", "pseudo-periodic solutions and critical points of the reduced action"},
      {"verify", "reintegrate the orbits and report closure and sup norms"}};
  std::map<std::string, std::unique_ptr<Flags>> flags;
  std::map<std::string, CLI::App*> cmds;
  for (const auto& [name, help] : stage_cmds) {
    cmds[name] = app.add_subcommand(name, help);
    flags[name] = std::make_unique<Flags>();
    flags[name]->attach(cmds[name], false);
  }
  cmds["run"] = app.add_subcommand("run", "run the full pipeline (stage selection with --stages)");
  flags["run"] = std::make_unique<Flags>();
  flags["run"]->attach(cmds["run"], true);

  double T = 10, c1 = 1, c2 = 1, c3 = 1, eps1 = 1, T_max = 1e6;
  std::string window_out;
  auto* win = app.add_subcommand("window", "admissible epsilon window for a given period");
  win->add_option("--T", T, "period")->required();
  win->add_option("--c1", c1, "constant c1");
  win->add_option("--c2", c2, "constant c2");
  win->add_option("--c3", c3, "constant c3");
  win->add_option("--eps1", eps1, "constant eps1");
  win->add_option("--T-max", T_max, "upper end of the threshold scan");
  win->add_option("--out,-o", window_out, "output directory (prints to stdout when absent)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (win->parsed()) {
      const auto w = eltor::epsilon_window(T, c1, c2, c3, eps1);
      const auto T0 = eltor::window_threshold(c1, c2, c3, eps1, T_max);
      eltor::json j = {{"T", T},         {"c1", c1},           {"c2", c2},
                       {"c3", c3},       {"eps1", eps1},       {"eps_lo", w.eps_lo},
                       {"eps_hi", w.eps_hi}, {"empty", w.empty()}, {"threshold_T0", T0 ? eltor::json(*T0) : eltor::json(nullptr)}};
      if (window_out.empty())
        std::cout << eltor::dump_artifact(j);
      else
        eltor::write_artifact(std::filesystem::path(window_out) / "window.json", j);
      return 0;
    }
    for (const auto& [name, cmd] : cmds) {
      if (!cmd->parsed()) continue;
      const Flags& f = *flags[name];
      const auto cfg = f.build(name == "run" ? eltor::pipeline_stages() : stages_through(name));
      const auto res = eltor::run_pipeline(cfg, f.quiet ? nullptr : &std::cerr);
      if (res.exit_code != 0) std::cerr << "eltor: " << res.failed_stage << ": " << res.message << "\n";
      return res.exit_code;
    }
  } catch (const eltor::Error& e) {
    std::cerr << "eltor: " << e.what() << "\n";
    return eltor::exit_code(e.kind());
  }
  return 0;
}
