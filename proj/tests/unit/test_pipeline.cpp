#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "eltor/io.hpp"
#include "eltor/pipeline.hpp"
#include "support/models.hpp"

using namespace eltor;
namespace fs = std::filesystem;

namespace {

const fs::path data_dir = ELTOR_DATA_DIR;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("eltor_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ELTOR_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path resonant_frequency_model(const fs::path& dir) {
  json m = {{"n", 2}, {"m", 1}, {"name", "equal_freq"}, {"gamma", 1e-3}, {"tau", 2.0}};
  m["terms"] = json::array({
      {{"k", {1, 0}}, {"a", {0}}, {"abar", {0}}, {"ell", {0, 0}}, {"re", 1.0}, {"im", 0.0}},
      {{"k", {0, 1}}, {"a", {0}}, {"abar", {0}}, {"ell", {0, 0}}, {"re", 1.0}, {"im", 0.0}},
      {{"k", {0, 0}}, {"a", {1}}, {"abar", {1}}, {"ell", {0, 0}}, {"re", std::sqrt(3.0)}, {"im", 0.0}},
  });
  const fs::path p = dir / "equal_freq.json";
  std::ofstream(p) << m.dump(2);
  return p;
}

}  // namespace

TEST_CASE("config round-trip and validation") {
  PipelineConfig c;
  c.input = "x.json";
  c.eta = {0.1, 0.05};
  c.t0 = 250.0;
  c.tol_verify = 3e-8;
  c.stages = {"resonances", "normalform"};
  const json j = c.to_json();
  const PipelineConfig d = PipelineConfig::from_json(j);
  CHECK(dump_artifact(d.to_json()) == dump_artifact(j));
  CHECK_NOTHROW(d.validate());

  CHECK_THROWS_AS(PipelineConfig::from_json(json{{"bogus", 1}}), Error);
  const auto over = PipelineConfig::from_json(json{{"grid_per_dim", 8}}, c);
  CHECK(over.grid_per_dim == 8);
  CHECK(over.eta == c.eta);

  PipelineConfig bad = c;
  bad.eta = {-0.1};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.stages = {"nonsense"};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.integrator = "euler";
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("artifact JSON round-trips byte for byte") {
  std::mt19937_64 rng(6);
  const auto H = testing::random_model(rng, testing::generic_frequencies(), 3, 50, 0.37);
  const json j = series_to_json(H);
  const std::string once = dump_artifact(j);
  CHECK(dump_artifact(json::parse(once)) == once);
  const auto back = series_from_json(json::parse(once));
  CHECK(back.terms() == H.terms());

  const auto md = load_model(data_dir / "model_n2m2.json");
  const std::string m1 = dump_artifact(model_to_json(md));
  CHECK(dump_artifact(model_to_json(model_from_json(json::parse(m1)))) == m1);

  Eigen::MatrixXd A(2, 3);
  A << 0.1, 1.0 / 3, -2e-17, 4, 5.5, 1e300;
  CHECK(matrix_from_json(matrix_to_json(A)) == A);
}

TEST_CASE("model input validation") {
  json m = {{"n", 1}, {"m", 0}, {"name", "lin"}};
  m["terms"] = json::array({{{"k", {1}}, {"a", json::array()}, {"abar", json::array()}, {"ell", {0}}, {"re", 1.0}, {"im", 0.0}},
                            {{"k", {0}}, {"a", json::array()}, {"abar", json::array()}, {"ell", {1}}, {"re", 1.0}, {"im", 0.0}}});
  // a lone e^{i phi} violates reality
  CHECK_THROWS_AS(model_from_json(m), Error);
  CHECK_THROWS_AS(model_from_json(json{{"n", 1}}), Error);
}

TEST_CASE("pipeline refusals map to exit codes") {
  const fs::path dir = scratch_dir("refusals");
  PipelineConfig c;
  c.out = dir / "intera";
  c.input = data_dir / "intera.json";
  const auto oi = run_pipeline(c);
  CHECK(oi.exit_code == 5);
  CHECK(oi.failed_stage == "normalform");
  const json diag = read_json(c.out / "diagnostic.json");
  CHECK(diag["exit_code"] == 5);
  CHECK(read_json(c.out / "normalform.json")["R"][0][0].get<double>() == doctest::Approx(0.0).epsilon(1e-10));

  c.out = dir / "linint";
  c.input = data_dir / "linint.json";
  const auto ol = run_pipeline(c);
  CHECK(ol.exit_code == 6);
  CHECK(ol.failed_stage == "periods");

  c.out = dir / "melnikov";
  c.input = resonant_frequency_model(dir);
  const auto om = run_pipeline(c);
  CHECK(om.exit_code == 3);
  const json mel = read_json(c.out / "melnikov.json");
  const auto ell = mel["worst_ell"].get<std::vector<int>>();
  CHECK(std::abs(ell[0]) == 1);
  CHECK(ell[1] == -ell[0]);
}

TEST_CASE("periods stage echoes certificate constants and is deterministic") {
  const fs::path dir = scratch_dir("periods");
  PipelineConfig c;
  c.input = data_dir / "model_n2m2.json";
  c.eta = {0.1};
  c.stages = {"melnikov", "resonances", "normalform", "periods"};
  c.out = dir / "a";
  REQUIRE(run_pipeline(c).exit_code == 0);
  c.out = dir / "b";
  REQUIRE(run_pipeline(c).exit_code == 0);
  const json cert = read_json(dir / "a" / "certificates.json");
  const std::string text = cert.dump();
  for (const char* key : {"beta", "d0", "delta", "Theta", "d1", "alpha"})
    CHECK_MESSAGE(text.find(std::string("\"") + key + "\"") != std::string::npos, key);
  for (const char* f : {"normalform.json", "certificates.json", "resonances.json", "melnikov.json"}) {
    const std::string x = slurp(dir / "a" / f);
    std::string y = slurp(dir / "b" / f);
    // only the output directory differs
    for (std::size_t pos; (pos = y.find((dir / "b").string())) != std::string::npos;)
      y.replace(pos, (dir / "b").string().size(), (dir / "a").string());
    CHECK_MESSAGE(x == y, f);
    CHECK(dump_artifact(json::parse(x)) == x);
  }
}

TEST_CASE("command line exit codes") {
  const fs::path dir = scratch_dir("cli");
  CHECK(run_cli("normalform --input " + (data_dir / "intera.json").string() + " --out " + (dir / "i").string()) == 5);
  CHECK(run_cli("periods --input " + (data_dir / "linint.json").string() + " --out " + (dir / "l").string()) == 6);
  CHECK(run_cli("melnikov --input " + resonant_frequency_model(dir).string() + " --out " + (dir / "m").string()) == 3);
  CHECK(run_cli("resonances --input " + (dir / "missing.json").string() + " --out " + (dir / "x").string()) == 2);
  CHECK(run_cli("window --T 10 --c1 1 --c2 1 --c3 1 --eps1 1 --out " + (dir / "w").string()) == 0);
  const json w = read_json(dir / "w" / "window.json");
  CHECK(w["eps_lo"].get<double>() == doctest::Approx(std::exp(-10.0)).epsilon(1e-14));

  json cfg = {{"eta", {0.1}}, {"grid_per_dim", 8}};
  std::ofstream(dir / "cfg.json") << cfg.dump();
  CHECK(run_cli("resonances --config " + (dir / "cfg.json").string() + " --input " +
                (data_dir / "model_n2m2.json").string() + " --out " + (dir / "r").string()) == 0);
  const json echoed = read_json(dir / "r" / "resonances.json")["config"];
  CHECK(echoed["grid_per_dim"] == 8);
  std::ofstream(dir / "bad.json") << json{{"grid_per_dims", 8}}.dump();
  CHECK(run_cli("resonances --config " + (dir / "bad.json").string() + " --input " +
                (data_dir / "model_n2m2.json").string() + " --out " + (dir / "r2").string()) == 2);
}

TEST_CASE("log-log slope") {
  CHECK(loglog_slope({1, 2, 4}, {3, 12, 48}) == doctest::Approx(2.0));
}
