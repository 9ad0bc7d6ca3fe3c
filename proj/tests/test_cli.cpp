#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "panelboot/models.hpp"
#include "panelboot/ns_oracle.hpp"
#include "panelboot/panel.hpp"

using namespace panelboot;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path scratch() {
  const fs::path d = PANELBOOT_SCRATCH;
  fs::create_directories(d);
  return d;
}

Run cli(const std::string& args) {
  const fs::path o = scratch() / "stdout.txt", e = scratch() / "stderr.txt";
  const std::string cmd = std::string("\"") + PANELBOOT_CLI + "\" " + args + " > \"" + o.string() + "\" 2> \"" +
                          e.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string data(const std::string& name) { return std::string(PANELBOOT_TEST_DATA) + "/" + name; }

}  // namespace

TEST_CASE("fit of the normal-means fixture matches the closed form") {
  const Run r = cli("fit --data " + data("normal_means.csv") + " --model normal-means");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  const ParameterPoint cf = nm_closed_form_mle(load_panel_csv(data("normal_means.csv"), 0));
  CHECK(j["phi"][0].get<double>() == doctest::Approx(cf.phi[0]).epsilon(1e-10));
  CHECK(j["converged"].get<bool>());
  CHECK(j["sigma_hat"][0][0].get<double>() == doctest::Approx(2 * cf.phi[0] * cf.phi[0]).epsilon(1e-10));
  CHECK(r.err.find("seed=0") != std::string::npos);
  CHECK(r.err.find("config_hash=") != std::string::npos);
}

TEST_CASE("logit fixture drops degenerate strata and succeeds") {
  const Run r = cli("fit --data " + data("logit.csv") + " --model dynamic-logit");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["dropped_strata"].size() == 3);
}

TEST_CASE("error exit codes") {
  const Run bad = cli("fit --data " + data("malformed.csv") + " --model normal-means");
  CHECK(bad.code == 3);
  CHECK(bad.err.find("line 4") != std::string::npos);
  CHECK(cli("fit --data /nonexistent.csv --model normal-means").code == 3);
  CHECK(cli("fit --data " + data("normal_means.csv") + " --model normal-means --frobnicate").code == 1);
  CHECK(cli("fit --data " + data("normal_means.csv") + " --model probit").code == 1);
  CHECK(cli("oracle table1 --n 10").code == 1);
  CHECK(cli("oracle nothing").code == 1);
  CHECK(cli("bootstrap-ci --data " + data("normal_means.csv") + " --model normal-means --boot 10").code == 1);
}

TEST_CASE("help lists every flag") {
  const Run r = cli("bootstrap-ci --help");
  CHECK(r.code == 0);
  for (const char* flag : {"--data", "--model", "--method", "--target", "--mu", "--contrast", "--sides", "--level",
                           "--boot", "--seed", "--threads", "--out"})
    CHECK_MESSAGE(r.out.find(flag) != std::string::npos, flag);
  const Run s = cli("simulate --help");
  for (const char* flag : {"--phi0", "--n", "--m", "--reps", "--boot", "--full-scale", "--methods", "--config",
                           "--format", "--threads", "--seed"})
    CHECK_MESSAGE(s.out.find(flag) != std::string::npos, flag);
}

TEST_CASE("bootstrap JSON is byte-identical across runs and thread budgets") {
  const std::string base = "bootstrap-ci --data " + data("logit.csv") + " --model dynamic-logit --boot 99 --seed 5";
  const Run a = cli(base + " --threads 1"), b = cli(base + " --threads 1"), c = cli(base + " --threads 8");
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out == c.out);
  const Run t = cli(base + " --method percentile-t --threads 8"), u = cli(base + " --method percentile-t --threads 1");
  CHECK(t.out == u.out);
}

TEST_CASE("bootstrap intervals at nested levels are nested") {
  const std::string base = "bootstrap-ci --data " + data("normal_means.csv") + " --model normal-means --boot 199 --seed 2";
  const auto a = nlohmann::json::parse(cli(base + " --level 0.90").out);
  const auto b = nlohmann::json::parse(cli(base + " --level 0.95").out);
  CHECK(b["lower"].get<double>() <= a["lower"].get<double>());
  CHECK(b["upper"].get<double>() >= a["upper"].get<double>());
  CHECK(a["seed"].get<int>() == 2);
}

TEST_CASE("bootstrap endpoints on the normal-means fixture agree with the exact law") {
  const std::size_t B = 4999;
  const Run r = cli("bootstrap-ci --data " + data("normal_means.csv") + " --model normal-means --boot 4999 --seed 3");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  const PanelDataset d = load_panel_csv(data("normal_means.csv"), 0);
  const double phi = nm_closed_form_mle(d).phi[0], root = std::sqrt(double(d.observations()));
  const oracle::Gamma3 law = oracle::bootstrap_exact_law(d.n(), d.m(), phi);
  for (auto [p, key] : {std::pair{0.975, "lower"}, std::pair{0.025, "upper"}}) {
    const double q = law.quantile(p);
    const double se = std::sqrt(p * (1 - p) / double(B)) / law.pdf(q) / root;
    CHECK(std::abs(j[key].get<double>() - (phi - q / root)) < 4 * se);
  }
}

TEST_CASE("other bootstrap targets") {
  const std::string base = "bootstrap-ci --data " + data("normal_means.csv") + " --model normal-means --boot 99";
  const Run e = cli(base + " --method ellipsoid");
  REQUIRE(e.code == 0);
  CHECK(nlohmann::json::parse(e.out)["critical_value"].get<double>() > 0);
  const Run d = cli(base + " --target delta --mu eta2");
  REQUIRE(d.code == 0);
  const auto j = nlohmann::json::parse(d.out);
  CHECK(j["lower"].get<double>() < j["upper"].get<double>());
  const Run lo = cli(base + " --sides lower");
  REQUIRE(lo.code == 0);
  CHECK(nlohmann::json::parse(lo.out)["upper"].is_null());
}

TEST_CASE("oracle subcommands") {
  const Run t = cli("oracle table1");
  REQUIRE(t.code == 0);
  std::istringstream in(t.out);
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
  CHECK(t.out.rfind("n,m,s_hat", 0) == 0);

  const fs::path dir = scratch() / "fig";
  fs::remove_all(dir);
  REQUIRE(cli("oracle figure1 --points 201 --out " + dir.string()).code == 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.path().extension() == ".csv";
  CHECK(files == 6);
  CHECK(slurp(dir / "figure1_s_hat.csv").find("s_star_density") != std::string::npos);

  const Run s = cli("oracle second-moment --n 50 --m 10");
  REQUIRE(s.code == 0);
  std::istringstream sin(s.out);
  std::getline(sin, line);
  std::getline(sin, line);
  std::vector<std::string> f;
  std::istringstream fl(line);
  for (std::string x; std::getline(fl, x, ',');) f.push_back(x);
  REQUIRE(f.size() == 7);
  CHECK(std::stod(f[5]) == doctest::Approx(0.1));
}

TEST_CASE("simulate output is reproducible and thread-invariant") {
  const std::string base = "simulate table2 --phi0 0.5 --n 100 --m 10 --reps 4 --boot 39 --seed 42";
  const Run a = cli(base + " --threads 1"), b = cli(base + " --threads 8");
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.find("dynamic-logit,phi,0.5,zeros,100,10") != std::string::npos);

  const fs::path cfg = scratch() / "custom.cfg";
  std::ofstream(cfg) << "model = normal-means\ntarget = eta2\nphi0 = 1\neta_rule = i/n\nn = 20\nm = 5\n"
                        "methods = shat,estar\nreps = 3\nboot = 39\nseed = 7\n";
  const Run c = cli("simulate custom --config " + cfg.string() + " --format json");
  REQUIRE(c.code == 0);
  const auto j = nlohmann::json::parse(c.out);
  CHECK(j.size() == 1);
  CHECK(j[0].contains("config_hash"));

  const Run p = cli("simulate panel --model normal-means --n 4 --m 3 --seed 1");
  REQUIRE(p.code == 0);
  CHECK(p.out == cli("simulate panel --model normal-means --n 4 --m 3 --seed 1").out);
}
