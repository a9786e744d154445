#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "bsa/bench/config.hpp"
#include "bsa/bench/manifest.hpp"
#include "bsa/bench/poisson_check.hpp"
#include "bsa/bench/report.hpp"
#include "bsa/bench/scenario.hpp"
#include "bsa/io.hpp"

namespace fs = std::filesystem;
using namespace bsa::bench;

namespace {

const std::string kData = BSA_DATA_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bsa_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kSmallMartingale = R"(
[run]
scenario = martingale-quadratic
n_grid = 10, 100, 1000
replicates = 12
seed = 5

[schedule]
kind = inverse_sqrt
c = auto

[martingale]
dim = 3
sigma = 0.5
)";

ScenarioConfig small_martingale(unsigned threads = 1) {
  ScenarioConfig c = parse_config(kSmallMartingale, "small", kData);
  c.threads = threads;
  return c;
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "cfg", kData);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = small_martingale();
  CHECK(c.scenario == Scenario::MartingaleQuadratic);
  CHECK(c.n_grid == std::vector<std::size_t>{10, 100, 1000});
  CHECK(c.replicates == 12);
  CHECK(c.seed == 5);
  CHECK_FALSE(c.schedule.c.has_value());
  CHECK(c.martingale.dim == 3);
  CHECK(c.martingale.sigma == 0.5);

  const auto again = parse_config(to_text(c), "round trip", "");
  CHECK(to_text(again) == to_text(c));

  const auto g = load_config(kData + "/gmm.cfg");
  CHECK(fs::path(g.gmm.data).is_absolute());
  CHECK(fs::exists(g.gmm.data));
  CHECK(to_text(parse_config(to_text(g), "g", "")) == to_text(g));
}

TEST_CASE("config errors carry line numbers") {
  std::string err = error_of("[run]\nscenario = gmm\nbogus = 3\n");
  CHECK(err.find("cfg:3") != std::string::npos);
  CHECK(err.find("bogus") != std::string::npos);

  err = error_of("[run]\nscenario = martingale-quadratic\nn_grid = 10, 5\n[schedule]\nc = 1\n");
  CHECK(err.find("cfg:3") != std::string::npos);

  err = error_of("[run]\nscenario = martingale-quadratic\nn_grid = 10\nreplicates = 0\n");
  CHECK(err.find("cfg:4") != std::string::npos);

  err = error_of("[run]\nscenario = martingale-quadratic\nn_grid = 10\nn_grid = 20\n");
  CHECK(err.find("cfg:4") != std::string::npos);

  err = error_of("[run]\nscenario = gmm\nn_grid = 10\n[gmm]\ndata = no_such_file.csv\n");
  CHECK(err.find("cfg:5") != std::string::npos);

  CHECK_FALSE(error_of("[run]\nscenario = pg\nn_grid = 10\n[gmm]\nM = 3\n").empty());
  CHECK_FALSE(error_of("[nope]\n").empty());
  CHECK_FALSE(error_of("[run]\nscenario = martingale-quadratic\nn_grid = 10\n[martingale]\nsigma = abc\n").empty());
  CHECK_FALSE(error_of("[run]\nscenario = lowerbound\nn_grid = 10\n[lowerbound]\nmu = 2\nL = 1\n").empty());
  CHECK_FALSE(error_of("[run]\nscenario = elsewhere\nn_grid = 10\n").empty());
  CHECK_FALSE(error_of("just text\n").empty());
}

TEST_CASE("fnv1a") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("run shape and determinism") {
  auto c = small_martingale();
  c.replicates = 1;
  const auto one = run_scenario(c);
  CHECK(one.rows.size() == c.n_grid.size());
  const std::string csv = rates_csv(one);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + static_cast<long>(c.n_grid.size()));

  const auto a = run_scenario(small_martingale(1));
  const auto b = run_scenario(small_martingale(1));
  const auto m = run_scenario(small_martingale(8));
  CHECK(rates_csv(a) == rates_csv(b));
  CHECK(rates_csv(a) == rates_csv(m));
  CHECK(certificates_csv(a.certification) == certificates_csv(m.certification));
  CHECK(a.replicate_seeds.size() == 12);
  for (std::size_t r = 0; r < a.replicate_seeds.size(); ++r) CHECK(a.replicate_seeds[r] == 5 + r);
  for (const auto& row : a.rows) CHECK(row.bound_ok.value_or(false));

  auto other = small_martingale();
  other.seed = 6;
  CHECK(rates_csv(run_scenario(other)) != rates_csv(a));
}

TEST_CASE("csv numbers round trip") {
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 5e-324}) {
    const std::string s = format_number(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(format_number(NAN) == "nan");
  CHECK(format_number(INFINITY) == "inf");
}

TEST_CASE("certification rows") {
  const auto cert = certify_scenario(small_martingale(), 7);
  CHECK(cert.ok());
  const std::string csv = certificates_csv(cert);
  CHECK(csv.rfind("constant,value,worst_case_sample,slack,provenance\n", 0) == 0);
  CHECK(csv.find("\nc1,") != std::string::npos);
  CHECK(csv.find("\nL,") != std::string::npos);
  for (const auto& line : revalidate(small_martingale(), cert, 8)) CHECK_MESSAGE(line.ok, line.name);
}

TEST_CASE("manifest write and replay") {
  const fs::path dir = scratch("manifest");
  const auto out = execute_run(small_martingale(), (dir / "first").string());
  CHECK(fs::exists(dir / "first" / "rates.csv"));
  CHECK(fs::exists(dir / "first" / "certificates.csv"));
  const auto m = parse_manifest(read_file(out.manifest_path), out.manifest_path);
  CHECK(m.config_hash == fnv1a_hex(m.config_text));
  CHECK(m.replicate_seeds == out.result.replicate_seeds);
  CHECK(m.outputs.size() == 2);

  const auto rep = replay_manifest(out.manifest_path, (dir / "replay").string(), 4u);
  CHECK(rep.mismatches.empty());
  CHECK(read_file((dir / "first" / "rates.csv").string()) == read_file((dir / "replay" / "rates.csv").string()));

  // Tampering with the recorded output hash is detected.
  std::string text = read_file(out.manifest_path);
  const auto pos = text.find(m.outputs[0].fnv1a);
  text.replace(pos, 16, "0000000000000000");
  write_file((dir / "bad.json").string(), text);
  CHECK_FALSE(replay_manifest((dir / "bad.json").string(), (dir / "bad").string()).mismatches.empty());

  std::string broken = read_file(out.manifest_path);
  broken.replace(broken.find("\"config_text\": \"") + 16, 1, "#");
  CHECK_THROWS_AS(parse_manifest(broken), std::invalid_argument);
  CHECK_THROWS_AS(parse_manifest("{not json"), std::invalid_argument);
  CHECK(looks_like_manifest(out.manifest_path));
  CHECK_FALSE(looks_like_manifest(kData + "/gmm.cfg"));
}

TEST_CASE("replay refuses changed inputs") {
  const fs::path dir = scratch("inputs");
  fs::copy_file(kData + "/gmm_points.csv", dir / "points.csv");
  std::string text = read_file(kData + "/gmm.cfg");
  text.replace(text.find("gmm_points.csv"), 14, "points.csv");
  text.replace(text.find("replicates = 100"), 16, "replicates = 2");
  text.replace(text.find("100, 316, 1000, 3162, 10000, 31623, 100000"), 42, "10, 100");
  text.replace(text.find("samples = 1000"), 14, "samples = 50");
  write_file((dir / "g.cfg").string(), text);
  const auto out = execute_run(load_config((dir / "g.cfg").string()), (dir / "o").string());
  REQUIRE(out.manifest.inputs.size() == 1);
  write_file((dir / "points.csv").string(), "0.5,1\n");
  CHECK_THROWS_AS(replay_manifest(out.manifest_path, (dir / "r").string()), std::invalid_argument);
}

TEST_CASE("rate report") {
  std::ostringstream csv;
  csv << "n,mean,other\n";
  for (int e = 2; e <= 5; ++e) {
    const double n = std::pow(10.0, e);
    csv << format_number(n) << "," << format_number(2 / std::sqrt(n)) << ","
        << format_number(std::log(n) / std::sqrt(n)) << "\n";
  }
  const auto rows = rate_report(csv.str(), {});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].column == "mean");
  CHECK(std::abs(rows[0].fit.vs_log_n.slope + 0.5) < 1e-12);
  const auto other = rate_report(csv.str(), {"other"});
  CHECK(std::abs(other[0].fit.vs_log_log_rate.slope - 1) < 1e-12);
  const std::string table = rate_report_csv(rows);
  CHECK(table.rfind("column,regressor,slope,intercept,r2\n", 0) == 0);
  CHECK_THROWS_AS(rate_report(csv.str(), {"missing"}), std::invalid_argument);
  CHECK_THROWS_AS(rate_report("n,mean\n100,abc\n", {}), std::invalid_argument);
  CHECK_THROWS_AS(rate_report("", {}), std::invalid_argument);
}

TEST_CASE("poisson check through files") {
  const auto P = bsa::io::load_matrix_csv(kData + "/kernel.csv");
  const auto H = bsa::io::load_matrix_csv(kData + "/drift.csv");
  const auto r = poisson_check(P, H);
  CHECK(r.states == P.rows());
  CHECK(r.residual <= 1e-10);
  CHECK(r.centering <= 1e-10);
  CHECK(r.L_PH0 > 0);
  CHECK(r.rho < 1);
  CHECK_FALSE(r.L_PH1.has_value());

  const auto r2 = poisson_check(P, H, bsa::io::load_matrix_csv(kData + "/kernel2.csv"),
                                bsa::io::load_matrix_csv(kData + "/drift2.csv"), 0.01);
  REQUIRE(r2.L_PH1.has_value());
  CHECK(*r2.L_PH1 >= 0);
  CHECK(to_csv(r2).find("L_PH1,") != std::string::npos);

  CHECK_THROWS_AS(poisson_check(P, H.topRows(3)), std::invalid_argument);
  bsa::Mat<double> flip(2, 2);
  flip << 0, 1, 1, 0;
  CHECK_THROWS_AS(poisson_check(flip, bsa::Mat<double>::Ones(2, 1)), bsa::NonErgodicKernel);

  // Rank-one kernel: P H_hat vanishes.
  const bsa::Mat<double> rank1 = bsa::Mat<double>::Constant(3, 3, 1.0 / 3);
  bsa::Mat<double> h(3, 1);
  h << 1, 2, 6;
  const auto r3 = poisson_check(rank1, h);
  CHECK(r3.rho == 0.0);
  CHECK(std::abs(r3.L_PH0 - 3.0) < 1e-12);
}

TEST_CASE("matrix csv parsing") {
  std::istringstream ok("a,b\n1,2\n3, 4\n");
  const auto m = bsa::io::parse_matrix_csv(ok);
  CHECK(m.rows() == 2);
  CHECK(m(1, 1) == 4);
  std::istringstream ragged("1,2\n3\n");
  CHECK_THROWS_AS(bsa::io::parse_matrix_csv(ragged), std::invalid_argument);
  std::istringstream mdp("states 1\nactions 1\nfeatures 1\ntransition 0 0: 1\nreward 0: 0.5\n");
  CHECK_THROWS_AS(bsa::io::parse_mdp(mdp), std::invalid_argument);
  const auto f = bsa::io::load_mdp(kData + "/mdp_5x3.txt");
  CHECK(f.mdp.num_states() == 5);
  CHECK(f.mdp.num_actions() == 3);
  CHECK(f.features.cols() == 4);
}
