// bsa_bench: experiment runner for the SA scenarios.
//
//   bsa_bench run <config | manifest.json>
//   bsa_bench rate <rates.csv> [--column NAME]...
//   bsa_bench poisson <kernel.csv> <drift.csv> [--kernel2 K --drift2 D --dtheta T]
//   bsa_bench certify <config>
//
// Exit codes: 0 ok, 2 config or input error, 3 numerical failure,
// 4 certification failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bsa/bench/config.hpp"
#include "bsa/bench/manifest.hpp"
#include "bsa/bench/poisson_check.hpp"
#include "bsa/bench/report.hpp"
#include "bsa/bench/scenario.hpp"
#include "bsa/errors.hpp"
#include "bsa/io.hpp"

namespace {

namespace bb = bsa::bench;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::optional<unsigned> threads;
  std::string out_dir = ".";
};

bb::ScenarioConfig load_with(const std::string& path, const Overrides& o) {
  bb::ScenarioConfig c = bb::load_config(path);
  if (o.seed) c.seed = *o.seed;
  if (o.replicates) {
    if (*o.replicates < 1) throw bb::ConfigError("--replicates", 0, "must be >= 1");
    c.replicates = *o.replicates;
  }
  if (o.threads) c.threads = *o.threads;
  return c;
}

void print_rates(const bb::ScenarioResult& r) {
  std::printf("%10s %6s %24s %24s %24s %6s\n", "n", "failed", "mean", "se", "bound_rhs", "bound");
  for (const auto& row : r.rows)
    std::printf("%10zu %6zu %24.17g %24.17g %24.17g %6s\n", row.n, row.failed, row.value.mean, row.value.se,
                row.rhs.mean, row.bound_ok ? (*row.bound_ok ? "pass" : "fail") : "na");
  for (const auto& f : r.failures) std::printf("replicate %zu failed: %s\n", f.replicate, f.message.c_str());
}

int cmd_run(const std::string& input, const Overrides& o) {
  if (bb::looks_like_manifest(input)) {
    if (o.seed || o.replicates)
      throw bb::ConfigError(input, 0, "--seed and --replicates cannot override a manifest replay");
    const auto rep = bb::replay_manifest(input, o.out_dir, o.threads);
    print_rates(rep.run.result);
    if (!rep.mismatches.empty()) {
      for (const auto& m : rep.mismatches) std::printf("replay mismatch: %s\n", m.c_str());
      return 3;
    }
    std::printf("replay identical: %zu outputs\n", rep.run.manifest.outputs.size());
    return 0;
  }
  const auto out = bb::execute_run(load_with(input, o), o.out_dir);
  print_rates(out.result);
  std::printf("wrote %s\n", out.manifest_path.c_str());
  return 0;
}

int cmd_rate(const std::string& csv, const std::vector<std::string>& columns) {
  const auto rows = bb::rate_report(bb::read_file(csv), columns, csv);
  std::fputs(bb::rate_report_csv(rows).c_str(), stdout);
  return 0;
}

int cmd_poisson(const std::string& kernel, const std::string& drift, const std::string& kernel2,
                const std::string& drift2, std::optional<double> dtheta, std::size_t horizon) {
  const auto P = bsa::io::load_matrix_csv(kernel);
  const auto H = bsa::io::load_matrix_csv(drift);
  bb::PoissonReport r;
  if (!kernel2.empty() || !drift2.empty() || dtheta) {
    if (kernel2.empty() || drift2.empty() || !dtheta)
      throw std::invalid_argument("--kernel2, --drift2 and --dtheta go together");
    r = bb::poisson_check(P, H, bsa::io::load_matrix_csv(kernel2), bsa::io::load_matrix_csv(drift2), *dtheta,
                          horizon);
  } else {
    r = bb::poisson_check(P, H, horizon);
  }
  std::fputs(bb::to_csv(r).c_str(), stdout);
  return 0;
}

void print_checks(const std::vector<bb::CheckLine>& lines, bool& all_ok) {
  for (const auto& l : lines) {
    std::printf("%s %s: %s\n", l.ok ? "PASS" : "FAIL", l.name.c_str(), l.detail.c_str());
    all_ok = all_ok && l.ok;
  }
}

int cmd_certify(const std::string& path, const Overrides& o, bool write_csv) {
  const bb::ScenarioConfig c = load_with(path, o);
  const auto cert = bb::certify_scenario(c, c.certify.seed);
  std::fputs(bb::certificates_csv(cert).c_str(), stdout);
  if (write_csv) {
    std::filesystem::create_directories(o.out_dir);
    bb::write_file((std::filesystem::path(o.out_dir) / "certificates.csv").string(), bb::certificates_csv(cert));
  }
  bool ok = true;
  print_checks(cert.checks, ok);
  print_checks(bb::revalidate(c, cert, c.certify.seed + 1), ok);
  std::printf("%s\n", ok ? "certify: all checks passed" : "certify: some checks failed");
  return ok ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Biased stochastic-approximation experiment runner"};
  app.require_subcommand(1);
  Overrides o;
  std::uint64_t seed = 0;
  std::size_t replicates = 0;
  unsigned threads = 0;
  auto* seed_opt = app.add_option("--seed", seed, "base seed (replicate r uses seed + r)");
  auto* rep_opt = app.add_option("--replicates", replicates, "number of replicates");
  auto* thr_opt = app.add_option("--threads", threads, "worker threads (0: hardware)");
  auto* out_opt = app.add_option("--out-dir", o.out_dir, "output directory");
  app.fallthrough();

  std::string input;
  auto* run = app.add_subcommand("run", "run a scenario config or replay a manifest");
  run->add_option("input", input, "config file or manifest.json")->required();

  std::string csv;
  std::vector<std::string> columns;
  auto* rate = app.add_subcommand("rate", "fit convergence rates from a rates CSV");
  rate->add_option("csv", csv, "rates.csv")->required();
  rate->add_option("--column", columns, "column to fit (repeatable)");

  std::string kernel, drift, kernel2, drift2;
  double dtheta = 0;
  std::size_t horizon = 200;
  auto* poisson = app.add_subcommand("poisson", "solve the Poisson equation for a kernel and drift");
  poisson->add_option("kernel", kernel, "row-stochastic kernel CSV")->required();
  poisson->add_option("drift", drift, "drift table CSV, one row per state")->required();
  poisson->add_option("--kernel2", kernel2, "kernel at a perturbed parameter");
  poisson->add_option("--drift2", drift2, "drift at a perturbed parameter");
  auto* dtheta_opt = poisson->add_option("--dtheta", dtheta, "parameter distance between the two pairs");
  poisson->add_option("--horizon", horizon, "ergodicity fit horizon");

  std::string config;
  auto* certify = app.add_subcommand("certify", "certify assumption constants and re-validate them");
  certify->add_option("config", config, "scenario config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*seed_opt) o.seed = seed;
  if (*rep_opt) o.replicates = replicates;
  if (*thr_opt) o.threads = threads;

  try {
    if (*run) return cmd_run(input, o);
    if (*rate) return cmd_rate(csv, columns);
    if (*poisson)
      return cmd_poisson(kernel, drift, kernel2, drift2, *dtheta_opt ? std::optional<double>(dtheta) : std::nullopt,
                         horizon);
    if (*certify) return cmd_certify(config, o, static_cast<bool>(*out_opt));
  } catch (const bsa::NumericalFailure& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
