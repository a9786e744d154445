#pragma once

// Scenario configuration: a sectioned key = value text format.
//
//   [run]        scenario, n_grid, replicates, seed, threads
//   [schedule]   kind (constant | inverse_sqrt), c (number or "auto")
//   [martingale] dim, sigma, noise, theta0
//   [lowerbound] mu, L, eps_noise, theta0
//   [gmm]        M, eps, data, ybar, domain (reachable | full)
//   [pg]         mdp, lambda, theta0, start, start_state, start_action, horizon, radius
//   [certify]    samples, seed, margin
//
// Unknown sections or keys are errors. Relative paths resolve against the
// directory of the config file.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsa/sa_core.hpp"

namespace bsa::bench {

/// Parse or validation failure, carrying the offending line when known.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& msg)
      : std::invalid_argument(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + msg) {}
};

enum class Scenario { Gmm, Pg, LowerBound, MartingaleQuadratic };

std::string to_string(Scenario s);

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::InverseSqrt;
  std::optional<double> c;  // empty: the largest step the theorem allows
  double c_max = 1.0;       // ceiling applied to an automatic c
};

struct MartingaleSpec {
  long dim = 5;
  double sigma = 1.0;
  bool uniform_noise = false;
  double theta0 = 1.0;
};

struct LowerBoundSpec {
  double mu = 1.0;
  double L = 1.0;
  double eps_noise = 1.0;
  double theta0 = 1.0;
};

struct GmmSpec {
  long M = 3;
  double eps = 0.1;
  std::string data;  // CSV value,probability
  std::optional<double> ybar;
  bool full_domain = false;  // certify over the whole box instead of the ro-EM reachable set
};

struct PgSpec {
  std::string mdp;
  double lambda = 0.9;
  double theta0 = 0.0;
  bool fixed_start = false;
  long start_state = 0;
  long start_action = 0;
  long horizon = 200;   // ergodicity fit horizon
  double radius = 1.0;  // theta samples for certificates: uniform in a box around theta0
};

struct CertifySpec {
  long samples = 1000;
  std::uint64_t seed = 7;
  double margin = 0.25;
};

struct ScenarioConfig {
  Scenario scenario = Scenario::MartingaleQuadratic;
  std::vector<std::size_t> n_grid;
  std::size_t replicates = 1;
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0: hardware concurrency

  ScheduleSpec schedule;
  MartingaleSpec martingale;
  LowerBoundSpec lowerbound;
  GmmSpec gmm;
  PgSpec pg;
  CertifySpec certify;

  std::string source = "<config>";
};

/// Parses config text; base_dir anchors relative file paths.
ScenarioConfig parse_config(const std::string& text, const std::string& source, const std::string& base_dir);
ScenarioConfig load_config(const std::string& path);

/// Canonical text form; parse_config(to_text(c)) reproduces c. Paths are absolute.
std::string to_text(const ScenarioConfig& config);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace bsa::bench
