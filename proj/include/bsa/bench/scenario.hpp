#pragma once

// Scenario execution: constant certification, replicated SA runs over an
// n grid, and per-n aggregation with theorem-bound checks.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bsa/bench/config.hpp"
#include "bsa/sa_core.hpp"
#include "bsa/theory.hpp"

namespace bsa::bench {

struct CertificateRow {
  std::string constant;
  double value = 0;
  std::string worst_case_sample;  // "-" when not sample based
  double slack = 0;               // NaN when not applicable
  std::string provenance;         // measured | asserted | derived | config
};

struct CheckLine {
  std::string name;
  bool ok = false;
  std::string detail;
};

struct Certification {
  theory::AssumptionConstants<double> constants;
  theory::BoundVariant variant = theory::BoundVariant::Thm1;
  bool lower_bound = false;  // lowerbound scenario: check against the lower bound instead
  double step_scale = 0;     // the c actually used
  std::optional<double> step_cap;  // empty: no admissible step for the bound
  std::vector<CertificateRow> rows;
  std::vector<CheckLine> checks;  // self-consistency on the certification sample

  bool ok() const {
    for (const auto& c : checks)
      if (!c.ok) return false;
    return true;
  }
};

/// Certifies the constants of the configured scenario on config.certify.samples
/// draws seeded by `seed`, and resolves the step scale.
Certification certify_scenario(const ScenarioConfig& config, std::uint64_t seed);

/// Re-checks every sample-based certificate on a fresh draw of equal size.
std::vector<CheckLine> revalidate(const ScenarioConfig& config, const Certification& cert, std::uint64_t seed);

StepSizeSchedule<double> schedule_of(const ScenarioConfig& config, double scale);

struct RateRow {
  std::size_t n = 0;
  std::size_t replicates = 0;
  std::size_t failed = 0;
  theory::MeanSe value;   // E_N ||h(theta_N)||^2
  theory::MeanSe target;  // E_N ||grad V(theta_N)||^2
  theory::MeanSe v0n;     // V(theta_0) - V(theta_{n+1})
  std::string bound;      // thm1 | thm2 | lower
  theory::MeanSe rhs;
  theory::MeanSe diff;
  std::optional<bool> bound_ok;  // empty: bound inapplicable
};

struct ReplicateFailure {
  std::size_t replicate = 0;
  std::string message;
};

struct ScenarioResult {
  Certification certification;
  std::vector<RateRow> rows;
  std::vector<std::uint64_t> replicate_seeds;
  std::vector<ReplicateFailure> failures;
  unsigned threads_used = 1;
};

/// Runs every replicate once to max(n_grid) and slices the trace at each n.
/// Output is independent of the thread count.
ScenarioResult run_scenario(const ScenarioConfig& config);

unsigned resolve_threads(unsigned requested);

}  // namespace bsa::bench
