#pragma once

// CSV emission and the rate report over an emitted rates table.

#include <string>
#include <vector>

#include "bsa/bench/scenario.hpp"
#include "bsa/theory.hpp"

namespace bsa::bench {

/// Every number is written with 17 significant digits.
std::string format_number(double v);

std::string rates_csv(const ScenarioResult& result);
std::string certificates_csv(const Certification& cert);

struct RateReportRow {
  std::string column;
  theory::RateFit fit;
};

/// Fits each requested column against n. With no columns given, fits `mean`
/// and `target_mean` when present, else every column except `n`.
std::vector<RateReportRow> rate_report(const std::string& csv_text, const std::vector<std::string>& columns,
                                       const std::string& source = "<csv>");
std::string rate_report_csv(const std::vector<RateReportRow>& rows);

}  // namespace bsa::bench
