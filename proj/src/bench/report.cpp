#include "bsa/bench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace bsa::bench {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string rates_csv(const ScenarioResult& result) {
  std::ostringstream o;
  o << "n,replicates,failed,mean,se,target_mean,target_se,v0n_mean,v0n_se,bound,bound_rhs_mean,bound_rhs_se,"
       "diff_mean,diff_se,bound_ok\n";
  for (const auto& r : result.rows) {
    o << r.n << ',' << r.replicates << ',' << r.failed << ',' << format_number(r.value.mean) << ','
      << format_number(r.value.se) << ',' << format_number(r.target.mean) << ',' << format_number(r.target.se)
      << ',' << format_number(r.v0n.mean) << ',' << format_number(r.v0n.se) << ',' << r.bound << ','
      << format_number(r.rhs.mean) << ',' << format_number(r.rhs.se) << ',' << format_number(r.diff.mean) << ','
      << format_number(r.diff.se) << ',' << (r.bound_ok ? (*r.bound_ok ? "pass" : "fail") : "na") << '\n';
  }
  return o.str();
}

std::string certificates_csv(const Certification& cert) {
  std::ostringstream o;
  o << "constant,value,worst_case_sample,slack,provenance\n";
  for (const auto& r : cert.rows)
    o << r.constant << ',' << format_number(r.value) << ',' << r.worst_case_sample << ','
      << format_number(r.slack) << ',' << r.provenance << '\n';
  return o.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace

std::vector<RateReportRow> rate_report(const std::string& csv_text, const std::vector<std::string>& columns,
                                       const std::string& source) {
  std::istringstream in(csv_text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_csv_line(line);
    if (header.empty()) {
      header = std::move(fields);
      continue;
    }
    if (fields.size() != header.size())
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    rows.push_back(std::move(fields));
  }
  if (header.empty()) throw std::invalid_argument(source + ": empty CSV");
  auto index_of = [&](const std::string& name) -> std::ptrdiff_t {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  const std::ptrdiff_t n_col = index_of("n");
  if (n_col < 0) throw std::invalid_argument(source + ": no 'n' column");

  std::vector<std::string> wanted = columns;
  if (wanted.empty()) {
    if (index_of("mean") >= 0) wanted.push_back("mean");
    if (index_of("target_mean") >= 0) wanted.push_back("target_mean");
    if (wanted.empty())
      for (const auto& h : header)
        if (h != "n") wanted.push_back(h);
  }

  auto number = [&](const std::string& s, std::size_t row, const std::string& col) {
    const char* p = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(p, &end);
    if (end == p || *end != '\0')
      throw std::invalid_argument(source + ": row " + std::to_string(row + 1) + ", column '" + col +
                                  "': not a number ('" + s + "')");
    return v;
  };

  std::vector<double> ns;
  for (std::size_t r = 0; r < rows.size(); ++r) ns.push_back(number(rows[r][static_cast<std::size_t>(n_col)], r, "n"));

  std::vector<RateReportRow> out;
  for (const auto& col : wanted) {
    const std::ptrdiff_t c = index_of(col);
    if (c < 0) throw std::invalid_argument(source + ": no column '" + col + "'");
    std::vector<double> v;
    for (std::size_t r = 0; r < rows.size(); ++r) v.push_back(number(rows[r][static_cast<std::size_t>(c)], r, col));
    try {
      out.push_back({col, theory::fit_rate(ns, v)});
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ": column '" + col + "': " + e.what());
    }
  }
  return out;
}

std::string rate_report_csv(const std::vector<RateReportRow>& rows) {
  std::ostringstream o;
  o << "column,regressor,slope,intercept,r2\n";
  for (const auto& r : rows) {
    o << r.column << ",log_n," << format_number(r.fit.vs_log_n.slope) << ','
      << format_number(r.fit.vs_log_n.intercept) << ',' << format_number(r.fit.vs_log_n.r2) << '\n';
    o << r.column << ",log_logn_over_sqrtn," << format_number(r.fit.vs_log_log_rate.slope) << ','
      << format_number(r.fit.vs_log_log_rate.intercept) << ',' << format_number(r.fit.vs_log_log_rate.r2) << '\n';
  }
  return o.str();
}

}  // namespace bsa::bench
