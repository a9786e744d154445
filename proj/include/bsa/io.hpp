#pragma once

// Text loaders: numeric CSV matrices, discrete data laws and MDP files.
// Every error names the file and line.

#include <Eigen/Dense>

#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsa/gmm.hpp"
#include "bsa/policy_gradient.hpp"
#include "bsa/sa_core.hpp"

namespace bsa::io {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& tok, double& out) {
  const std::string t = trim(tok);
  if (t.empty()) return false;
  try {
    std::size_t used = 0;
    out = std::stod(t, &used);
    return used == t.size();
  } catch (const std::exception&) {
    return false;
  }
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

inline std::ifstream open(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  return in;
}

}  // namespace detail

/// Row-major numeric table; comma or whitespace separated, '#' comments, an
/// optional non-numeric header line.
inline Mat<double> parse_matrix_csv(std::istream& in, const std::string& name = "<input>") {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  bool seen_content = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    std::vector<double> row;
    bool numeric = true;
    for (const auto& f : fields) {
      double v = 0;
      if (!detail::parse_double(f, v)) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (!seen_content) {
        seen_content = true;  // header
        continue;
      }
      throw std::invalid_argument(name + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    seen_content = true;
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::invalid_argument(name + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(rows.front().size()) + " columns, found " +
                                  std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument(name + ": no numeric rows");
  Mat<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline Mat<double> load_matrix_csv(const std::string& path) {
  auto in = detail::open(path);
  return parse_matrix_csv(in, path);
}

/// Two columns per row: value, probability. Ybar defaults to max |value|.
inline gmm::DiscreteDataDist<double> load_data_dist_csv(const std::string& path, std::optional<double> ybar = {}) {
  const Mat<double> m = load_matrix_csv(path);
  if (m.cols() != 2) throw std::invalid_argument(path + ": data distribution needs columns value,probability");
  if (ybar) return gmm::DiscreteDataDist<double>(m.col(0), m.col(1), *ybar);
  return gmm::DiscreteDataDist<double>(m.col(0), m.col(1));
}

/// Parsed MDP file together with its feature table.
struct MdpFile {
  pg::TabularMdp<double> mdp;
  Mat<double> features;  // row s * nA + a
};

/// Line-oriented MDP description:
///   states <nS>
///   actions <nA>
///   features <d>
///   rmax <value>                 (optional)
///   transition <a> <s>: p_0 ... p_{nS-1}
///   reward <s>: r_0 ... r_{nA-1}
///   feature <s> <a>: x_1 ... x_d
inline MdpFile parse_mdp(std::istream& in, const std::string& name = "<input>") {
  long ns = -1, na = -1, d = -1;
  std::optional<double> rmax;
  std::vector<Mat<double>> trans;
  Mat<double> reward, features;
  std::vector<char> seen_trans, seen_reward, seen_feat;
  std::string line;
  std::size_t lineno = 0;

  auto fail = [&](const std::string& msg) {
    throw std::invalid_argument(name + ":" + std::to_string(lineno) + ": " + msg);
  };
  auto need_header = [&]() {
    if (ns < 1 || na < 1 || d < 1) fail("states, actions and features must be declared before data lines");
    if (trans.empty()) {
      trans.assign(static_cast<std::size_t>(na), Mat<double>::Zero(ns, ns));
      reward = Mat<double>::Zero(ns, na);
      features = Mat<double>::Zero(ns * na, d);
      seen_trans.assign(static_cast<std::size_t>(ns * na), 0);
      seen_reward.assign(static_cast<std::size_t>(ns), 0);
      seen_feat.assign(static_cast<std::size_t>(ns * na), 0);
    }
  };
  auto parse_int = [&](const std::string& tok, long lo, long hi, const char* what) {
    long v = 0;
    try {
      std::size_t used = 0;
      v = std::stol(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(std::string("bad ") + what + " '" + tok + "'");
    }
    if (v < lo || v > hi) fail(std::string(what) + " out of range");
    return v;
  };
  auto parse_values = [&](const std::string& rest, long count) {
    const auto fields = detail::split_fields(rest);
    if (static_cast<long>(fields.size()) != count)
      fail("expected " + std::to_string(count) + " values, found " + std::to_string(fields.size()));
    std::vector<double> v;
    for (const auto& f : fields) {
      double x = 0;
      if (!detail::parse_double(f, x)) fail("non-numeric value '" + f + "'");
      v.push_back(x);
    }
    return v;
  };

  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::string head = line, rest;
    const auto colon = line.find(':');
    if (colon != std::string::npos) {
      head = detail::trim(line.substr(0, colon));
      rest = line.substr(colon + 1);
    }
    std::istringstream hs(head);
    std::vector<std::string> words;
    for (std::string w; hs >> w;) words.push_back(w);
    const std::string& key = words.front();

    if (key == "states" || key == "actions" || key == "features") {
      if (words.size() != 2 || colon != std::string::npos) fail(key + " takes one integer");
      if (!trans.empty()) fail(key + " must precede data lines");
      const long v = parse_int(words[1], 1, 1 << 20, key.c_str());
      (key == "states" ? ns : key == "actions" ? na : d) = v;
    } else if (key == "rmax") {
      double v = 0;
      if (words.size() != 2 || !detail::parse_double(words[1], v)) fail("rmax takes one number");
      rmax = v;
    } else if (key == "transition") {
      need_header();
      if (words.size() != 3 || colon == std::string::npos) fail("expected 'transition <a> <s>: row'");
      const long a = parse_int(words[1], 0, na - 1, "action");
      const long s = parse_int(words[2], 0, ns - 1, "state");
      const auto v = parse_values(rest, ns);
      for (long j = 0; j < ns; ++j) trans[static_cast<std::size_t>(a)](s, j) = v[static_cast<std::size_t>(j)];
      char& seen = seen_trans[static_cast<std::size_t>(a * ns + s)];
      if (seen) fail("duplicate transition row");
      seen = 1;
    } else if (key == "reward") {
      need_header();
      if (words.size() != 2 || colon == std::string::npos) fail("expected 'reward <s>: values'");
      const long s = parse_int(words[1], 0, ns - 1, "state");
      const auto v = parse_values(rest, na);
      for (long a = 0; a < na; ++a) reward(s, a) = v[static_cast<std::size_t>(a)];
      char& seen = seen_reward[static_cast<std::size_t>(s)];
      if (seen) fail("duplicate reward row");
      seen = 1;
    } else if (key == "feature") {
      need_header();
      if (words.size() != 3 || colon == std::string::npos) fail("expected 'feature <s> <a>: values'");
      const long s = parse_int(words[1], 0, ns - 1, "state");
      const long a = parse_int(words[2], 0, na - 1, "action");
      const auto v = parse_values(rest, d);
      for (long j = 0; j < d; ++j) features(s * na + a, j) = v[static_cast<std::size_t>(j)];
      char& seen = seen_feat[static_cast<std::size_t>(s * na + a)];
      if (seen) fail("duplicate feature row");
      seen = 1;
    } else {
      fail("unknown keyword '" + key + "'");
    }
  }
  lineno = 0;
  if (trans.empty()) fail("no data lines");
  for (char c : seen_trans)
    if (!c) fail("missing transition rows");
  for (char c : seen_reward)
    if (!c) fail("missing reward rows");
  for (char c : seen_feat)
    if (!c) fail("missing feature rows");
  try {
    return MdpFile{pg::TabularMdp<double>(std::move(trans), std::move(reward), rmax), std::move(features)};
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(name + ": " + e.what());
  }
}

inline MdpFile load_mdp(const std::string& path) {
  auto in = detail::open(path);
  return parse_mdp(in, path);
}

}  // namespace bsa::io
