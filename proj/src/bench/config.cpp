#include "bsa/bench/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace bsa::bench {

namespace fs = std::filesystem;

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Gmm: return "gmm";
    case Scenario::Pg: return "pg";
    case Scenario::LowerBound: return "lowerbound";
    case Scenario::MartingaleQuadratic: return "martingale-quadratic";
  }
  return "?";
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Entry {
  std::string value;
  std::size_t line;
};

class Binder {
 public:
  Binder(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(std::size_t line, const std::string& msg) const { throw ConfigError(source_, line, msg); }

  double to_double(const Entry& e, const std::string& key) const {
    const char* s = e.value.c_str();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s, &end);
    if (end == s || *end != '\0' || errno == ERANGE) fail(e.line, key + ": expected a number, got '" + e.value + "'");
    return v;
  }

  long to_long(const Entry& e, const std::string& key) const {
    const char* s = e.value.c_str();
    char* end = nullptr;
    errno = 0;
    const long v = std::strtol(s, &end, 10);
    if (end == s || *end != '\0' || errno == ERANGE) fail(e.line, key + ": expected an integer, got '" + e.value + "'");
    return v;
  }

  std::uint64_t to_u64(const Entry& e, const std::string& key) const {
    const char* s = e.value.c_str();
    char* end = nullptr;
    errno = 0;
    if (!e.value.empty() && e.value[0] == '-') fail(e.line, key + ": must be non-negative");
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0' || errno == ERANGE) fail(e.line, key + ": expected an unsigned integer, got '" + e.value + "'");
    return v;
  }

  bool to_bool(const Entry& e, const std::string& key) const {
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    fail(e.line, key + ": expected true or false");
  }

 private:
  std::string source_;
};

std::string resolve(const std::string& path, const std::string& base_dir) {
  fs::path p(path);
  if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
  return fs::absolute(p).lexically_normal().string();
}

}  // namespace

ScenarioConfig parse_config(const std::string& text, const std::string& source, const std::string& base_dir) {
  const Binder b(source);
  std::map<std::string, std::map<std::string, Entry>> sections;
  std::map<std::string, std::size_t> section_line;
  std::string current;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') b.fail(lineno, "malformed section header");
      current = trim(line.substr(1, line.size() - 2));
      if (sections.count(current)) b.fail(lineno, "duplicate section [" + current + "]");
      sections[current];
      section_line[current] = lineno;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) b.fail(lineno, "expected 'key = value'");
    if (current.empty()) b.fail(lineno, "key outside of any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) b.fail(lineno, "empty key");
    if (value.empty()) b.fail(lineno, key + ": empty value");
    if (sections[current].count(key)) b.fail(lineno, "duplicate key '" + key + "'");
    sections[current][key] = Entry{value, lineno};
  }

  ScenarioConfig c;
  c.source = source;

  if (!sections.count("run")) b.fail(0, "missing [run] section");
  auto& run = sections["run"];
  if (!run.count("scenario")) b.fail(section_line["run"], "[run] needs 'scenario'");
  {
    const Entry& e = run["scenario"];
    if (e.value == "gmm") c.scenario = Scenario::Gmm;
    else if (e.value == "pg") c.scenario = Scenario::Pg;
    else if (e.value == "lowerbound") c.scenario = Scenario::LowerBound;
    else if (e.value == "martingale-quadratic") c.scenario = Scenario::MartingaleQuadratic;
    else b.fail(e.line, "unknown scenario '" + e.value + "'");
  }
  const std::string scenario_section = c.scenario == Scenario::Gmm ? "gmm"
                                       : c.scenario == Scenario::Pg ? "pg"
                                       : c.scenario == Scenario::LowerBound ? "lowerbound"
                                                                            : "martingale";

  using Setter = std::function<void(const Entry&)>;
  const std::map<std::string, std::map<std::string, Setter>> schema = {
      {"run",
       {{"scenario", [](const Entry&) {}},
        {"n_grid",
         [&](const Entry& e) {
           std::string tok;
           std::istringstream ss(e.value);
           while (std::getline(ss, tok, ',')) {
             const Entry t{trim(tok), e.line};
             const long v = b.to_long(t, "n_grid");
             if (v < 1) b.fail(e.line, "n_grid entries must be >= 1");
             c.n_grid.push_back(static_cast<std::size_t>(v));
           }
           for (std::size_t i = 1; i < c.n_grid.size(); ++i)
             if (c.n_grid[i] <= c.n_grid[i - 1]) b.fail(e.line, "n_grid must be strictly increasing");
         }},
        {"replicates",
         [&](const Entry& e) {
           const long v = b.to_long(e, "replicates");
           if (v < 1) b.fail(e.line, "replicates must be >= 1");
           c.replicates = static_cast<std::size_t>(v);
         }},
        {"seed", [&](const Entry& e) { c.seed = b.to_u64(e, "seed"); }},
        {"threads",
         [&](const Entry& e) {
           const long v = b.to_long(e, "threads");
           if (v < 0 || v > 4096) b.fail(e.line, "threads must be in [0, 4096]");
           c.threads = static_cast<unsigned>(v);
         }}}},
      {"schedule",
       {{"kind",
         [&](const Entry& e) {
           if (e.value == "constant") c.schedule.kind = ScheduleKind::Constant;
           else if (e.value == "inverse_sqrt") c.schedule.kind = ScheduleKind::InverseSqrt;
           else b.fail(e.line, "kind must be constant or inverse_sqrt");
         }},
        {"c",
         [&](const Entry& e) {
           if (e.value == "auto") {
             c.schedule.c.reset();
             return;
           }
           const double v = b.to_double(e, "c");
           if (!(v > 0)) b.fail(e.line, "c must be positive");
           c.schedule.c = v;
         }},
        {"c_max",
         [&](const Entry& e) {
           c.schedule.c_max = b.to_double(e, "c_max");
           if (!(c.schedule.c_max > 0)) b.fail(e.line, "c_max must be positive");
         }}}},
      {"martingale",
       {{"dim",
         [&](const Entry& e) {
           c.martingale.dim = b.to_long(e, "dim");
           if (c.martingale.dim < 1) b.fail(e.line, "dim must be >= 1");
         }},
        {"sigma",
         [&](const Entry& e) {
           c.martingale.sigma = b.to_double(e, "sigma");
           if (!(c.martingale.sigma >= 0)) b.fail(e.line, "sigma must be >= 0");
         }},
        {"noise",
         [&](const Entry& e) {
           if (e.value == "gaussian") c.martingale.uniform_noise = false;
           else if (e.value == "uniform") c.martingale.uniform_noise = true;
           else b.fail(e.line, "noise must be gaussian or uniform");
         }},
        {"theta0", [&](const Entry& e) { c.martingale.theta0 = b.to_double(e, "theta0"); }}}},
      {"lowerbound",
       {{"mu", [&](const Entry& e) { c.lowerbound.mu = b.to_double(e, "mu"); }},
        {"L", [&](const Entry& e) { c.lowerbound.L = b.to_double(e, "L"); }},
        {"eps_noise", [&](const Entry& e) { c.lowerbound.eps_noise = b.to_double(e, "eps_noise"); }},
        {"theta0", [&](const Entry& e) { c.lowerbound.theta0 = b.to_double(e, "theta0"); }}}},
      {"gmm",
       {{"M",
         [&](const Entry& e) {
           c.gmm.M = b.to_long(e, "M");
           if (c.gmm.M < 2) b.fail(e.line, "M must be >= 2");
         }},
        {"eps",
         [&](const Entry& e) {
           c.gmm.eps = b.to_double(e, "eps");
           if (!(c.gmm.eps > 0)) b.fail(e.line, "eps must be positive");
         }},
        {"data",
         [&](const Entry& e) {
           c.gmm.data = resolve(e.value, base_dir);
           if (!fs::exists(c.gmm.data)) b.fail(e.line, "data file not found: " + c.gmm.data);
         }},
        {"ybar",
         [&](const Entry& e) {
           c.gmm.ybar = b.to_double(e, "ybar");
           if (!(*c.gmm.ybar > 0)) b.fail(e.line, "ybar must be positive");
         }},
        {"domain",
         [&](const Entry& e) {
           if (e.value == "reachable") c.gmm.full_domain = false;
           else if (e.value == "full") c.gmm.full_domain = true;
           else b.fail(e.line, "domain must be reachable or full");
         }}}},
      {"pg",
       {{"mdp",
         [&](const Entry& e) {
           c.pg.mdp = resolve(e.value, base_dir);
           if (!fs::exists(c.pg.mdp)) b.fail(e.line, "mdp file not found: " + c.pg.mdp);
         }},
        {"lambda",
         [&](const Entry& e) {
           c.pg.lambda = b.to_double(e, "lambda");
           if (!(c.pg.lambda >= 0 && c.pg.lambda < 1)) b.fail(e.line, "lambda must lie in [0, 1)");
         }},
        {"theta0", [&](const Entry& e) { c.pg.theta0 = b.to_double(e, "theta0"); }},
        {"start",
         [&](const Entry& e) {
           if (e.value == "stationary") c.pg.fixed_start = false;
           else if (e.value == "fixed") c.pg.fixed_start = true;
           else b.fail(e.line, "start must be stationary or fixed");
         }},
        {"start_state", [&](const Entry& e) { c.pg.start_state = b.to_long(e, "start_state"); }},
        {"start_action", [&](const Entry& e) { c.pg.start_action = b.to_long(e, "start_action"); }},
        {"horizon",
         [&](const Entry& e) {
           c.pg.horizon = b.to_long(e, "horizon");
           if (c.pg.horizon < 2) b.fail(e.line, "horizon must be >= 2");
         }},
        {"radius",
         [&](const Entry& e) {
           c.pg.radius = b.to_double(e, "radius");
           if (!(c.pg.radius > 0)) b.fail(e.line, "radius must be positive");
         }}}},
      {"certify",
       {{"samples",
         [&](const Entry& e) {
           c.certify.samples = b.to_long(e, "samples");
           if (c.certify.samples < 1) b.fail(e.line, "samples must be >= 1");
         }},
        {"seed", [&](const Entry& e) { c.certify.seed = b.to_u64(e, "seed"); }},
        {"margin",
         [&](const Entry& e) {
           c.certify.margin = b.to_double(e, "margin");
           if (!(c.certify.margin >= 0)) b.fail(e.line, "margin must be >= 0");
         }}}},
  };

  const std::set<std::string> scenario_sections = {"martingale", "lowerbound", "gmm", "pg"};
  for (const auto& [name, entries] : sections) {
    const auto it = schema.find(name);
    if (it == schema.end()) b.fail(section_line[name], "unknown section [" + name + "]");
    if (scenario_sections.count(name) && name != scenario_section)
      b.fail(section_line[name], "section [" + name + "] does not apply to scenario " + to_string(c.scenario));
    for (const auto& [key, entry] : entries) {
      const auto setter = it->second.find(key);
      if (setter == it->second.end()) b.fail(entry.line, "unknown key '" + key + "' in [" + name + "]");
      setter->second(entry);
    }
  }

  if (c.n_grid.empty()) b.fail(section_line["run"], "[run] needs a non-empty 'n_grid'");
  if (c.scenario == Scenario::Gmm && c.gmm.data.empty()) b.fail(0, "[gmm] needs 'data'");
  if (c.scenario == Scenario::Pg && c.pg.mdp.empty()) b.fail(0, "[pg] needs 'mdp'");
  if (c.scenario == Scenario::LowerBound && !(c.lowerbound.mu > 0 && c.lowerbound.L >= c.lowerbound.mu))
    b.fail(section_line["lowerbound"], "lowerbound needs 0 < mu <= L");
  if (c.scenario == Scenario::LowerBound && !(c.lowerbound.eps_noise >= 0))
    b.fail(section_line["lowerbound"], "eps_noise must be >= 0");
  return c;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  const fs::path p = fs::absolute(path);
  return parse_config(ss.str(), path, p.parent_path().string());
}

std::string to_text(const ScenarioConfig& c) {
  std::ostringstream o;
  o << "[run]\n";
  o << "scenario = " << to_string(c.scenario) << "\n";
  o << "n_grid = ";
  for (std::size_t i = 0; i < c.n_grid.size(); ++i) o << (i ? ", " : "") << c.n_grid[i];
  o << "\nreplicates = " << c.replicates << "\n";
  o << "seed = " << c.seed << "\n";
  o << "threads = " << c.threads << "\n\n";

  o << "[schedule]\n";
  o << "kind = " << (c.schedule.kind == ScheduleKind::Constant ? "constant" : "inverse_sqrt") << "\n";
  o << "c = " << (c.schedule.c ? num(*c.schedule.c) : std::string("auto")) << "\n";
  o << "c_max = " << num(c.schedule.c_max) << "\n\n";

  switch (c.scenario) {
    case Scenario::MartingaleQuadratic:
      o << "[martingale]\n";
      o << "dim = " << c.martingale.dim << "\n";
      o << "sigma = " << num(c.martingale.sigma) << "\n";
      o << "noise = " << (c.martingale.uniform_noise ? "uniform" : "gaussian") << "\n";
      o << "theta0 = " << num(c.martingale.theta0) << "\n\n";
      break;
    case Scenario::LowerBound:
      o << "[lowerbound]\n";
      o << "mu = " << num(c.lowerbound.mu) << "\n";
      o << "L = " << num(c.lowerbound.L) << "\n";
      o << "eps_noise = " << num(c.lowerbound.eps_noise) << "\n";
      o << "theta0 = " << num(c.lowerbound.theta0) << "\n\n";
      break;
    case Scenario::Gmm:
      o << "[gmm]\n";
      o << "M = " << c.gmm.M << "\n";
      o << "eps = " << num(c.gmm.eps) << "\n";
      o << "data = " << c.gmm.data << "\n";
      if (c.gmm.ybar) o << "ybar = " << num(*c.gmm.ybar) << "\n";
      o << "domain = " << (c.gmm.full_domain ? "full" : "reachable") << "\n";
      o << "\n";
      break;
    case Scenario::Pg:
      o << "[pg]\n";
      o << "mdp = " << c.pg.mdp << "\n";
      o << "lambda = " << num(c.pg.lambda) << "\n";
      o << "theta0 = " << num(c.pg.theta0) << "\n";
      o << "start = " << (c.pg.fixed_start ? "fixed" : "stationary") << "\n";
      o << "start_state = " << c.pg.start_state << "\n";
      o << "start_action = " << c.pg.start_action << "\n";
      o << "horizon = " << c.pg.horizon << "\n";
      o << "radius = " << num(c.pg.radius) << "\n\n";
      break;
  }

  o << "[certify]\n";
  o << "samples = " << c.certify.samples << "\n";
  o << "seed = " << c.certify.seed << "\n";
  o << "margin = " << num(c.certify.margin) << "\n";
  return o.str();
}

}  // namespace bsa::bench
