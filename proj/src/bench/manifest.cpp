#include "bsa/bench/manifest.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "bsa/bench/report.hpp"

namespace bsa::bench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json files_json(const std::vector<HashedFile>& files) {
  json a = json::array();
  for (const auto& f : files) a.push_back({{"path", f.path}, {"fnv1a", f.fnv1a}});
  return a;
}

std::vector<HashedFile> files_from(const json& a) {
  std::vector<HashedFile> out;
  for (const auto& f : a) out.push_back({f.at("path").get<std::string>(), f.at("fnv1a").get<std::string>()});
  return out;
}

std::vector<std::string> input_paths(const ScenarioConfig& c) {
  if (c.scenario == Scenario::Gmm) return {c.gmm.data};
  if (c.scenario == Scenario::Pg) return {c.pg.mdp};
  return {};
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << bytes;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string to_json(const RunManifest& m) {
  json j;
  j["artifact_version"] = m.artifact_version;
  j["config_hash"] = m.config_hash;
  j["config_text"] = m.config_text;
  j["inputs"] = files_json(m.inputs);
  j["seed"] = m.seed;
  j["replicate_seeds"] = m.replicate_seeds;
  j["threads"] = m.threads;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["outputs"] = files_json(m.outputs);
  json f = json::array();
  for (const auto& x : m.failures) f.push_back({{"replicate", x.replicate}, {"message", x.message}});
  j["replicate_failures"] = f;
  return j.dump(2) + "\n";
}

RunManifest parse_manifest(const std::string& json_text, const std::string& source) {
  try {
    const json j = json::parse(json_text);
    RunManifest m;
    m.artifact_version = j.at("artifact_version").get<std::string>();
    if (m.artifact_version != kArtifactVersion)
      throw std::invalid_argument("unsupported artifact version " + m.artifact_version);
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config_text = j.at("config_text").get<std::string>();
    m.inputs = files_from(j.at("inputs"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.replicate_seeds = j.at("replicate_seeds").get<std::vector<std::uint64_t>>();
    m.threads = j.at("threads").get<unsigned>();
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    m.outputs = files_from(j.at("outputs"));
    if (j.contains("replicate_failures"))
      for (const auto& f : j["replicate_failures"])
        m.failures.push_back({f.at("replicate").get<std::size_t>(), f.at("message").get<std::string>()});
    if (fnv1a_hex(m.config_text) != m.config_hash)
      throw std::invalid_argument("config_hash does not match config_text");
    return m;
  } catch (const json::exception& e) {
    throw std::invalid_argument(source + ": malformed manifest: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
}

RunOutput execute_run(const ScenarioConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  RunOutput out;
  RunManifest& m = out.manifest;
  m.config_text = to_text(config);
  m.config_hash = fnv1a_hex(m.config_text);
  for (const auto& p : input_paths(config)) m.inputs.push_back({p, fnv1a_hex(read_file(p))});
  m.seed = config.seed;
  m.started_at = utc_now();

  out.result = run_scenario(config);
  m.replicate_seeds = out.result.replicate_seeds;
  m.threads = out.result.threads_used;
  m.failures = out.result.failures;

  const std::string rates = rates_csv(out.result);
  const std::string certs = certificates_csv(out.result.certification);
  write_file((fs::path(out_dir) / "rates.csv").string(), rates);
  write_file((fs::path(out_dir) / "certificates.csv").string(), certs);
  m.outputs = {{"rates.csv", fnv1a_hex(rates)}, {"certificates.csv", fnv1a_hex(certs)}};
  m.finished_at = utc_now();

  out.manifest_path = (fs::path(out_dir) / "manifest.json").string();
  write_file(out.manifest_path, to_json(m));
  return out;
}

ReplayOutput replay_manifest(const std::string& manifest_path, const std::string& out_dir,
                             std::optional<unsigned> threads) {
  const RunManifest recorded = parse_manifest(read_file(manifest_path), manifest_path);
  for (const auto& in : recorded.inputs) {
    const std::string now = fnv1a_hex(read_file(in.path));
    if (now != in.fnv1a) throw std::invalid_argument(manifest_path + ": input " + in.path + " changed since the run");
  }
  ScenarioConfig config = parse_config(recorded.config_text, manifest_path, "");
  if (threads) config.threads = *threads;

  ReplayOutput out;
  out.run = execute_run(config, out_dir);
  for (const auto& want : recorded.outputs) {
    bool found = false;
    for (const auto& got : out.run.manifest.outputs) {
      if (got.path != want.path) continue;
      found = true;
      if (got.fnv1a != want.fnv1a) out.mismatches.push_back(want.path);
    }
    if (!found) out.mismatches.push_back(want.path);
  }
  return out;
}

bool looks_like_manifest(const std::string& path) {
  if (fs::path(path).extension() == ".json") return true;
  std::ifstream in(path);
  char c = 0;
  while (in.get(c))
    if (!std::isspace(static_cast<unsigned char>(c))) return c == '{';
  return false;
}

}  // namespace bsa::bench
