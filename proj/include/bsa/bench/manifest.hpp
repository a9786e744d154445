#pragma once

// Run manifests: everything needed to regenerate a run's CSVs byte for byte.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bsa/bench/config.hpp"
#include "bsa/bench/scenario.hpp"

namespace bsa::bench {

inline constexpr const char* kArtifactVersion = "bsa-bench/1";

struct HashedFile {
  std::string path;  // outputs: file name inside the output directory; inputs: absolute path
  std::string fnv1a;
};

struct RunManifest {
  std::string artifact_version = kArtifactVersion;
  std::string config_hash;
  std::string config_text;  // canonical form, see to_text
  std::vector<HashedFile> inputs;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> replicate_seeds;
  unsigned threads = 0;
  std::string started_at, finished_at;  // UTC, ISO 8601
  std::vector<HashedFile> outputs;
  std::vector<ReplicateFailure> failures;
};

std::string to_json(const RunManifest& m);
RunManifest parse_manifest(const std::string& json_text, const std::string& source = "<manifest>");

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

struct RunOutput {
  ScenarioResult result;
  RunManifest manifest;
  std::string manifest_path;
};

/// Runs the scenario and writes rates.csv, certificates.csv and manifest.json into out_dir.
RunOutput execute_run(const ScenarioConfig& config, const std::string& out_dir);

struct ReplayOutput {
  RunOutput run;
  std::vector<std::string> mismatches;  // outputs whose bytes differ from the manifest
};

/// Re-executes a manifest. Inputs must still hash to the recorded values.
ReplayOutput replay_manifest(const std::string& manifest_path, const std::string& out_dir,
                             std::optional<unsigned> threads = std::nullopt);

/// True when the file looks like a JSON manifest rather than a config.
bool looks_like_manifest(const std::string& path);

}  // namespace bsa::bench
