#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace rfinfer {

// Provenance sidecar written next to every CLI output file. Timestamps live
// here and only here, so result files stay byte-identical across reruns.
struct RunManifest {
  std::string command;  // argv joined with spaces
  std::string version;
  std::uint64_t seed = 0;
  nlohmann::ordered_json config;  // fully resolved parameters
  std::vector<std::pair<std::string, std::string>> input_digests;
  std::vector<std::string> outputs;
  std::string started_at;  // ISO 8601 UTC
  std::string finished_at;
};

std::string sha256_file(const std::string& path);

// "results.csv" -> "results.manifest.json"; appends when there is no
// extension to strip.
std::string manifest_path_for(const std::string& output_path);

std::string iso8601_utc_now();

void write_manifest(const RunManifest& manifest,
                    const std::string& output_path);

}  // namespace rfinfer
