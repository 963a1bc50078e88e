#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mseg::run {

// Library version string (matches the CMake project version).
std::string version();

// Current UTC time as ISO 8601 with second resolution.
std::string timestamp_utc();

// Record of one tool invocation, written next to the run's outputs so any
// result directory is self-describing and reproducible.
struct RunManifest {
  std::string command;                       // subcommand name
  std::vector<std::string> arguments;        // raw argv tail
  std::string config_path;                   // empty when no config file
  std::uint64_t seed = 0;
  std::string code_version;                  // filled by save when empty
  std::string started_at, finished_at;
  std::vector<std::string> outputs;          // files or directories produced
  std::map<std::string, std::string> notes;  // free-form key/value extras
};

// Atomic (temp file + rename) pretty-printed JSON write.
void save_manifest(const std::string& path, const RunManifest& m);
RunManifest load_manifest(const std::string& path);

}  // namespace mseg::run
