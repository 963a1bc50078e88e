#include "mseg/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mseg/errors.hpp"

#ifndef MSEG_VERSION
#define MSEG_VERSION "0.0.0"
#endif

namespace mseg::run {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

}  // namespace

std::string version() { return MSEG_VERSION; }

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void save_manifest(const std::string& path, const RunManifest& m) {
  ordered_json j;
  j["command"] = m.command;
  j["arguments"] = m.arguments;
  j["config_path"] = m.config_path;
  j["seed"] = m.seed;
  j["code_version"] = m.code_version.empty() ? version() : m.code_version;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["outputs"] = m.outputs;
  j["notes"] = m.notes;

  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest: " + tmp.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing manifest: " + tmp.string());
  }
  fs::rename(tmp, target);
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("missing manifest: " + path);
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("manifest is not valid JSON: " + path);
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.arguments = j.at("arguments").get<std::vector<std::string>>();
    m.config_path = j.at("config_path").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.code_version = j.at("code_version").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.notes = j.at("notes").get<std::map<std::string, std::string>>();
    return m;
  } catch (const ordered_json::exception& e) {
    throw FormatError("manifest " + path + ": " + e.what());
  }
}

}  // namespace mseg::run
