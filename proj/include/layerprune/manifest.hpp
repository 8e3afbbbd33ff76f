#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace layerprune {

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config;  // resolved options, TOML
  std::uint64_t seed = 0;
  std::string version;
  std::string device;
  std::string device_fingerprint;
  std::string started_at;
  std::string finished_at;
  std::string status = "incomplete";  // incomplete | complete | failed
  std::string error;
  std::vector<std::string> artifacts;  // relative to the manifest's directory
};

inline constexpr const char* kManifestName = "manifest.json";

std::string utc_timestamp();
std::string code_version();

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace layerprune
