#include "layerprune/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "layerprune/error.hpp"

namespace layerprune {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string code_version() { return LAYERPRUNE_VERSION; }

nlohmann::json to_json(const RunManifest& m) {
  return {{"command", m.command},
          {"argv", m.argv},
          {"config", m.config},
          {"seed", m.seed},
          {"version", m.version},
          {"device", m.device},
          {"device_fingerprint", m.device_fingerprint},
          {"started_at", m.started_at},
          {"finished_at", m.finished_at},
          {"status", m.status},
          {"error", m.error},
          {"artifacts", m.artifacts}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = j.at("config").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.version = j.at("version").get<std::string>();
    m.device = j.at("device").get<std::string>();
    m.device_fingerprint = j.at("device_fingerprint").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.error = j.value("error", std::string{});
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw Error(ErrorCode::io, "cannot write " + tmp.string());
    os << to_json(m).dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::config, std::string("bad manifest: ") + e.what());
  }
}

}  // namespace layerprune
