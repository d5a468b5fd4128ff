#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace qclass {

// Lowercase hex SHA-256 of a file's bytes. Throws DataError when unreadable.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

// Revision baked in at configure time, or "unknown".
std::string git_revision();

// UTC, ISO 8601 with seconds.
std::string utc_timestamp();

// Provenance record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::vector<std::string> config_paths;
  std::map<std::string, std::string> input_checksums;  // path -> sha256
  std::map<std::string, std::string> output_checksums;
  std::optional<std::uint64_t> seed;
  std::string git_revision;
  std::string started_at;
  std::string finished_at;  // empty while the command runs
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void write(const std::filesystem::path& path) const;
};

}  // namespace qclass
