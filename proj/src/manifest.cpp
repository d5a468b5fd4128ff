#include "qclass/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>

#include "qclass/errors.hpp"

#ifndef QCLASS_GIT_REVISION
#define QCLASS_GIT_REVISION "unknown"
#endif

namespace qclass {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init");
  }
  void update(const char* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("sha256 update");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), digest.data(), &len) != 1) throw std::runtime_error("sha256 final");
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += kDigits[digest[i] >> 4];
      out += kDigits[digest[i] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf;
  while (is) {
    is.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  return h.hex();
}

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string git_revision() { return QCLASS_GIT_REVISION; }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j = {{"command", command},
                      {"argv", argv},
                      {"config_paths", config_paths},
                      {"input_checksums", input_checksums},
                      {"output_checksums", output_checksums},
                      {"git_revision", git_revision},
                      {"started_at", started_at},
                      {"finished_at", finished_at.empty() ? nlohmann::json() : nlohmann::json(finished_at)},
                      {"extra", extra}};
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json();
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config_paths = j.at("config_paths").get<std::vector<std::string>>();
    m.input_checksums = j.at("input_checksums").get<std::map<std::string, std::string>>();
    m.output_checksums = j.at("output_checksums").get<std::map<std::string, std::string>>();
    m.git_revision = j.at("git_revision").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    if (!j.at("finished_at").is_null()) m.finished_at = j.at("finished_at").get<std::string>();
    if (!j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
    m.extra = j.value("extra", nlohmann::json::object());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_json().dump(2) << '\n';
}

}  // namespace qclass
