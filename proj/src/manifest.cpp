#include "rfinfer/manifest.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>
#include <stdexcept>

#include <openssl/evp.h>

namespace rfinfer {

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "' for hashing");
  }
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(
      EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 init failed");
  }
  std::array<char, 1 << 16> buffer;
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    const auto got = in.gcount();
    if (got > 0 &&
        EVP_DigestUpdate(ctx.get(), buffer.data(),
                         static_cast<std::size_t>(got)) != 1) {
      throw std::runtime_error("sha256 update failed");
    }
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest;
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw std::runtime_error("sha256 final failed");
  }
  std::string hex(static_cast<std::size_t>(len) * 2, '0');
  static const char* alphabet = "0123456789abcdef";
  for (unsigned int i = 0; i < len; ++i) {
    hex[2 * i] = alphabet[digest[i] >> 4];
    hex[2 * i + 1] = alphabet[digest[i] & 0x0F];
  }
  return hex;
}

std::string manifest_path_for(const std::string& output_path) {
  const auto slash = output_path.find_last_of("/\\");
  const auto dot = output_path.find_last_of('.');
  if (dot == std::string::npos ||
      (slash != std::string::npos && dot < slash)) {
    return output_path + ".manifest.json";
  }
  return output_path.substr(0, dot) + ".manifest.json";
}

std::string iso8601_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec);
  return buf;
}

void write_manifest(const RunManifest& manifest,
                    const std::string& output_path) {
  nlohmann::ordered_json j;
  j["command"] = manifest.command;
  j["version"] = manifest.version;
  j["seed"] = manifest.seed;
  j["config"] = manifest.config;
  auto inputs = nlohmann::ordered_json::array();
  for (const auto& [path, digest] : manifest.input_digests) {
    inputs.push_back({{"path", path}, {"sha256", digest}});
  }
  j["inputs"] = inputs;
  j["outputs"] = manifest.outputs;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;

  const std::string path = manifest_path_for(output_path);
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << j.dump(2) << '\n';
  if (!out) {
    throw std::runtime_error("write to '" + path + "' failed");
  }
}

}  // namespace rfinfer
