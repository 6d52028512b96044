#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ecmf/error.hpp"
#include "ecmf/jsonl.hpp"

namespace ecmf {

inline std::string sha1_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error(ErrorCode::IoFailure, "SHA-1 digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

/// Same id `git hash-object` prints: sha1("blob <size>\0" + content).
inline std::string git_blob_hash(std::string_view content) {
  std::string header = "blob " + std::to_string(content.size());
  header.push_back('\0');
  return sha1_hex(header + std::string(content));
}

inline std::string git_blob_hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return git_blob_hash(content);
}

/// Everything needed to re-run a CLI command exactly.
struct RunManifest {
  std::string command;
  json config = json::object();
  std::vector<std::filesystem::path> inputs;
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> outputs;

  /// Per-input blob ids plus one combined id over (path, blob id) pairs.
  json content_hashes() const {
    json files = json::object();
    std::string combined;
    for (const auto& p : inputs) {
      auto h = git_blob_hash_file(p);
      files[p.string()] = h;
      combined += p.string() + '\0' + h + '\n';
    }
    return {{"files", files}, {"combined", git_blob_hash(combined)}};
  }
};

inline json to_json(const RunManifest& m) {
  json inputs = json::array();
  for (const auto& p : m.inputs) inputs.push_back(p.string());
  json outputs = json::array();
  for (const auto& p : m.outputs) outputs.push_back(p.string());
  return {{"command", m.command}, {"config", m.config},   {"inputs", inputs},
          {"seed", m.seed},       {"outputs", outputs},   {"input_hash", m.content_hashes()}};
}

}  // namespace ecmf
