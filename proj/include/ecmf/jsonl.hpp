#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ecmf/error.hpp"

namespace ecmf {

using json = nlohmann::json;

/// Calls `fn(line_number, record)` for every non-blank line of a JSON-Lines file.
/// Line numbers are 1-based.
template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseFailure, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.is_object()) {
      throw Error(ErrorCode::ParseFailure,
                  path.string() + ":" + std::to_string(line_no) + ": record is not a JSON object");
    }
    fn(line_no, record);
  }
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read error on " + path.string());
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  return out;
}

inline void write_json_file(const std::filesystem::path& path, const json& value) {
  auto out = open_for_write(path);
  out << value.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseFailure, path.string() + ": " + e.what());
  }
}

}  // namespace ecmf
