#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "ecmf/error.hpp"
#include "ecmf/jsonl.hpp"
#include "ecmf/label_refinement.hpp"

#include <httplib.h>

namespace ecmf {

struct ApiResponse {
  int status = 200;
  json body;
};

/// State behind the review HTTP API: the refine queue file replayed with the
/// append-only review log. Reads run concurrently; corrections are serialized and
/// reach the log (fsync'd) before the in-memory state changes.
class ReviewService {
 public:
  ReviewService(std::filesystem::path queue_path, std::filesystem::path log_path)
      : queue_path_(std::move(queue_path)), log_path_(std::move(log_path)) {
    if (!std::filesystem::exists(queue_path_)) {
      throw Error(ErrorCode::IoFailure, "review queue " + queue_path_.string() + " does not exist");
    }
    records_ = load_review_state(queue_path_, log_path_);
  }

  ApiResponse queue(std::optional<ReviewStatus> status, std::size_t offset, std::size_t limit) const {
    std::shared_lock lock(mutex_);
    json items = json::array();
    std::size_t total = 0;
    for (const auto& r : records_) {
      if (status && r.status != *status) continue;
      if (total >= offset && items.size() < limit) items.push_back(to_json(r));
      ++total;
    }
    return {200, {{"total", total}, {"offset", offset}, {"limit", limit}, {"items", items}}};
  }

  ApiResponse sample(const std::string& id) const {
    std::shared_lock lock(mutex_);
    const auto* r = find(id);
    if (!r) return error(404, "unknown sample " + id);
    return {200, to_json(*r)};
  }

  ApiResponse submit_label(const std::string& id, const std::string& body) {
    json req;
    try {
      req = json::parse(body);
    } catch (const json::parse_error&) {
      return error(422, "body is not valid JSON");
    }
    if (!req.is_object() || !req.contains("label") || !req.at("label").is_string()) {
      return error(422, "body needs a string \"label\"");
    }
    auto label = try_parse_label(req.at("label").get<std::string>());
    if (!label) return error(422, "invalid label \"" + req.at("label").get<std::string>() + "\"");
    std::string note;
    if (req.contains("note")) {
      if (!req.at("note").is_string()) return error(422, "\"note\" must be a string");
      note = req.at("note").get<std::string>();
    }

    std::unique_lock lock(mutex_);
    const auto* r = find(id);
    if (!r) return error(404, "unknown sample " + id);
    if (r->status == ReviewStatus::reviewed) return error(409, "sample " + id + " was already reviewed");
    if (r->status != ReviewStatus::needs_review) return error(409, "sample " + id + " is not in the review queue");

    ReviewDecision decision{id, *label, note, utc_timestamp()};
    try {
      append_review_log(log_path_, decision);
    } catch (const Error& e) {
      return error(500, e.what());
    }
    return {200, to_json(apply_review(records_, decision))};
  }

  ApiResponse stats() const {
    std::shared_lock lock(mutex_);
    std::map<std::string, std::size_t> counts{{"auto", 0}, {"needs_review", 0}, {"reviewed", 0}};
    for (const auto& r : records_) ++counts[std::string(to_string(r.status))];
    json body = counts;
    body["total"] = records_.size();
    return {200, body};
  }

  std::vector<VoteRecord> snapshot() const {
    std::shared_lock lock(mutex_);
    return records_;
  }

 private:
  static ApiResponse error(int status, const std::string& message) { return {status, {{"error", message}}}; }

  const VoteRecord* find(const std::string& id) const {
    for (const auto& r : records_) {
      if (r.sample_id == id) return &r;
    }
    return nullptr;
  }

  std::filesystem::path queue_path_;
  std::filesystem::path log_path_;
  mutable std::shared_mutex mutex_;
  std::vector<VoteRecord> records_;
};

inline constexpr const char* kPlaceholderIndex =
    "<!doctype html><html><head><title>ECMF review</title></head><body>"
    "<h1>ECMF label review</h1><p>The review UI assets are not installed. "
    "The JSON API is available under <code>/api/</code>.</p></body></html>";

/// Registers the review API routes on `server`. Static UI assets are served from
/// `static_dir` when it exists; otherwise `/` returns a placeholder page.
inline void register_review_routes(httplib::Server& server, ReviewService& service,
                                   const std::optional<std::filesystem::path>& static_dir = std::nullopt) {
  auto send = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };

  server.Get("/api/queue", [&service, send](const httplib::Request& req, httplib::Response& res) {
    std::optional<ReviewStatus> status;
    std::size_t offset = 0;
    std::size_t limit = 50;
    try {
      if (req.has_param("status")) status = parse_review_status(req.get_param_value("status"));
      if (req.has_param("offset")) offset = std::stoul(req.get_param_value("offset"));
      if (req.has_param("limit")) limit = std::stoul(req.get_param_value("limit"));
    } catch (const std::exception& e) {
      send(res, {422, {{"error", std::string("bad query parameter: ") + e.what()}}});
      return;
    }
    send(res, service.queue(status, offset, limit));
  });
  server.Get(R"(/api/sample/([^/]+))", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.sample(req.matches[1].str()));
  });
  server.Post(R"(/api/sample/([^/]+)/label)", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.submit_label(req.matches[1].str(), req.body));
  });
  server.Get("/api/stats", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.stats());
  });

  if (static_dir && std::filesystem::is_directory(*static_dir)) {
    server.set_mount_point("/", static_dir->string());
  } else {
    server.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kPlaceholderIndex, "text/html");
    });
  }
}

}  // namespace ecmf
