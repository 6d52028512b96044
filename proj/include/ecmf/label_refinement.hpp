#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <chrono>
#include <cstddef>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ecmf/dataset.hpp"
#include "ecmf/error.hpp"
#include "ecmf/fusion_net.hpp"
#include "ecmf/jsonl.hpp"
#include "ecmf/labels.hpp"
#include "ecmf/training.hpp"

namespace ecmf {

enum class SourceKind { weak_classifier, external_file };

inline std::string_view to_string(SourceKind k) {
  return k == SourceKind::weak_classifier ? "weak_classifier" : "external_file";
}

/// One voter in label refinement: a per-modality weak classifier or an ingested
/// pseudo-label file.
struct LabelSource {
  std::string source_id;
  SourceKind kind = SourceKind::external_file;
  std::optional<Modality> modality;  // weak classifiers only
  std::map<std::string, LabelEntry> predictions;
};

/// Trains the fusion network on one modality's streams (others dropped from the schema)
/// using the dataset's current labels, then predicts every sample. Confidence is the
/// max softmax probability. With an empty `val_set` the last epoch's weights are used.
inline LabelSource train_weak_classifier(const Dataset& dataset, Modality modality, ModelConfig model_config,
                                         const TrainConfig& train_config) {
  auto view = dataset.restricted_to(modality);
  if (view.schema.empty()) {
    throw Error(ErrorCode::SchemaMismatch, "dataset has no " + std::string(to_string(modality)) + " streams");
  }
  model_config.schema = view.schema;
  auto report = train_one(model_config, view, Dataset{view.schema, {}}, train_config);
  LabelSource source{"weak_" + std::string(to_string(modality)), SourceKind::weak_classifier, modality, {}};
  auto predictions = report.best.predict_all(view);
  for (std::size_t i = 0; i < view.samples.size(); ++i) {
    const auto& p = predictions[i];
    source.predictions.emplace(view.samples[i].sample_id, LabelEntry{p.label, p.probs[index_of(p.label)]});
  }
  return source;
}

/// Pseudo-label file in the label-file format; missing confidences default to 1.0.
inline LabelSource load_external_source(const std::filesystem::path& path, std::string source_id = {}) {
  if (source_id.empty()) source_id = path.stem().string();
  return LabelSource{std::move(source_id), SourceKind::external_file, std::nullopt, load_label_entries(path)};
}

inline void save_source(const LabelSource& source, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& [id, e] : source.predictions) {
    out << json{{"sample_id", id}, {"label", to_string(e.label)}, {"confidence", e.confidence}}.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + path.string());
}

// ---------------------------------------------------------------------------
// Voting

enum class ReviewStatus { automatic, needs_review, reviewed };

inline std::string_view to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::automatic: return "auto";
    case ReviewStatus::needs_review: return "needs_review";
    case ReviewStatus::reviewed: return "reviewed";
  }
  return "?";
}

inline ReviewStatus parse_review_status(std::string_view text) {
  if (text == "auto") return ReviewStatus::automatic;
  if (text == "needs_review") return ReviewStatus::needs_review;
  if (text == "reviewed") return ReviewStatus::reviewed;
  throw Error(ErrorCode::ParseFailure, "unknown review status \"" + std::string(text) + "\"");
}

struct SourceVote {
  std::string source_id;
  EmotionLabel label;
  double confidence;

  bool operator==(const SourceVote&) const = default;
};

struct VoteRecord {
  std::string sample_id;
  std::optional<EmotionLabel> original_label;
  std::vector<SourceVote> votes;  // sorted by source_id
  EmotionLabel refined_label = EmotionLabel::worried;
  ReviewStatus status = ReviewStatus::automatic;
  std::optional<std::string> reviewer_note;
  std::optional<std::string> transcript;

  bool operator==(const VoteRecord&) const = default;
};

inline json to_json(const VoteRecord& r) {
  json votes = json::array();
  for (const auto& v : r.votes) {
    votes.push_back({{"source_id", v.source_id}, {"label", to_string(v.label)}, {"confidence", v.confidence}});
  }
  return {{"sample_id", r.sample_id},
          {"original_label", r.original_label ? json(to_string(*r.original_label)) : json(nullptr)},
          {"source_votes", votes},
          {"refined_label", to_string(r.refined_label)},
          {"status", to_string(r.status)},
          {"reviewer_note", r.reviewer_note ? json(*r.reviewer_note) : json(nullptr)},
          {"transcript", r.transcript ? json(*r.transcript) : json(nullptr)}};
}

inline VoteRecord vote_record_from_json(const json& j) {
  try {
    VoteRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    if (!j.at("original_label").is_null()) r.original_label = parse_label(j.at("original_label").get<std::string>());
    for (const auto& v : j.at("source_votes")) {
      r.votes.push_back({v.at("source_id").get<std::string>(), parse_label(v.at("label").get<std::string>()),
                         v.at("confidence").get<double>()});
    }
    r.refined_label = parse_label(j.at("refined_label").get<std::string>());
    r.status = parse_review_status(j.at("status").get<std::string>());
    if (j.contains("reviewer_note") && !j.at("reviewer_note").is_null()) {
      r.reviewer_note = j.at("reviewer_note").get<std::string>();
    }
    if (j.contains("transcript") && !j.at("transcript").is_null()) r.transcript = j.at("transcript").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("vote record: ") + e.what());
  }
}

struct RefineOptions {
  /// The original annotation casts a ballot (confidence 1.0) alongside the sources.
  bool original_votes = true;
  /// Also pseudo-label samples without a gold label (ballot = sources only).
  bool include_unlabeled = false;
};

struct RefineResult {
  LabelMap refined;
  std::vector<VoteRecord> records;
};

namespace detail {

struct Ballot {
  std::array<std::size_t, kNumClasses> count{};
  std::array<std::vector<double>, kNumClasses> confidences;
  std::size_t size = 0;

  void cast(EmotionLabel label, double confidence) {
    ++count[index_of(label)];
    confidences[index_of(label)].push_back(confidence);
    ++size;
  }

  /// Summed in sorted order so the total does not depend on voter order.
  double confidence_sum(std::size_t c) const {
    auto v = confidences[c];
    std::sort(v.begin(), v.end());
    double s = 0;
    for (double x : v) s += x;
    return s;
  }

  std::optional<EmotionLabel> strict_majority() const {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (2 * count[c] > size) return label_from_index(c);
    }
    return std::nullopt;
  }

  /// Most votes; ties by summed confidence, then lower class index.
  EmotionLabel plurality() const {
    std::size_t best = 0;
    double best_conf = confidence_sum(0);
    for (std::size_t c = 1; c < kNumClasses; ++c) {
      const double conf = confidence_sum(c);
      if (count[c] > count[best] || (count[c] == count[best] && conf > best_conf)) {
        best = c;
        best_conf = conf;
      }
    }
    return label_from_index(best);
  }
};

}  // namespace detail

/// Majority vote over the original annotation plus every source. A sample goes to
/// review when every source disagrees with its original label and the ballot has no
/// strict majority; its refined label then stays at the original until reviewed.
inline RefineResult refine(const Dataset& dataset, std::vector<LabelSource> sources, const RefineOptions& options = {}) {
  if (sources.size() < 2) {
    throw Error(ErrorCode::InvalidConfig, "refine needs at least 2 label sources, got " + std::to_string(sources.size()));
  }
  std::sort(sources.begin(), sources.end(),
            [](const LabelSource& a, const LabelSource& b) { return a.source_id < b.source_id; });
  for (std::size_t i = 1; i < sources.size(); ++i) {
    if (sources[i].source_id == sources[i - 1].source_id) {
      throw Error(ErrorCode::InvalidConfig, "duplicate label source " + sources[i].source_id);
    }
  }

  RefineResult out;
  for (const auto& sample : dataset.samples) {
    if (!sample.gold_label && !options.include_unlabeled) continue;
    VoteRecord rec;
    rec.sample_id = sample.sample_id;
    rec.original_label = sample.gold_label;
    rec.transcript = sample.transcript;

    detail::Ballot ballot;
    if (rec.original_label && options.original_votes) ballot.cast(*rec.original_label, 1.0);
    bool all_disagree = rec.original_label.has_value();
    for (const auto& src : sources) {
      auto it = src.predictions.find(sample.sample_id);
      if (it == src.predictions.end()) {
        throw Error(ErrorCode::MissingPrediction, "source " + src.source_id + " lacks sample " + sample.sample_id);
      }
      rec.votes.push_back({src.source_id, it->second.label, it->second.confidence});
      ballot.cast(it->second.label, it->second.confidence);
      if (rec.original_label && it->second.label == *rec.original_label) all_disagree = false;
    }

    if (auto majority = ballot.strict_majority()) {
      rec.refined_label = *majority;
      rec.status = ReviewStatus::automatic;
    } else if (all_disagree) {
      rec.refined_label = *rec.original_label;
      rec.status = ReviewStatus::needs_review;
    } else {
      rec.refined_label = ballot.plurality();
      rec.status = ReviewStatus::automatic;
    }
    out.refined.emplace(rec.sample_id, rec.refined_label);
    out.records.push_back(std::move(rec));
  }
  return out;
}

inline LabelMap refined_labels(const std::vector<VoteRecord>& records) {
  LabelMap out;
  for (const auto& r : records) out.emplace(r.sample_id, r.refined_label);
  return out;
}

// ---------------------------------------------------------------------------
// Human review

struct ReviewDecision {
  std::string sample_id;
  EmotionLabel corrected;
  std::string note;
  std::string timestamp;

  bool operator==(const ReviewDecision&) const = default;
};

inline json to_json(const ReviewDecision& d) {
  return {{"sample_id", d.sample_id}, {"corrected", to_string(d.corrected)}, {"note", d.note}, {"timestamp", d.timestamp}};
}

inline ReviewDecision review_decision_from_json(const json& j) {
  try {
    return {j.at("sample_id").get<std::string>(), parse_label(j.at("corrected").get<std::string>()),
            j.value("note", std::string{}), j.value("timestamp", std::string{})};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("review decision: ") + e.what());
  }
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Applies one review decision. Only needs_review records accept corrections;
/// the corrected label may equal the original.
inline VoteRecord& apply_review(std::vector<VoteRecord>& records, const ReviewDecision& decision) {
  auto it = std::find_if(records.begin(), records.end(),
                         [&](const VoteRecord& r) { return r.sample_id == decision.sample_id; });
  if (it == records.end()) throw Error(ErrorCode::NotFound, "no vote record for sample " + decision.sample_id);
  if (it->status == ReviewStatus::reviewed) {
    throw Error(ErrorCode::AlreadyReviewed, "sample " + decision.sample_id + " was already reviewed");
  }
  if (it->status != ReviewStatus::needs_review) {
    throw Error(ErrorCode::NotFound, "sample " + decision.sample_id + " is not in the review queue");
  }
  it->refined_label = decision.corrected;
  it->status = ReviewStatus::reviewed;
  it->reviewer_note = decision.note;
  return *it;
}

inline VoteRecord& apply_review(std::vector<VoteRecord>& records, const std::string& sample_id,
                                EmotionLabel corrected, const std::string& note) {
  return apply_review(records, ReviewDecision{sample_id, corrected, note, utc_timestamp()});
}

/// Re-applies a review log to the records `refine` produced.
inline std::vector<VoteRecord> replay_reviews(std::vector<VoteRecord> records, const std::vector<ReviewDecision>& log) {
  for (const auto& d : log) apply_review(records, d);
  return records;
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_vote_records(const std::vector<VoteRecord>& records, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + path.string());
}

inline std::vector<VoteRecord> load_vote_records(const std::filesystem::path& path) {
  std::vector<VoteRecord> out;
  std::set<std::string> seen;
  for_each_jsonl(path, [&](std::size_t line_no, const json& rec) {
    auto r = vote_record_from_json(rec);
    if (!seen.insert(r.sample_id).second) {
      throw Error(ErrorCode::ParseFailure,
                  path.string() + ":" + std::to_string(line_no) + ": duplicate sample_id " + r.sample_id);
    }
    out.push_back(std::move(r));
  });
  return out;
}

inline std::vector<ReviewDecision> load_review_log(const std::filesystem::path& path) {
  std::vector<ReviewDecision> out;
  if (!std::filesystem::exists(path)) return out;
  for_each_jsonl(path, [&](std::size_t, const json& rec) { out.push_back(review_decision_from_json(rec)); });
  return out;
}

/// Appends one decision and fsyncs before returning.
inline void append_review_log(const std::filesystem::path& path, const ReviewDecision& decision) {
  const std::string line = to_json(decision).dump() + "\n";
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + ": " + std::strerror(errno));
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw Error(ErrorCode::IoFailure, "write to " + path.string() + " failed: " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw Error(ErrorCode::IoFailure, "fsync of " + path.string() + " failed: " + std::strerror(errno));
  }
  ::close(fd);
}

/// Queue file plus review log, replayed.
inline std::vector<VoteRecord> load_review_state(const std::filesystem::path& queue_path,
                                                 const std::filesystem::path& log_path) {
  return replay_reviews(load_vote_records(queue_path), load_review_log(log_path));
}

}  // namespace ecmf
