#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ecmf/error.hpp"
#include "ecmf/jsonl.hpp"
#include "ecmf/labels.hpp"

namespace ecmf {

struct StreamSpec {
  Modality modality;
  std::string name;
  std::size_t dim;

  bool operator==(const StreamSpec&) const = default;
};

/// Ordered list of feature streams. The order defines the token order downstream.
class StreamSchema {
 public:
  StreamSchema() = default;
  explicit StreamSchema(std::vector<StreamSpec> entries) : entries_(std::move(entries)) { validate(); }

  const std::vector<StreamSpec>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const StreamSpec& operator[](std::size_t i) const { return entries_[i]; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return i;
    }
    return std::nullopt;
  }

  /// Schema positions of the streams of one modality, in schema order.
  std::vector<std::size_t> streams_of(Modality m) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].modality == m) out.push_back(i);
    }
    return out;
  }

  bool has_modality(Modality m) const { return !streams_of(m).empty(); }

  StreamSchema restricted_to(Modality m) const {
    std::vector<StreamSpec> kept;
    for (const auto& e : entries_) {
      if (e.modality == m) kept.push_back(e);
    }
    return StreamSchema(std::move(kept));
  }

  bool operator==(const StreamSchema&) const = default;

 private:
  void validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries_) {
      if (e.name.empty()) throw Error(ErrorCode::InvalidConfig, "empty stream name in schema");
      if (e.dim == 0) throw Error(ErrorCode::InvalidConfig, "stream " + e.name + " has dim 0");
      if (!seen.insert(e.name).second) {
        throw Error(ErrorCode::InvalidConfig, "duplicate stream name " + e.name + " in schema");
      }
    }
  }

  std::vector<StreamSpec> entries_;
};

/// Three audio streams (HuBERT layer groups), six text streams (transcript and
/// LLM enrichments), two video streams (face crop and full frame).
inline StreamSchema default_schema(std::size_t dim = 64) {
  return StreamSchema({
      {Modality::audio, "hubert_L16_17", dim},
      {Modality::audio, "hubert_L18_19", dim},
      {Modality::audio, "hubert_L20_21", dim},
      {Modality::text, "roberta_transcript", dim},
      {Modality::text, "gpt4_label", dim},
      {Modality::text, "gpt4_keywords", dim},
      {Modality::text, "qwen_label", dim},
      {Modality::text, "qwen_description", dim},
      {Modality::text, "qwen_clues", dim},
      {Modality::video, "face", dim},
      {Modality::video, "frame", dim},
  });
}

inline json to_json(const StreamSchema& schema) {
  json out = json::array();
  for (const auto& e : schema.entries()) {
    out.push_back({{"modality", to_string(e.modality)}, {"stream_name", e.name}, {"dim", e.dim}});
  }
  return out;
}

inline StreamSchema schema_from_json(const json& j) {
  std::vector<StreamSpec> entries;
  try {
    for (const auto& e : j) {
      entries.push_back({parse_modality(e.at("modality").get<std::string>()), e.at("stream_name").get<std::string>(),
                         e.at("dim").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("schema: ") + e.what());
  }
  return StreamSchema(std::move(entries));
}

struct FeatureStream {
  Modality modality;
  std::string stream_name;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  bool operator==(const FeatureStream&) const = default;
};

struct Sample {
  std::string sample_id;
  /// One stream per schema entry, in schema order.
  std::vector<FeatureStream> streams;
  std::optional<EmotionLabel> gold_label;
  std::optional<std::string> transcript;

  bool operator==(const Sample&) const = default;
};

/// Throws unless `sample` carries exactly the schema's streams with matching dims.
inline void check_conforms(const Sample& sample, const StreamSchema& schema) {
  if (sample.streams.size() != schema.size()) {
    throw Error(ErrorCode::SchemaMismatch, "sample " + sample.sample_id + " has " +
                                               std::to_string(sample.streams.size()) + " streams, schema has " +
                                               std::to_string(schema.size()));
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& spec = schema[i];
    const auto& s = sample.streams[i];
    if (s.stream_name != spec.name || s.modality != spec.modality) {
      throw Error(ErrorCode::SchemaMismatch,
                  "sample " + sample.sample_id + " stream " + std::to_string(i) + " is " + s.stream_name +
                      ", schema expects " + spec.name);
    }
    if (s.values.size() != spec.dim) {
      throw Error(ErrorCode::DimMismatch, "sample " + sample.sample_id + " stream " + spec.name + " has " +
                                              std::to_string(s.values.size()) + " values, schema dim " +
                                              std::to_string(spec.dim));
    }
    for (double v : s.values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFiniteValue, "sample " + sample.sample_id + " stream " + spec.name);
      }
    }
  }
}

struct Dataset {
  StreamSchema schema;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& s : samples) {
      if (!ids.insert(s.sample_id).second) {
        throw Error(ErrorCode::DuplicateRecord, "duplicate sample_id " + s.sample_id);
      }
      check_conforms(s, schema);
    }
  }

  const Sample* find(std::string_view id) const {
    auto it = std::lower_bound(samples.begin(), samples.end(), id,
                               [](const Sample& s, std::string_view key) { return s.sample_id < key; });
    if (it != samples.end() && it->sample_id == id) return &*it;
    for (const auto& s : samples) {  // unsorted datasets
      if (s.sample_id == id) return &s;
    }
    return nullptr;
  }

  std::size_t labeled_count() const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.gold_label.has_value(); }));
  }

  /// Keeps only the streams of one modality (the weak-classifier view).
  Dataset restricted_to(Modality m) const {
    Dataset out{schema.restricted_to(m), {}};
    out.samples.reserve(samples.size());
    for (const auto& s : samples) {
      Sample r{s.sample_id, {}, s.gold_label, s.transcript};
      for (const auto& fs : s.streams) {
        if (fs.modality == m) r.streams.push_back(fs);
      }
      out.samples.push_back(std::move(r));
    }
    return out;
  }

  /// Samples whose ids are in `ids`, keeping dataset order.
  Dataset subset(const std::set<std::string>& ids) const {
    Dataset out{schema, {}};
    for (const auto& s : samples) {
      if (ids.count(s.sample_id)) out.samples.push_back(s);
    }
    return out;
  }

  /// Same samples with gold labels replaced from `labels` (ids absent from the map keep theirs).
  Dataset with_labels(const std::map<std::string, EmotionLabel>& labels) const {
    Dataset out = *this;
    for (auto& s : out.samples) {
      if (auto it = labels.find(s.sample_id); it != labels.end()) s.gold_label = it->second;
    }
    return out;
  }

  bool operator==(const Dataset&) const = default;
};

// ---------------------------------------------------------------------------
// Feature manifest (JSON-Lines)

/// Streams ordered by modality (audio, text, video), then by first appearance in the file.
inline StreamSchema infer_schema(const std::filesystem::path& manifest_path) {
  std::vector<StreamSpec> seen;
  for_each_jsonl(manifest_path, [&](std::size_t line_no, const json& rec) {
    if (!rec.contains("values")) return;
    try {
      auto name = rec.at("stream_name").get<std::string>();
      auto it = std::find_if(seen.begin(), seen.end(), [&](const StreamSpec& s) { return s.name == name; });
      if (it != seen.end()) return;
      seen.push_back({parse_modality(rec.at("modality").get<std::string>()), name, rec.at("dim").get<std::size_t>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseFailure, manifest_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  std::stable_sort(seen.begin(), seen.end(), [](const StreamSpec& a, const StreamSpec& b) {
    return static_cast<int>(a.modality) < static_cast<int>(b.modality);
  });
  return StreamSchema(std::move(seen));
}

/// Parses a feature manifest against `schema`. Samples come back sorted by sample_id.
inline Dataset ingest(const std::filesystem::path& manifest_path, const StreamSchema& schema) {
  struct Partial {
    std::vector<std::optional<FeatureStream>> streams;
    std::optional<EmotionLabel> gold_label;
    std::optional<std::string> transcript;
  };
  std::map<std::string, Partial> partial;
  auto where = [&](std::size_t line_no) { return manifest_path.string() + ":" + std::to_string(line_no); };

  for_each_jsonl(manifest_path, [&](std::size_t line_no, const json& rec) {
    std::string id;
    try {
      id = rec.at("sample_id").get<std::string>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::ParseFailure, where(line_no) + ": record lacks a string sample_id");
    }
    auto& p = partial[id];
    if (p.streams.empty()) p.streams.resize(schema.size());

    try {
      if (rec.contains("values")) {
        auto name = rec.at("stream_name").get<std::string>();
        auto modality = parse_modality(rec.at("modality").get<std::string>());
        auto dim = rec.at("dim").get<std::size_t>();
        auto pos = schema.find(name);
        if (!pos) throw Error(ErrorCode::SchemaMismatch, where(line_no) + ": stream " + name + " not in schema");
        const auto& spec = schema[*pos];
        if (spec.modality != modality) {
          throw Error(ErrorCode::SchemaMismatch, where(line_no) + ": sample " + id + " stream " + name +
                                                     " has modality " + std::string(to_string(modality)));
        }
        if (p.streams[*pos]) {
          throw Error(ErrorCode::DuplicateRecord, where(line_no) + ": sample " + id + " stream " + name);
        }
        const auto& vals = rec.at("values");
        if (!vals.is_array()) throw Error(ErrorCode::ParseFailure, where(line_no) + ": values is not an array");
        if (vals.size() != dim || dim != spec.dim) {
          throw Error(ErrorCode::DimMismatch, where(line_no) + ": sample " + id + " stream " + name + " declares dim " +
                                                  std::to_string(dim) + " with " + std::to_string(vals.size()) +
                                                  " values (schema dim " + std::to_string(spec.dim) + ")");
        }
        FeatureStream fs{modality, name, {}};
        fs.values.reserve(dim);
        for (const auto& v : vals) {
          if (!v.is_number()) {
            throw Error(ErrorCode::NonFiniteValue, where(line_no) + ": sample " + id + " stream " + name);
          }
          double x = v.get<double>();
          if (!std::isfinite(x)) {
            throw Error(ErrorCode::NonFiniteValue, where(line_no) + ": sample " + id + " stream " + name);
          }
          fs.values.push_back(x);
        }
        p.streams[*pos] = std::move(fs);
      } else if (rec.contains("gold_label")) {
        if (p.gold_label) throw Error(ErrorCode::DuplicateRecord, where(line_no) + ": sample " + id + " gold_label");
        p.gold_label = parse_label(rec.at("gold_label").get<std::string>());
      } else if (rec.contains("transcript")) {
        if (p.transcript) throw Error(ErrorCode::DuplicateRecord, where(line_no) + ": sample " + id + " transcript");
        p.transcript = rec.at("transcript").get<std::string>();
      } else {
        throw Error(ErrorCode::ParseFailure, where(line_no) + ": unrecognised record kind");
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseFailure, where(line_no) + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ParseFailure && std::string(e.what()).find(where(line_no)) == std::string::npos) {
        throw Error(ErrorCode::ParseFailure, where(line_no) + ": " + e.what());
      }
      throw;
    }
  });

  Dataset out{schema, {}};
  out.samples.reserve(partial.size());
  for (auto& [id, p] : partial) {  // std::map iterates in sample_id order
    Sample s{id, {}, p.gold_label, p.transcript};
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (!p.streams[i]) throw Error(ErrorCode::MissingStream, "sample " + id + " lacks stream " + schema[i].name);
      s.streams.push_back(std::move(*p.streams[i]));
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

inline Dataset ingest(const std::filesystem::path& manifest_path) {
  return ingest(manifest_path, infer_schema(manifest_path));
}

inline void write_manifest(const Dataset& dataset, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& s : dataset.samples) {
    for (const auto& fs : s.streams) {
      json rec = {{"sample_id", s.sample_id},
                  {"modality", to_string(fs.modality)},
                  {"stream_name", fs.stream_name},
                  {"dim", fs.values.size()},
                  {"values", fs.values}};
      out << rec.dump() << '\n';
    }
    if (s.gold_label) out << json{{"sample_id", s.sample_id}, {"gold_label", to_string(*s.gold_label)}}.dump() << '\n';
    if (s.transcript) out << json{{"sample_id", s.sample_id}, {"transcript", *s.transcript}}.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::size_t n_per_class = 10;
  StreamSchema schema = default_schema();
  double separation = 4.0;
  double noise_sigma = 1.0;
  double label_noise_rate = 0.0;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Dataset dataset;
  /// Labels before corruption, keyed by sample_id.
  std::map<std::string, EmotionLabel> clean_labels;
};

/// Per stream, six class means are drawn as random Gaussian directions and rescaled so
/// the closest pair sits exactly `separation * noise_sigma` apart; each sample is its
/// class mean plus isotropic noise. Exactly round(rate * N) labels are then moved to a
/// uniformly drawn wrong class.
inline SyntheticData synth_generate(const SynthConfig& cfg) {
  if (cfg.n_per_class == 0) throw Error(ErrorCode::InvalidConfig, "n_per_class must be positive");
  if (cfg.schema.empty()) throw Error(ErrorCode::InvalidConfig, "schema has no streams");
  if (!(cfg.separation > 0)) throw Error(ErrorCode::InvalidConfig, "separation must be > 0");
  if (!(cfg.noise_sigma >= 0)) throw Error(ErrorCode::InvalidConfig, "noise_sigma must be >= 0");
  if (!(cfg.label_noise_rate >= 0 && cfg.label_noise_rate <= 1)) {
    throw Error(ErrorCode::InvalidConfig, "label_noise_rate must lie in [0,1]");
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double unit = cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0;

  // means[stream][class] -> vector
  std::vector<std::vector<std::vector<double>>> means(cfg.schema.size());
  for (std::size_t s = 0; s < cfg.schema.size(); ++s) {
    const std::size_t dim = cfg.schema[s].dim;
    auto& m = means[s];
    m.assign(kNumClasses, std::vector<double>(dim));
    double min_dist = 0;
    do {
      for (auto& v : m) {
        for (auto& x : v) x = normal(rng);
      }
      min_dist = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < kNumClasses; ++a) {
        for (std::size_t b = a + 1; b < kNumClasses; ++b) {
          double d2 = 0;
          for (std::size_t k = 0; k < dim; ++k) d2 += (m[a][k] - m[b][k]) * (m[a][k] - m[b][k]);
          min_dist = std::min(min_dist, std::sqrt(d2));
        }
      }
    } while (!(min_dist > 1e-6));
    // The tiny headroom keeps the rescaled minimum at or above the target after rounding.
    const double scale = cfg.separation * unit / min_dist * (1.0 + 1e-12);
    for (auto& v : m) {
      for (auto& x : v) x *= scale;
    }
  }

  const std::size_t total = cfg.n_per_class * kNumClasses;
  const int width = static_cast<int>(std::to_string(total - 1).size());
  SyntheticData out;
  out.dataset.schema = cfg.schema;
  out.dataset.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const auto label = label_from_index(i % kNumClasses);
    std::ostringstream id;
    id << "syn" << std::setw(width) << std::setfill('0') << i;
    Sample sample{id.str(), {}, label, std::nullopt};
    for (std::size_t s = 0; s < cfg.schema.size(); ++s) {
      const auto& spec = cfg.schema[s];
      FeatureStream fs{spec.modality, spec.name, std::vector<double>(spec.dim)};
      for (std::size_t k = 0; k < spec.dim; ++k) {
        fs.values[k] = means[s][index_of(label)][k] + cfg.noise_sigma * normal(rng);
      }
      sample.streams.push_back(std::move(fs));
    }
    out.clean_labels.emplace(sample.sample_id, label);
    out.dataset.samples.push_back(std::move(sample));
  }

  const auto n_corrupt = static_cast<std::size_t>(std::llround(cfg.label_noise_rate * static_cast<double>(total)));
  if (n_corrupt > 0) {
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> wrong(1, kNumClasses - 1);
    for (std::size_t j = 0; j < n_corrupt; ++j) {
      auto& s = out.dataset.samples[order[j]];
      s.gold_label = label_from_index((index_of(*s.gold_label) + wrong(rng)) % kNumClasses);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label files

using LabelMap = std::map<std::string, EmotionLabel>;

inline LabelMap labels_of(const Dataset& dataset) {
  LabelMap out;
  for (const auto& s : dataset.samples) {
    if (s.gold_label) out.emplace(s.sample_id, *s.gold_label);
  }
  return out;
}

inline void save_labels(const LabelMap& labels, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& [id, label] : labels) {
    out << json{{"sample_id", id}, {"label", to_string(label)}}.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + path.string());
}

inline void save_labels(const Dataset& dataset, const std::filesystem::path& path) {
  save_labels(labels_of(dataset), path);
}

struct LabelEntry {
  EmotionLabel label;
  double confidence = 1.0;
};

/// Label file with optional per-record `confidence` (default 1.0). Duplicate ids are rejected.
inline std::map<std::string, LabelEntry> load_label_entries(const std::filesystem::path& path) {
  std::map<std::string, LabelEntry> out;
  for_each_jsonl(path, [&](std::size_t line_no, const json& rec) {
    auto where = path.string() + ":" + std::to_string(line_no);
    try {
      auto id = rec.at("sample_id").get<std::string>();
      auto label = try_parse_label(rec.at("label").get<std::string>());
      if (!label) {
        throw Error(ErrorCode::ParseFailure, where + ": unknown label \"" + rec.at("label").get<std::string>() + "\"");
      }
      double conf = rec.contains("confidence") ? rec.at("confidence").get<double>() : 1.0;
      if (!(conf >= 0.0 && conf <= 1.0)) throw Error(ErrorCode::ParseFailure, where + ": confidence outside [0,1]");
      if (!out.emplace(id, LabelEntry{*label, conf}).second) {
        throw Error(ErrorCode::ParseFailure, where + ": duplicate sample_id " + id);
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseFailure, where + ": " + e.what());
    }
  });
  return out;
}

inline LabelMap load_labels(const std::filesystem::path& path) {
  LabelMap out;
  for (const auto& [id, entry] : load_label_entries(path)) out.emplace(id, entry.label);
  return out;
}

}  // namespace ecmf
