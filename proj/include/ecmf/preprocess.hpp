#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ecmf/dataset.hpp"
#include "ecmf/error.hpp"
#include "ecmf/jsonl.hpp"

namespace ecmf {

/// Per-stream z-score statistics.
struct NormStats {
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> std;
  double epsilon = 1e-8;

  bool operator==(const NormStats&) const = default;
};

/// Population mean/std per dimension over `train`.
inline NormStats fit_norm(const Dataset& train) {
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "fit_norm on an empty dataset");
  const auto& schema = train.schema;
  NormStats stats;
  stats.mean.resize(schema.size());
  stats.std.resize(schema.size());
  const double n = static_cast<double>(train.size());
  for (std::size_t s = 0; s < schema.size(); ++s) {
    const std::size_t dim = schema[s].dim;
    std::vector<double> sum(dim, 0.0);
    for (const auto& sample : train.samples) {
      const auto& v = sample.streams[s].values;
      if (v.size() != dim) throw Error(ErrorCode::SchemaMismatch, "sample " + sample.sample_id + " stream " + schema[s].name);
      for (std::size_t k = 0; k < dim; ++k) sum[k] += v[k];
    }
    auto& mean = stats.mean[s];
    mean.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) mean[k] = sum[k] / n;
    // second pass keeps the variance non-negative and accurate
    std::vector<double> sq(dim, 0.0);
    for (const auto& sample : train.samples) {
      const auto& v = sample.streams[s].values;
      for (std::size_t k = 0; k < dim; ++k) sq[k] += (v[k] - mean[k]) * (v[k] - mean[k]);
    }
    auto& sd = stats.std[s];
    sd.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) sd[k] = std::sqrt(sq[k] / n);
  }
  return stats;
}

inline Sample apply_norm(const Sample& sample, const NormStats& stats) {
  if (sample.streams.size() != stats.mean.size()) {
    throw Error(ErrorCode::SchemaMismatch, "sample " + sample.sample_id + " has " +
                                               std::to_string(sample.streams.size()) + " streams, stats cover " +
                                               std::to_string(stats.mean.size()));
  }
  Sample out = sample;
  for (std::size_t s = 0; s < out.streams.size(); ++s) {
    auto& v = out.streams[s].values;
    const auto& mean = stats.mean[s];
    const auto& sd = stats.std[s];
    if (v.size() != mean.size()) {
      throw Error(ErrorCode::SchemaMismatch, "sample " + sample.sample_id + " stream " + out.streams[s].stream_name);
    }
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = (v[k] - mean[k]) / (sd[k] + stats.epsilon);
  }
  return out;
}

inline Dataset apply_norm(const Dataset& dataset, const NormStats& stats) {
  Dataset out{dataset.schema, {}};
  out.samples.reserve(dataset.size());
  for (const auto& s : dataset.samples) out.samples.push_back(apply_norm(s, stats));
  return out;
}

inline json to_json(const NormStats& stats) {
  return {{"mean", stats.mean}, {"std", stats.std}, {"epsilon", stats.epsilon}};
}

inline NormStats norm_stats_from_json(const json& j) {
  NormStats stats;
  j.at("mean").get_to(stats.mean);
  j.at("std").get_to(stats.std);
  stats.epsilon = j.at("epsilon").get<double>();
  return stats;
}

// ---------------------------------------------------------------------------
// Cross-validation folds

struct FoldSplit {
  std::size_t k = 0;
  std::map<std::string, std::size_t> assignment;

  std::set<std::string> ids_in(std::size_t fold) const {
    std::set<std::string> out;
    for (const auto& [id, f] : assignment) {
      if (f == fold) out.insert(id);
    }
    return out;
  }

  std::set<std::string> ids_not_in(std::size_t fold) const {
    std::set<std::string> out;
    for (const auto& [id, f] : assignment) {
      if (f != fold) out.insert(id);
    }
    return out;
  }

  bool operator==(const FoldSplit&) const = default;
};

/// Stratified split: each class is shuffled with `seed` and dealt round-robin.
/// The dealing position carries over from one class to the next so overall fold
/// sizes stay within one of each other. Unlabeled samples are left out.
inline FoldSplit make_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidConfig, "k must be >= 2, got " + std::to_string(k));
  std::array<std::vector<std::string>, kNumClasses> by_class;
  for (const auto& s : dataset.samples) {
    if (s.gold_label) by_class[index_of(*s.gold_label)].push_back(s.sample_id);
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto n = by_class[c].size();
    if (n > 0 && n < k) {
      throw Error(ErrorCode::TooFewSamples, "class " + std::string(to_string(label_from_index(c))) + " has " +
                                                std::to_string(n) + " labeled samples, need " + std::to_string(k));
    }
  }
  std::mt19937_64 rng(seed);
  FoldSplit split{k, {}};
  std::size_t next = 0;
  for (auto& ids : by_class) {
    std::shuffle(ids.begin(), ids.end(), rng);
    for (const auto& id : ids) {
      split.assignment.emplace(id, next);
      next = (next + 1) % k;
    }
  }
  return split;
}

inline json to_json(const FoldSplit& split) { return {{"k", split.k}, {"assignment", split.assignment}}; }

inline FoldSplit fold_split_from_json(const json& j) {
  FoldSplit split;
  split.k = j.at("k").get<std::size_t>();
  j.at("assignment").get_to(split.assignment);
  return split;
}

}  // namespace ecmf
