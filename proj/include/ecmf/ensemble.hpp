#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ecmf/dataset.hpp"
#include "ecmf/error.hpp"
#include "ecmf/fusion_net.hpp"
#include "ecmf/jsonl.hpp"
#include "ecmf/training.hpp"

namespace ecmf {

/// Flags to override on the base config; unset members keep the base value.
struct AblationSet {
  std::optional<bool> enable_norm;
  std::optional<bool> enable_modal_token;
  std::optional<bool> enable_residual_mlp;

  ModelConfig apply(ModelConfig c) const {
    if (enable_norm) c.enable_norm = *enable_norm;
    if (enable_modal_token) c.enable_modal_token = *enable_modal_token;
    if (enable_residual_mlp) c.enable_residual_mlp = *enable_residual_mlp;
    return c;
  }

  /// e.g. "no_modal_token+no_norm"
  std::string id() const {
    std::string out;
    auto add = [&](const std::optional<bool>& flag, const char* name) {
      if (!flag) return;
      if (!out.empty()) out += "+";
      out += (*flag ? "with_" : "no_");
      out += name;
    };
    add(enable_modal_token, "modal_token");
    add(enable_residual_mlp, "residual_mlp");
    add(enable_norm, "norm");
    return out.empty() ? "base" : out;
  }

  bool operator==(const AblationSet&) const = default;
};

/// One removal each: modal token, residual MLP, standardization.
inline std::vector<AblationSet> standard_ablations() {
  return {AblationSet{std::nullopt, false, std::nullopt}, AblationSet{std::nullopt, std::nullopt, false},
          AblationSet{false, std::nullopt, std::nullopt}};
}

/// `count` distinct non-empty removal subsets of {modal token, residual MLP, norm},
/// drawn with `seed`. At most 7 exist.
inline std::vector<AblationSet> random_ablations(std::size_t count, std::uint64_t seed) {
  std::vector<unsigned> masks = {1, 2, 3, 4, 5, 6, 7};
  std::mt19937_64 rng(seed);
  std::shuffle(masks.begin(), masks.end(), rng);
  masks.resize(std::min<std::size_t>(count, masks.size()));
  std::vector<AblationSet> out;
  for (unsigned m : masks) {
    AblationSet a;
    if (m & 1u) a.enable_modal_token = false;
    if (m & 2u) a.enable_residual_mlp = false;
    if (m & 4u) a.enable_norm = false;
    out.push_back(a);
  }
  return out;
}

struct VariantSpec {
  std::string variant_id;
  ModelConfig model_config;
  std::uint64_t train_seed = 0;
};

inline json to_json(const VariantSpec& v) {
  return {{"variant_id", v.variant_id}, {"model_config", to_json(v.model_config)}, {"train_seed", v.train_seed}};
}

inline VariantSpec variant_spec_from_json(const json& j) {
  try {
    return {j.at("variant_id").get<std::string>(), model_config_from_json(j.at("model_config")),
            j.at("train_seed").get<std::uint64_t>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("variant spec: ") + e.what());
  }
}

/// One variant per seed (base architecture, derived init and training seeds) followed
/// by one per ablation set.
inline std::vector<VariantSpec> make_variants(const ModelConfig& base, std::size_t n_seed_variants,
                                              const std::vector<AblationSet>& ablations, std::uint64_t seed) {
  std::vector<VariantSpec> out;
  std::set<std::string> ids;
  auto push = [&](VariantSpec v) {
    if (!ids.insert(v.variant_id).second) throw Error(ErrorCode::DuplicateVariant, "variant " + v.variant_id);
    out.push_back(std::move(v));
  };
  for (std::size_t i = 0; i < n_seed_variants; ++i) {
    ModelConfig c = base;
    c.seed = mix_seed(seed, 2 * i);
    push({"seed_" + std::to_string(i), c, mix_seed(seed, 2 * i + 1)});
  }
  for (std::size_t j = 0; j < ablations.size(); ++j) {
    ModelConfig c = ablations[j].apply(base);
    c.seed = base.seed;
    push({"ablate_" + ablations[j].id(), c, mix_seed(seed, 1'000'003 + j)});
  }
  return out;
}

struct TrainedVariant {
  VariantSpec spec;
  TrainedModel model;
};

inline std::vector<TrainedVariant> train_variants(const std::vector<VariantSpec>& specs, const Dataset& train,
                                                  const Dataset& val, TrainConfig base) {
  std::vector<TrainedVariant> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    base.seed = spec.train_seed;
    out.push_back({spec, train_one(spec.model_config, train, val, base).best});
  }
  return out;
}

enum class VotingMode { hard, soft };

struct EnsembleVote {
  EmotionLabel label = EmotionLabel::worried;
  std::array<std::size_t, kNumClasses> tally{};
  std::array<double, kNumClasses> prob_sum{};
  std::vector<Prediction> per_variant;
};

namespace detail {
/// Sums each class's probabilities in sorted order so the result is independent of
/// variant order.
inline std::array<double, kNumClasses> order_free_sum(const std::vector<Prediction>& preds) {
  std::array<double, kNumClasses> out{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<double> v;
    for (const auto& p : preds) v.push_back(p.probs[c]);
    std::sort(v.begin(), v.end());
    for (double x : v) out[c] += x;
  }
  return out;
}
}  // namespace detail

/// Combines per-variant predictions. Hard voting: most votes wins, ties by summed
/// probability, then lower class index. Soft voting: highest summed probability.
inline EnsembleVote combine_votes(std::vector<Prediction> preds, VotingMode mode = VotingMode::hard) {
  if (preds.empty()) throw Error(ErrorCode::EmptyInput, "ensemble needs at least one variant");
  EnsembleVote v;
  for (const auto& p : preds) ++v.tally[index_of(p.label)];
  v.prob_sum = detail::order_free_sum(preds);
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    const bool better = mode == VotingMode::hard
                            ? (v.tally[c] > v.tally[best] || (v.tally[c] == v.tally[best] && v.prob_sum[c] > v.prob_sum[best]))
                            : v.prob_sum[c] > v.prob_sum[best];
    if (better) best = c;
  }
  v.label = label_from_index(best);
  v.per_variant = std::move(preds);
  return v;
}

inline EnsembleVote ensemble_predict(std::span<const TrainedVariant> variants, const Sample& sample,
                                     VotingMode mode = VotingMode::hard) {
  if (variants.empty()) throw Error(ErrorCode::EmptyInput, "ensemble needs at least one variant");
  std::vector<Prediction> preds;
  for (const auto& v : variants) preds.push_back(v.model.predict(sample));
  return combine_votes(std::move(preds), mode);
}

/// Per-sample votes over a whole dataset, batched per variant.
inline std::vector<EnsembleVote> ensemble_predict_all(std::span<const TrainedVariant> variants, const Dataset& data,
                                                      VotingMode mode = VotingMode::hard) {
  if (variants.empty()) throw Error(ErrorCode::EmptyInput, "ensemble needs at least one variant");
  std::vector<std::vector<Prediction>> by_variant;
  for (const auto& v : variants) by_variant.push_back(v.model.predict_all(data));
  std::vector<EnsembleVote> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<Prediction> preds;
    for (const auto& pv : by_variant) preds.push_back(pv[i]);
    out.push_back(combine_votes(std::move(preds), mode));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ensemble manifest: variant specs plus checkpoint paths

struct EnsembleManifest {
  struct Entry {
    VariantSpec spec;
    std::filesystem::path checkpoint;
  };
  std::vector<Entry> variants;
};

inline json to_json(const EnsembleManifest& m) {
  json arr = json::array();
  for (const auto& e : m.variants) {
    json j = to_json(e.spec);
    j["checkpoint"] = e.checkpoint.string();
    arr.push_back(std::move(j));
  }
  return {{"format", "ecmf-ensemble"}, {"version", 1}, {"variants", arr}};
}

inline EnsembleManifest ensemble_manifest_from_json(const json& j) {
  try {
    EnsembleManifest m;
    for (const auto& v : j.at("variants")) {
      m.variants.push_back({variant_spec_from_json(v), v.at("checkpoint").get<std::string>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("ensemble manifest: ") + e.what());
  }
}

/// Loads every checkpoint named by a manifest; relative paths resolve against `base_dir`.
inline std::vector<TrainedVariant> load_ensemble(const EnsembleManifest& m, const std::filesystem::path& base_dir) {
  std::vector<TrainedVariant> out;
  for (const auto& e : m.variants) {
    auto path = e.checkpoint.is_absolute() ? e.checkpoint : base_dir / e.checkpoint;
    out.push_back({e.spec, load_trained_model(path)});
  }
  return out;
}

}  // namespace ecmf
