#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "ecmf/error.hpp"

namespace ecmf {

/// Six emotion categories. The enumerator order is the logit index order.
enum class EmotionLabel : int { worried = 0, happy, neutral, angry, surprised, sad };

inline constexpr std::size_t kNumClasses = 6;

inline constexpr std::array<std::string_view, kNumClasses> kLabelNames = {
    "worried", "happy", "neutral", "angry", "surprised", "sad"};

inline constexpr std::array<EmotionLabel, kNumClasses> kAllLabels = {
    EmotionLabel::worried, EmotionLabel::happy,     EmotionLabel::neutral,
    EmotionLabel::angry,   EmotionLabel::surprised, EmotionLabel::sad};

inline constexpr std::size_t index_of(EmotionLabel label) { return static_cast<std::size_t>(label); }

inline EmotionLabel label_from_index(std::size_t index) {
  if (index >= kNumClasses) {
    throw Error(ErrorCode::ParseFailure, "class index " + std::to_string(index) + " out of range");
  }
  return static_cast<EmotionLabel>(index);
}

inline std::string_view to_string(EmotionLabel label) { return kLabelNames[index_of(label)]; }

inline std::optional<EmotionLabel> try_parse_label(std::string_view text) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kLabelNames[i] == text) return static_cast<EmotionLabel>(i);
  }
  return std::nullopt;
}

inline EmotionLabel parse_label(std::string_view text) {
  if (auto label = try_parse_label(text)) return *label;
  throw Error(ErrorCode::ParseFailure, "unknown emotion label \"" + std::string(text) + "\"");
}

/// Modalities in the fixed token-assembly order.
enum class Modality : int { audio = 0, text, video };

inline constexpr std::size_t kNumModalities = 3;

inline constexpr std::array<Modality, kNumModalities> kAllModalities = {Modality::audio, Modality::text,
                                                                        Modality::video};

inline constexpr std::string_view to_string(Modality modality) {
  switch (modality) {
    case Modality::audio: return "audio";
    case Modality::text: return "text";
    case Modality::video: return "video";
  }
  return "?";
}

inline Modality parse_modality(std::string_view text) {
  for (Modality m : kAllModalities) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorCode::ParseFailure, "unknown modality \"" + std::string(text) + "\"");
}

}  // namespace ecmf
