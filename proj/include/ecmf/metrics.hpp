#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "ecmf/error.hpp"
#include "ecmf/jsonl.hpp"
#include "ecmf/labels.hpp"

namespace ecmf {

using ConfusionMatrix = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;

struct MetricsReport {
  ConfusionMatrix confusion{};  // rows gold, columns predicted
  std::array<double, kNumClasses> per_class_f1{};
  std::array<std::size_t, kNumClasses> support{};
  double waf = 0.0;
  double accuracy = 0.0;

  bool operator==(const MetricsReport&) const = default;
};

namespace detail {
inline void check_pairs(std::span<const EmotionLabel> golds, std::span<const EmotionLabel> preds) {
  if (golds.size() != preds.size()) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(golds.size()) + " gold labels vs " + std::to_string(preds.size()) + " predictions");
  }
  if (golds.empty()) throw Error(ErrorCode::EmptyInput, "no labels to score");
}
}  // namespace detail

inline ConfusionMatrix confusion_matrix(std::span<const EmotionLabel> golds, std::span<const EmotionLabel> preds) {
  detail::check_pairs(golds, preds);
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < golds.size(); ++i) ++m[index_of(golds[i])][index_of(preds[i])];
  return m;
}

/// Precision, recall and F1 fall back to 0 when their denominators vanish;
/// classes without gold support drop out of the weighted mean.
inline MetricsReport evaluate(std::span<const EmotionLabel> golds, std::span<const EmotionLabel> preds) {
  MetricsReport r;
  r.confusion = confusion_matrix(golds, preds);
  std::size_t correct = 0;
  std::size_t total = 0;
  double weighted = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t tp = r.confusion[c][c];
    std::size_t fn = 0;
    std::size_t fp = 0;
    for (std::size_t o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fn += r.confusion[c][o];
      fp += r.confusion[o][c];
    }
    r.support[c] = tp + fn;
    const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    r.per_class_f1[c] = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    weighted += static_cast<double>(r.support[c]) * r.per_class_f1[c];
    correct += tp;
    total += r.support[c];
  }
  r.waf = weighted / static_cast<double>(total);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return r;
}

inline double weighted_f_score(std::span<const EmotionLabel> golds, std::span<const EmotionLabel> preds) {
  return evaluate(golds, preds).waf;
}

/// "87.49%" style.
inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", fraction * 100.0);
  return buf;
}

inline json to_json(const MetricsReport& r) {
  json f1 = json::object();
  json support = json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    f1[std::string(kLabelNames[c])] = r.per_class_f1[c];
    support[std::string(kLabelNames[c])] = r.support[c];
  }
  return {{"waf", r.waf},
          {"waf_percent", format_percent(r.waf)},
          {"accuracy", r.accuracy},
          {"per_class_f1", f1},
          {"support", support},
          {"confusion", r.confusion},
          {"label_order", std::vector<std::string>(kLabelNames.begin(), kLabelNames.end())}};
}

}  // namespace ecmf
