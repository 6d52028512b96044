#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ecmf/preprocess.hpp"
#include "test_support.hpp"

using namespace ecmf;

namespace {

Dataset one_stream(const std::vector<std::vector<double>>& rows) {
  Dataset d{StreamSchema({{Modality::audio, "a", rows[0].size()}}), {}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.samples.push_back({"s" + std::to_string(i), {{Modality::audio, "a", rows[i]}}, EmotionLabel::happy, std::nullopt});
  }
  return d;
}

/// Random labeled dataset with `per_class[c]` samples of class c, plus `unlabeled` extras.
Dataset random_labeled(std::mt19937_64& rng, const std::array<std::size_t, kNumClasses>& per_class,
                       std::size_t unlabeled) {
  Dataset d{StreamSchema({{Modality::text, "t", 1}}), {}};
  std::size_t next = 0;
  auto add = [&](std::optional<EmotionLabel> label) {
    d.samples.push_back({"r" + std::to_string(next++), {{Modality::text, "t", {0.0}}}, label, std::nullopt});
  };
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < per_class[c]; ++i) add(label_from_index(c));
  }
  for (std::size_t i = 0; i < unlabeled; ++i) add(std::nullopt);
  std::shuffle(d.samples.begin(), d.samples.end(), rng);
  return d;
}

void check_partition(const Dataset& d, const FoldSplit& split) {
  std::set<std::string> labeled;
  for (const auto& s : d.samples) {
    if (s.gold_label) labeled.insert(s.sample_id);
  }
  std::set<std::string> seen;
  for (std::size_t f = 0; f < split.k; ++f) {
    for (const auto& id : split.ids_in(f)) CHECK(seen.insert(id).second);
  }
  CHECK(seen == labeled);
  for (const auto& [id, f] : split.assignment) CHECK(f < split.k);

  // stratification: per class, fold counts differ by at most one
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> counts(split.k, 0);
    for (const auto& s : d.samples) {
      if (s.gold_label && index_of(*s.gold_label) == c) ++counts[split.assignment.at(s.sample_id)];
    }
    auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo <= 1);
  }
}

}  // namespace

TEST_CASE("fit_norm computes population mean and std", "[preprocess][norm]") {
  auto stats = fit_norm(one_stream({{1.0}, {3.0}}));
  CHECK(stats.mean[0][0] == 2.0);
  CHECK(stats.std[0][0] == 1.0);
  CHECK(stats.epsilon == 1e-8);
}

TEST_CASE("fit_norm agrees with an independent statistics oracle", "[preprocess][norm]") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> d(3.0, 5.0);
  std::vector<std::vector<double>> rows(37, std::vector<double>(4));
  for (auto& r : rows) {
    for (auto& x : r) x = d(rng);
  }
  auto stats = fit_norm(one_stream(rows));
  for (std::size_t k = 0; k < 4; ++k) {
    // naive textbook formula E[x^2] - E[x]^2, long double
    long double s = 0, s2 = 0;
    for (const auto& r : rows) s += r[k], s2 += static_cast<long double>(r[k]) * r[k];
    const long double mean = s / rows.size();
    const long double var = s2 / rows.size() - mean * mean;
    CHECK(stats.mean[0][k] == Catch::Approx(static_cast<double>(mean)).epsilon(1e-12));
    CHECK(stats.std[0][k] == Catch::Approx(std::sqrt(static_cast<double>(var))).epsilon(1e-10));
  }
}

TEST_CASE("apply_norm on the fitted set yields zero mean, unit std", "[preprocess][norm][property]") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    std::uniform_int_distribution<int> n_dist(2, 40);
    std::uniform_real_distribution<double> scale(1e-2, 1e3);
    const int n = n_dist(rng);
    const double sc = scale(rng);
    std::normal_distribution<double> d(sc, sc);
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(n), std::vector<double>(3));
    for (auto& r : rows) {
      for (auto& x : r) x = d(rng);
    }
    auto data = one_stream(rows);
    auto stats = fit_norm(data);
    auto normed = apply_norm(data, stats);
    for (std::size_t k = 0; k < 3; ++k) {
      if (stats.std[0][k] < 1e-6 * sc) continue;
      double m = 0;
      for (const auto& s : normed.samples) m += s.streams[0].values[k];
      m /= n;
      double v = 0;
      for (const auto& s : normed.samples) v += (s.streams[0].values[k] - m) * (s.streams[0].values[k] - m);
      v /= n;
      CHECK(std::abs(m) <= 1e-6);
      CHECK(std::abs(std::sqrt(v) - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("degenerate dimensions normalize to zero", "[preprocess][norm]") {
  auto data = one_stream({{5.0, 1.0}, {5.0, 2.0}, {5.0, 3.0}});
  auto stats = fit_norm(data);
  CHECK(stats.std[0][0] == 0.0);
  auto normed = apply_norm(data, stats);
  for (const auto& s : normed.samples) CHECK(s.streams[0].values[0] == 0.0);
}

TEST_CASE("apply_norm arithmetic and double application", "[preprocess][norm]") {
  NormStats stats{{{2.0}}, {{1.0}}, 1e-8};
  auto one = apply_norm(one_stream({{3.0}}), stats);
  CHECK(one.samples[0].streams[0].values[0] == Catch::Approx(1.0).epsilon(1e-7));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> d(0, 10);
  NormStats random_stats{{{d(rng), d(rng)}}, {{std::abs(d(rng)), std::abs(d(rng))}}, 1e-8};
  auto data = one_stream({{d(rng), d(rng)}, {d(rng), d(rng)}});
  auto twice = apply_norm(apply_norm(data, random_stats), random_stats);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      const double m = random_stats.mean[0][k];
      const double s = random_stats.std[0][k] + 1e-8;
      const double x = data.samples[i].streams[0].values[k];
      const double expected = ((x - m) / s - m) / s;
      CHECK(twice.samples[i].streams[0].values[k] == Catch::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("held-out data need not normalize to zero mean", "[preprocess][norm]") {
  auto stats = fit_norm(one_stream({{0.0}, {2.0}}));
  auto held = apply_norm(one_stream({{10.0}}), stats);
  CHECK(held.samples[0].streams[0].values[0] == Catch::Approx(9.0).epsilon(1e-7));
}

TEST_CASE("normalization errors", "[preprocess][norm]") {
  Dataset empty{StreamSchema({{Modality::audio, "a", 1}}), {}};
  try {
    fit_norm(empty);
    FAIL("expected EmptyDataset");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyDataset);
  }
  auto stats = fit_norm(one_stream({{1.0, 2.0}}));
  try {
    apply_norm(one_stream({{1.0}}), stats);
    FAIL("expected SchemaMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaMismatch);
  }
}

TEST_CASE("norm stats serialize losslessly", "[preprocess][norm]") {
  auto stats = fit_norm(testing_support::synth(3, testing_support::tiny_schema(), 2));
  CHECK(norm_stats_from_json(json::parse(to_json(stats).dump())) == stats);
}

TEST_CASE("k=5 and k=6 fold counts on 10 per class", "[preprocess][folds]") {
  auto d = testing_support::synth(10, testing_support::tiny_schema(), 1);
  auto five = make_folds(d, 5, 42);
  for (std::size_t f = 0; f < 5; ++f) {
    auto ids = five.ids_in(f);
    CHECK(ids.size() == 12);
    std::map<EmotionLabel, int> per;
    for (const auto& id : ids) ++per[*d.find(id)->gold_label];
    for (auto label : kAllLabels) CHECK(per[label] == 2);
  }
  auto six = make_folds(d, 6, 42);
  for (std::size_t f = 0; f < 6; ++f) CHECK(six.ids_in(f).size() == 10);
  check_partition(d, five);
  check_partition(d, six);
}

TEST_CASE("folds partition and stratify random datasets", "[preprocess][folds][property]") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng() % 7;
    std::array<std::size_t, kNumClasses> per{};
    for (auto& n : per) n = rng() % 4 == 0 ? 0 : k + rng() % 15;
    if (std::all_of(per.begin(), per.end(), [](std::size_t n) { return n == 0; })) per[0] = k;
    auto d = random_labeled(rng, per, rng() % 5);
    const auto seed = rng();
    auto split = make_folds(d, k, seed);
    check_partition(d, split);

    // Overall fold sizes stay within one of each other since dealing continues across classes.
    std::vector<std::size_t> sizes;
    for (std::size_t f = 0; f < k; ++f) sizes.push_back(split.ids_in(f).size());
    auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    CHECK(*hi - *lo <= 1);

    CHECK(make_folds(d, k, seed) == split);
  }
}

TEST_CASE("different seeds give different splits", "[preprocess][folds]") {
  auto d = testing_support::synth(10, testing_support::tiny_schema(), 1);
  CHECK_FALSE(make_folds(d, 5, 1) == make_folds(d, 5, 2));
}

TEST_CASE("fold errors", "[preprocess][folds]") {
  auto d = testing_support::synth(3, testing_support::tiny_schema(), 1);
  CHECK_THROWS_AS(make_folds(d, 1, 0), Error);
  try {
    make_folds(d, 4, 0);
    FAIL("expected TooFewSamples");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooFewSamples);
    CHECK(std::string(e.what()).find("worried") != std::string::npos);
  }
}

TEST_CASE("fold split serializes as k plus assignment", "[preprocess][folds]") {
  auto d = testing_support::synth(5, testing_support::tiny_schema(), 1);
  auto split = make_folds(d, 5, 3);
  auto j = to_json(split);
  CHECK(j.at("k") == 5);
  CHECK(j.at("assignment").size() == 30);
  CHECK(fold_split_from_json(json::parse(j.dump())) == split);
}
