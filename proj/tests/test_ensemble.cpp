#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "ecmf/ensemble.hpp"
#include "test_support.hpp"

using namespace ecmf;
using L = EmotionLabel;

namespace {

Prediction pred(L label, std::array<double, kNumClasses> probs = {}) {
  if (probs == std::array<double, kNumClasses>{}) probs[index_of(label)] = 1.0;
  return {label, probs};
}

/// Prediction whose probability row is a random softmax-like vector with its argmax at
/// the chosen label.
Prediction random_pred(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::array<double, kNumClasses> p{};
  double total = 0;
  for (auto& x : p) total += (x = u(rng));
  for (auto& x : p) x /= total;
  return {label_from_index(argmax(p)), p};
}

/// Independent hard-vote oracle: count, then summed probability, then lower index.
L oracle_vote(const std::vector<Prediction>& preds) {
  std::map<std::size_t, std::pair<std::size_t, double>> score;
  for (std::size_t c = 0; c < kNumClasses; ++c) score[c] = {0, 0.0};
  for (const auto& p : preds) {
    ++score[index_of(p.label)].first;
    for (std::size_t c = 0; c < kNumClasses; ++c) score[c].second += p.probs[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    const auto& [n, s] = score[c];
    const auto& [bn, bs] = score[best];
    if (n > bn || (n == bn && s > bs + 1e-12)) best = c;
  }
  return label_from_index(best);
}

TrainConfig tiny_train(std::uint64_t seed) {
  TrainConfig t;
  t.learning_rate = 1e-2;
  t.max_epochs = 10;
  t.batch_size = 8;
  t.seed = seed;
  return t;
}

}  // namespace

TEST_CASE("variant list: seeds first, then one per ablation", "[ensemble]") {
  auto base = testing_support::tiny_config();
  auto v = make_variants(base, 3, {AblationSet{std::nullopt, false, std::nullopt}, AblationSet{false, std::nullopt, std::nullopt}}, 9);
  REQUIRE(v.size() == 5);
  CHECK(v[0].variant_id == "seed_0");
  CHECK(v[2].variant_id == "seed_2");
  CHECK(v[3].variant_id == "ablate_no_modal_token");
  CHECK(v[4].variant_id == "ablate_no_norm");
  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 3; ++i) {
    seeds.insert(v[i].model_config.seed);
    CHECK(v[i].model_config.hidden_dim == base.hidden_dim);
    CHECK(v[i].model_config.enable_modal_token);
  }
  CHECK(seeds.size() == 3);
  CHECK(v[3].model_config.enable_modal_token == false);
  CHECK(v[4].model_config.enable_norm == false);

  auto again = make_variants(base, 3, {AblationSet{std::nullopt, false, std::nullopt}, AblationSet{false, std::nullopt, std::nullopt}}, 9);
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(again[i].model_config == v[i].model_config);
    CHECK(again[i].train_seed == v[i].train_seed);
  }
  CHECK(make_variants(base, 3, {}, 10)[0].model_config.seed != v[0].model_config.seed);
}

TEST_CASE("duplicate ablations are rejected", "[ensemble]") {
  auto a = AblationSet{false, std::nullopt, std::nullopt};
  try {
    make_variants(testing_support::tiny_config(), 1, {a, a}, 0);
    FAIL("expected DuplicateVariant");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DuplicateVariant);
  }
}

TEST_CASE("an ablation changes only its own flag", "[ensemble]") {
  auto base = testing_support::tiny_config();
  for (const auto& a : random_ablations(7, 3)) {
    auto c = a.apply(base);
    auto restored = c;
    restored.enable_norm = base.enable_norm;
    restored.enable_modal_token = base.enable_modal_token;
    restored.enable_residual_mlp = base.enable_residual_mlp;
    CHECK(restored == base);
    CHECK(c.enable_norm == a.enable_norm.value_or(true));
    CHECK(c.enable_modal_token == a.enable_modal_token.value_or(true));
    CHECK(c.enable_residual_mlp == a.enable_residual_mlp.value_or(true));
  }
}

TEST_CASE("random ablations are distinct and non-empty", "[ensemble]") {
  auto all = random_ablations(20, 5);
  CHECK(all.size() == 7);
  std::set<std::string> ids;
  for (const auto& a : all) {
    CHECK(a.id() != "base");
    ids.insert(a.id());
  }
  CHECK(ids.size() == 7);
  CHECK(random_ablations(3, 5).size() == 3);
  CHECK(standard_ablations().size() == 3);
}

TEST_CASE("hard voting examples", "[ensemble]") {
  CHECK(combine_votes({pred(L::happy), pred(L::happy), pred(L::happy)}).label == L::happy);
  CHECK(combine_votes({pred(L::sad), pred(L::sad), pred(L::angry)}).label == L::sad);

  // one vote each; summed probabilities decide
  std::array<double, kNumClasses> p1{0, 0.0, 0, 0.1, 0, 0.9};
  std::array<double, kNumClasses> p2{0, 0.3, 0, 0.6, 0, 0.1};
  std::array<double, kNumClasses> p3{0, 0.7, 0, 0.4, 0, 0.4};
  auto v = combine_votes({pred(L::sad, p1), pred(L::angry, p2), pred(L::happy, p3)});
  CHECK(v.prob_sum[index_of(L::sad)] == Catch::Approx(1.4));
  CHECK(v.prob_sum[index_of(L::angry)] == Catch::Approx(1.1));
  CHECK(v.prob_sum[index_of(L::happy)] == Catch::Approx(1.0));
  CHECK(v.label == L::sad);
  CHECK(v.tally[index_of(L::sad)] == 1);
  CHECK(v.per_variant.size() == 3);

  // full tie goes to the lower class index
  std::array<double, kNumClasses> flat{};
  flat.fill(1.0 / kNumClasses);
  CHECK(combine_votes({pred(L::sad, flat), pred(L::happy, flat)}).label == L::happy);

  CHECK_THROWS_AS(combine_votes({}), Error);
}

TEST_CASE("soft voting picks the highest summed probability", "[ensemble]") {
  std::array<double, kNumClasses> a{0, 0.51, 0.49, 0, 0, 0};
  std::array<double, kNumClasses> b{0, 0.51, 0.49, 0, 0, 0};
  std::array<double, kNumClasses> c{0, 0.0, 1.0, 0, 0, 0};
  std::vector<Prediction> preds{pred(L::happy, a), pred(L::happy, b), pred(L::neutral, c)};
  CHECK(combine_votes(preds, VotingMode::hard).label == L::happy);
  CHECK(combine_votes(preds, VotingMode::soft).label == L::neutral);
}

TEST_CASE("hard voting matches the oracle and ignores variant order", "[ensemble][property]") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 9;
    std::vector<Prediction> preds;
    for (std::size_t i = 0; i < n; ++i) preds.push_back(random_pred(rng));
    auto v = combine_votes(preds);
    CHECK(v.label == oracle_vote(preds));
    for (int s = 0; s < 4; ++s) {
      std::shuffle(preds.begin(), preds.end(), rng);
      auto w = combine_votes(preds);
      CHECK(w.label == v.label);
      CHECK(w.prob_sum == v.prob_sum);
      CHECK(combine_votes(preds, VotingMode::soft).label == combine_votes(v.per_variant, VotingMode::soft).label);
    }
  }
}

TEST_CASE("majority of independent voters beats each voter", "[ensemble][property]") {
  // Five voters, each right with probability 0.7 and otherwise uniformly wrong.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  const int trials = 4000;
  int ens_correct = 0;
  std::array<int, 5> single_correct{};
  for (int t = 0; t < trials; ++t) {
    const auto truth = label_from_index(rng() % kNumClasses);
    std::vector<Prediction> preds;
    for (std::size_t i = 0; i < 5; ++i) {
      L l = truth;
      if (u(rng) >= 0.7) l = label_from_index((index_of(truth) + 1 + rng() % (kNumClasses - 1)) % kNumClasses);
      if (l == truth) ++single_correct[i];
      preds.push_back(pred(l));
    }
    if (combine_votes(preds).label == truth) ++ens_correct;
  }
  const int best_single = *std::max_element(single_correct.begin(), single_correct.end());
  CHECK(ens_correct >= best_single - trials / 50);
  CHECK(ens_correct > best_single);
}

TEST_CASE("a one-variant ensemble reproduces that variant", "[ensemble]") {
  auto schema = testing_support::tiny_schema();
  auto data = testing_support::synth(4, schema, 5);
  auto model_cfg = testing_support::tiny_config();
  model_cfg.dropout_rate = 0.1;
  auto specs = make_variants(model_cfg, 1, {}, 2);
  auto trained = train_variants(specs, data, data, tiny_train(0));
  auto votes = ensemble_predict_all(trained, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto p = trained[0].model.predict(data.samples[i]);
    CHECK(votes[i].label == p.label);
    CHECK(ensemble_predict(trained, data.samples[i]).label == p.label);
  }
  CHECK_THROWS_AS(ensemble_predict_all(std::span<const TrainedVariant>{}, data), Error);
}

TEST_CASE("ensemble manifest round-trips through checkpoints on disk", "[ensemble]") {
  testing_support::TempDir dir;
  auto schema = testing_support::tiny_schema();
  auto data = testing_support::synth(3, schema, 6);
  auto model_cfg = testing_support::tiny_config();
  auto specs = make_variants(model_cfg, 2, standard_ablations(), 4);
  auto trained = train_variants(specs, data, data, tiny_train(1));
  EnsembleManifest m;
  for (const auto& v : trained) {
    save_trained_model(v.model, dir / (v.spec.variant_id + ".json"));
    m.variants.push_back({v.spec, v.spec.variant_id + ".json"});
  }
  auto j = to_json(m);
  CHECK(j.at("format") == "ecmf-ensemble");
  auto loaded = load_ensemble(ensemble_manifest_from_json(json::parse(j.dump())), dir.path());
  REQUIRE(loaded.size() == trained.size());
  auto a = ensemble_predict_all(trained, data);
  auto b = ensemble_predict_all(loaded, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].prob_sum == b[i].prob_sum);
  }
  for (std::size_t i = 0; i < loaded.size(); ++i) CHECK(loaded[i].spec.model_config == trained[i].spec.model_config);

  try {
    ensemble_manifest_from_json(json{{"variants", {{{"variant_id", "x"}}}}});
    FAIL("expected ParseFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseFailure);
  }
}
