// ecmf command-line entry point: synthetic data, ingestion, training, k-fold CV,
// evaluation, label refinement, review, ensembling and the review service.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ecmf.hpp"
#include "ecmf/review_service.hpp"

namespace fs = std::filesystem;
using namespace ecmf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoFailure:
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::NonFiniteLoss:
      return kExitRuntime;
    default:
      return kExitValidation;
  }
}

fs::path data_dir() {
  const char* env = std::getenv("ECMF_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

fs::path or_default(const std::string& value, const char* file_name) {
  return value.empty() ? data_dir() / file_name : fs::path(value);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Writes the command's JSON result and a sibling `<stem>.run.json` manifest.
void write_outputs(const fs::path& json_path, const json& result, RunManifest manifest) {
  write_json_file(json_path, result);
  manifest.outputs.insert(manifest.outputs.begin(), json_path);
  auto run_path = json_path;
  run_path.replace_extension(".run.json");
  write_json_file(run_path, to_json(manifest));
}

// ---------------------------------------------------------------------------
// Shared model/training flags

struct ModelFlags {
  std::string config_path;
  std::optional<std::size_t> hidden_dim, heads, layers, max_epochs, batch_size, patience;
  std::optional<double> dropout, lr, clip;
  std::optional<std::uint64_t> seed;
  bool no_norm = false, no_modal_token = false, no_residual_mlp = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config with \"model\" and/or \"train\" sections");
    app->add_option("--hidden-dim", hidden_dim, "hidden dimension (default 128)");
    app->add_option("--dropout", dropout, "dropout rate (default 0.6)");
    app->add_option("--heads", heads, "attention heads (default 2)");
    app->add_option("--attn-layers", layers, "self-attention layers (default 2)");
    app->add_option("--lr", lr, "learning rate (default 5e-5)");
    app->add_option("--clip", clip, "global gradient-norm clip (default 1.0)");
    app->add_option("--max-epochs", max_epochs, "maximum epochs (default 200)");
    app->add_option("--batch-size", batch_size, "mini-batch size (default 32)");
    app->add_option("--patience", patience, "early-stopping patience (default 30)");
    app->add_option("--seed", seed, "seed for initialisation, shuffling and folds");
    app->add_flag("--no-norm", no_norm, "disable feature standardization");
    app->add_flag("--no-modal-token", no_modal_token, "disable modal tokens");
    app->add_flag("--no-residual-mlp", no_residual_mlp, "disable the residual MLP branch");
  }

  std::pair<ModelConfig, TrainConfig> resolve(const StreamSchema& schema) const {
    ModelConfig m;
    TrainConfig t;
    if (!config_path.empty()) {
      auto j = read_json_file(config_path);
      m = model_config_from_json(j.contains("model") ? j.at("model") : j, m);
      t = train_config_from_json(j.contains("train") ? j.at("train") : j, t);
    }
    m.schema = schema;
    if (hidden_dim) m.hidden_dim = *hidden_dim;
    if (dropout) m.dropout_rate = *dropout;
    if (heads) m.num_heads = *heads;
    if (layers) m.num_attn_layers = *layers;
    if (no_norm) m.enable_norm = false;
    if (no_modal_token) m.enable_modal_token = false;
    if (no_residual_mlp) m.enable_residual_mlp = false;
    if (lr) t.learning_rate = *lr;
    if (clip) t.grad_clip_norm = *clip;
    if (max_epochs) t.max_epochs = *max_epochs;
    if (batch_size) t.batch_size = *batch_size;
    if (patience) t.patience = *patience;
    if (seed) m.seed = t.seed = *seed;
    m.validate();
    t.validate();
    return {m, t};
  }
};

json config_json(const ModelConfig& m, const TrainConfig& t) { return {{"model", to_json(m)}, {"train", to_json(t)}}; }

struct FeatureFlags {
  std::string features, schema, labels;

  void attach(CLI::App* app) {
    app->add_option("--features", features, "feature manifest (default $ECMF_DATA_DIR/features.jsonl)");
    app->add_option("--schema", schema, "stream schema JSON (default: inferred from the manifest)");
    app->add_option("--labels", labels, "label file overriding gold labels (e.g. refined labels)");
  }

  fs::path features_path() const { return or_default(features, "features.jsonl"); }

  Dataset load() const {
    const auto path = features_path();
    auto data = schema.empty() ? ingest(path) : ingest(path, schema_from_json(read_json_file(schema)));
    if (!labels.empty()) data = data.with_labels(load_labels(labels));
    return data;
  }

  std::vector<fs::path> inputs() const {
    std::vector<fs::path> out{features_path()};
    if (!schema.empty()) out.emplace_back(schema);
    if (!labels.empty()) out.emplace_back(labels);
    return out;
  }
};

std::pair<Dataset, Dataset> holdout_split(const Dataset& data, std::size_t k, std::size_t val_fold,
                                          std::uint64_t seed) {
  if (val_fold >= k) throw Error(ErrorCode::InvalidConfig, "--val-fold must be < --k");
  auto split = make_folds(data, k, seed);
  return {data.subset(split.ids_not_in(val_fold)), data.subset(split.ids_in(val_fold))};
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthCmd {
  std::size_t n_per_class = 10;
  std::uint64_t seed = 0;
  double separation = 4.0, noise_sigma = 1.0, label_noise = 0.0;
  std::size_t dim = 64;
  std::string schema, out, clean_out, json_out;

  int run() const {
    SynthConfig cfg;
    cfg.n_per_class = n_per_class;
    cfg.schema = schema.empty() ? default_schema(dim) : schema_from_json(read_json_file(schema));
    cfg.separation = separation;
    cfg.noise_sigma = noise_sigma;
    cfg.label_noise_rate = label_noise;
    cfg.seed = seed;
    auto synth = synth_generate(cfg);
    const auto out_path = or_default(out, "features.jsonl");
    write_manifest(synth.dataset, out_path);
    RunManifest manifest{"synth", {}, {}, seed, {out_path}};
    if (!clean_out.empty()) {
      save_labels(synth.clean_labels, clean_out);
      manifest.outputs.emplace_back(clean_out);
    }
    std::size_t corrupted = 0;
    for (const auto& s : synth.dataset.samples) corrupted += *s.gold_label != synth.clean_labels.at(s.sample_id);
    manifest.config = {{"n_per_class", n_per_class}, {"separation", separation}, {"noise_sigma", noise_sigma},
                       {"label_noise_rate", label_noise}, {"schema", to_json(cfg.schema)}};
    json result = {{"samples", synth.dataset.size()}, {"streams", cfg.schema.size()}, {"corrupted_labels", corrupted}};
    write_outputs(or_default(json_out, "synth.json"), result, manifest);
    std::cout << "wrote " << synth.dataset.size() << " samples to " << out_path.string() << '\n';
    return kExitOk;
  }
};

struct IngestCmd {
  FeatureFlags data;
  std::string positional, schema_out, json_out;

  int run() {
    if (!positional.empty()) data.features = positional;
    auto dataset = data.load();
    json class_counts = json::object();
    for (auto label : kAllLabels) class_counts[std::string(to_string(label))] = 0;
    for (const auto& s : dataset.samples) {
      if (s.gold_label) class_counts[std::string(to_string(*s.gold_label))] = class_counts[std::string(to_string(*s.gold_label))].get<int>() + 1;
    }
    json result = {{"samples", dataset.size()},
                   {"labeled", dataset.labeled_count()},
                   {"schema", to_json(dataset.schema)},
                   {"class_counts", class_counts}};
    if (!schema_out.empty()) write_json_file(schema_out, to_json(dataset.schema));
    write_outputs(or_default(json_out, "ingest.json"), result, RunManifest{"ingest", {}, data.inputs(), 0, {}});
    std::cout << dataset.size() << " samples (" << dataset.labeled_count() << " labeled), " << dataset.schema.size()
              << " streams\n";
    return kExitOk;
  }
};

struct TrainCmd {
  FeatureFlags data;
  ModelFlags flags;
  std::size_t k = 5, val_fold = 0;
  std::string out, json_out;

  int run() const {
    auto dataset = data.load();
    auto [m, t] = flags.resolve(dataset.schema);
    auto [train, val] = holdout_split(dataset, k, val_fold, t.seed);
    auto report = train_one(m, train, val, t);
    const auto model_path = or_default(out, "model.json");
    save_trained_model(report.best, model_path);
    json result = to_json(report);
    result["best_val_waf_percent"] = format_percent(report.best_val_waf);
    json cfg = config_json(m, t);
    cfg["k"] = k;
    cfg["val_fold"] = val_fold;
    write_outputs(or_default(json_out, "train.json"), result,
                  RunManifest{"train", cfg, data.inputs(), t.seed, {model_path}});
    std::cout << "best epoch " << report.best_epoch << ", validation WAF " << format_percent(report.best_val_waf)
              << '\n';
    return kExitOk;
  }
};

struct CvCmd {
  FeatureFlags data;
  ModelFlags flags;
  std::size_t k = 5;
  std::string json_out;

  int run() const {
    auto dataset = data.load();
    auto [m, t] = flags.resolve(dataset.schema);
    auto report = run_cv(dataset, k, m, t);
    json cfg = config_json(m, t);
    cfg["k"] = k;
    auto inputs = data.inputs();
    if (!flags.config_path.empty()) inputs.emplace_back(flags.config_path);
    write_outputs(or_default(json_out, "cv.json"), to_json(report), RunManifest{"cv", cfg, inputs, t.seed, {}});
    std::cout << format_percent(report.mean_waf) << '\n';
    return kExitOk;
  }
};

struct EvalCmd {
  FeatureFlags data;
  std::string model, predictions_out, json_out;

  int run() const {
    auto trained = load_trained_model(model);
    auto dataset = data.schema.empty() ? ingest(data.features_path(), trained.model.config.schema) : data.load();
    if (!data.labels.empty() && data.schema.empty()) dataset = dataset.with_labels(load_labels(data.labels));
    RunManifest manifest{"eval", {}, data.inputs(), 0, {}};
    manifest.inputs.emplace_back(model);
    if (!predictions_out.empty()) {
      auto preds = trained.predict_all(dataset);
      LabelMap labels;
      for (std::size_t i = 0; i < dataset.size(); ++i) labels.emplace(dataset.samples[i].sample_id, preds[i].label);
      save_labels(labels, predictions_out);
      manifest.outputs.emplace_back(predictions_out);
    }
    auto report = evaluate_model(trained, dataset);
    write_outputs(or_default(json_out, "eval.json"), to_json(report), manifest);
    std::cout << "WAF " << format_percent(report.waf) << ", accuracy " << format_percent(report.accuracy) << '\n';
    return kExitOk;
  }
};

struct RefineCmd {
  FeatureFlags data;
  ModelFlags flags;
  std::string sources, weak, sources_dir, out, queue, json_out;
  bool no_original_vote = false, include_unlabeled = false;

  int run() const {
    auto dataset = data.load();
    std::vector<LabelSource> all;
    RunManifest manifest{"refine", {}, data.inputs(), 0, {}};
    for (const auto& path : split_list(sources)) {
      all.push_back(load_external_source(path));
      manifest.inputs.emplace_back(path);
    }
    if (!weak.empty()) {
      auto [m, t] = flags.resolve(dataset.schema);
      manifest.config = config_json(m, t);
      manifest.seed = t.seed;
      for (const auto& name : split_list(weak)) {
        auto source = train_weak_classifier(dataset, parse_modality(name), m, t);
        if (!sources_dir.empty()) {
          auto path = fs::path(sources_dir) / (source.source_id + ".jsonl");
          save_source(source, path);
          manifest.outputs.push_back(path);
        }
        all.push_back(std::move(source));
      }
    }
    RefineOptions options{!no_original_vote, include_unlabeled};
    manifest.config["original_votes"] = options.original_votes;
    manifest.config["include_unlabeled"] = options.include_unlabeled;
    auto result = refine(dataset, all, options);

    const auto out_path = or_default(out, "refined.jsonl");
    const auto queue_path = or_default(queue, "review_queue.jsonl");
    save_labels(result.refined, out_path);
    save_vote_records(result.records, queue_path);
    manifest.outputs.push_back(out_path);
    manifest.outputs.push_back(queue_path);

    std::size_t changed = 0, needs_review = 0;
    for (const auto& r : result.records) {
      needs_review += r.status == ReviewStatus::needs_review;
      changed += r.original_label && r.refined_label != *r.original_label;
    }
    json summary = {{"records", result.records.size()}, {"changed", changed}, {"needs_review", needs_review}};
    json source_ids = json::array();
    for (const auto& s : all) source_ids.push_back(s.source_id);
    summary["sources"] = source_ids;
    write_outputs(or_default(json_out, "refine.json"), summary, manifest);
    std::cout << result.records.size() << " records, " << changed << " labels changed, " << needs_review
              << " need review\n";
    return kExitOk;
  }
};

struct ReviewApplyCmd {
  std::string queue, log, sample, label, note, labels_out;

  int run() const {
    const auto queue_path = or_default(queue, "review_queue.jsonl");
    const auto log_path = or_default(log, "review_log.jsonl");
    auto records = load_review_state(queue_path, log_path);
    ReviewDecision decision{sample, parse_label(label), note, utc_timestamp()};
    auto probe = records;
    apply_review(probe, decision);  // validate before touching the log
    append_review_log(log_path, decision);
    apply_review(records, decision);
    if (!labels_out.empty()) save_labels(refined_labels(records), labels_out);
    std::cout << sample << " -> " << label << " (reviewed)\n";
    return kExitOk;
  }
};

struct EnsembleCmd {
  FeatureFlags data;
  ModelFlags flags;
  std::size_t seeds = 5, k = 5, val_fold = 0;
  std::string ablations = "none", out_dir, manifest_path, predict, predictions_out, voting = "hard", json_out;

  std::vector<AblationSet> parse_ablations(std::uint64_t seed) const {
    if (ablations == "none") return {};
    if (ablations == "standard") return standard_ablations();
    if (ablations.rfind("random:", 0) == 0) return random_ablations(std::stoul(ablations.substr(7)), seed);
    throw Error(ErrorCode::InvalidConfig, "--ablations must be none, standard or random:N");
  }

  int run() const {
    if (voting != "hard" && voting != "soft") throw Error(ErrorCode::InvalidConfig, "--voting must be hard or soft");
    const auto mode = voting == "hard" ? VotingMode::hard : VotingMode::soft;
    const fs::path dir = out_dir.empty() ? data_dir() / "ensemble" : fs::path(out_dir);
    RunManifest run{"ensemble", {}, {}, 0, {}};
    json result = json::object();

    std::vector<TrainedVariant> variants;
    if (!manifest_path.empty()) {
      auto m = ensemble_manifest_from_json(read_json_file(manifest_path));
      variants = load_ensemble(m, fs::path(manifest_path).parent_path());
      run.inputs.emplace_back(manifest_path);
    } else {
      auto dataset = data.load();
      auto [m, t] = flags.resolve(dataset.schema);
      auto [train, val] = holdout_split(dataset, k, val_fold, t.seed);
      auto specs = make_variants(m, seeds, parse_ablations(t.seed), t.seed);
      variants = train_variants(specs, train, val, t);
      EnsembleManifest manifest;
      json per_variant = json::object();
      for (const auto& v : variants) {
        auto ckpt = fs::path(v.spec.variant_id + ".json");
        save_trained_model(v.model, dir / ckpt);
        manifest.variants.push_back({v.spec, ckpt});
        per_variant[v.spec.variant_id] = evaluate_model(v.model, val).waf;
      }
      write_json_file(dir / "manifest.json", to_json(manifest));
      auto votes = ensemble_predict_all(variants, val, mode);
      std::vector<EmotionLabel> golds, preds;
      for (std::size_t i = 0; i < val.size(); ++i) {
        if (!val.samples[i].gold_label) continue;
        golds.push_back(*val.samples[i].gold_label);
        preds.push_back(votes[i].label);
      }
      result["val_variant_waf"] = per_variant;
      result["val_ensemble"] = to_json(evaluate(golds, preds));
      json cfg = config_json(m, t);
      cfg["seeds"] = seeds;
      cfg["ablations"] = ablations;
      cfg["k"] = k;
      cfg["val_fold"] = val_fold;
      run.config = cfg;
      run.seed = t.seed;
      run.inputs = data.inputs();
      run.outputs.push_back(dir / "manifest.json");
    }
    run.config["voting"] = voting;

    const fs::path target = predict.empty() ? data.features_path() : fs::path(predict);
    auto to_predict = ingest(target, variants.front().model.model.config.schema);
    auto votes = ensemble_predict_all(variants, to_predict, mode);
    LabelMap labels;
    for (std::size_t i = 0; i < to_predict.size(); ++i) labels.emplace(to_predict.samples[i].sample_id, votes[i].label);
    const fs::path pred_path = predictions_out.empty() ? dir / "predictions.jsonl" : fs::path(predictions_out);
    save_labels(labels, pred_path);
    run.outputs.push_back(pred_path);
    if (to_predict.labeled_count() > 0) {
      std::vector<EmotionLabel> golds, preds;
      for (std::size_t i = 0; i < to_predict.size(); ++i) {
        if (!to_predict.samples[i].gold_label) continue;
        golds.push_back(*to_predict.samples[i].gold_label);
        preds.push_back(votes[i].label);
      }
      result["predict_metrics"] = to_json(evaluate(golds, preds));
      std::cout << "ensemble WAF " << format_percent(result["predict_metrics"]["waf"].get<double>()) << '\n';
    }
    result["variants"] = variants.size();
    write_outputs(json_out.empty() ? dir / "ensemble.json" : fs::path(json_out), result, run);
    std::cout << variants.size() << " variants, predictions in " << pred_path.string() << '\n';
    return kExitOk;
  }
};

struct ServeReviewCmd {
  std::string bind = "127.0.0.1:8080", queue, log, static_dir;

  int run() const {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::InvalidConfig, "--bind must be host:port");
    const std::string host = bind.substr(0, colon);
    int port = 0;
    try {
      port = std::stoi(bind.substr(colon + 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, "--bind port is not a number");
    }
    ReviewService service(or_default(queue, "review_queue.jsonl"), or_default(log, "review_log.jsonl"));
    httplib::Server server;
    std::optional<fs::path> assets;
    if (!static_dir.empty()) assets = fs::path(static_dir);
    register_review_routes(server, service, assets);
    if (port == 0) {
      port = server.bind_to_any_port(host);
      if (port < 0) throw Error(ErrorCode::IoFailure, "cannot bind " + host);
    } else if (!server.bind_to_port(host, port)) {
      throw Error(ErrorCode::IoFailure, "cannot bind " + bind);
    }
    std::cout << "serving review API on http://" << host << ":" << port << std::endl;
    if (!server.listen_after_bind()) return kExitRuntime;
    return kExitOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ecmf: multimodal fusion training, label refinement and ensembling"};
  app.require_subcommand(1);

  SynthCmd synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic feature manifest");
  s->add_option("--n-per-class", synth.n_per_class, "samples per class");
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_option("--separation", synth.separation, "minimum class-mean distance in noise units");
  s->add_option("--noise-sigma", synth.noise_sigma, "isotropic feature noise");
  s->add_option("--label-noise", synth.label_noise, "fraction of labels moved to a wrong class");
  s->add_option("--dim", synth.dim, "per-stream dim for the default schema");
  s->add_option("--schema", synth.schema, "stream schema JSON");
  s->add_option("--out", synth.out, "output manifest");
  s->add_option("--clean-out", synth.clean_out, "label file with the uncorrupted labels");
  s->add_option("--json", synth.json_out, "JSON result path");

  IngestCmd ingest_cmd;
  auto* in = app.add_subcommand("ingest", "validate a feature manifest and summarise it");
  in->add_option("manifest", ingest_cmd.positional, "feature manifest");
  ingest_cmd.data.attach(in);
  in->add_option("--schema-out", ingest_cmd.schema_out, "write the resolved schema here");
  in->add_option("--json", ingest_cmd.json_out, "JSON result path");

  TrainCmd train;
  auto* tr = app.add_subcommand("train", "train one model on a stratified train/validation split");
  train.data.attach(tr);
  train.flags.attach(tr);
  tr->add_option("--k", train.k, "folds used to carve out the validation split");
  tr->add_option("--val-fold", train.val_fold, "fold held out for validation");
  tr->add_option("--out", train.out, "trained model path");
  tr->add_option("--json", train.json_out, "JSON report path");

  CvCmd cv;
  auto* c = app.add_subcommand("cv", "k-fold cross-validation; prints the mean best-fold WAF");
  cv.data.attach(c);
  cv.flags.attach(c);
  c->add_option("--k", cv.k, "number of folds (default 5)");
  c->add_option("--json", cv.json_out, "JSON report path");

  EvalCmd eval;
  auto* ev = app.add_subcommand("eval", "score a trained model");
  eval.data.attach(ev);
  ev->add_option("--model", eval.model, "trained model path")->required();
  ev->add_option("--predictions-out", eval.predictions_out, "write predictions as a label file");
  ev->add_option("--json", eval.json_out, "JSON metrics path");

  RefineCmd refine_cmd;
  auto* rf = app.add_subcommand("refine", "majority-vote label refinement");
  refine_cmd.data.attach(rf);
  refine_cmd.flags.attach(rf);
  rf->add_option("--sources", refine_cmd.sources, "comma-separated label files used as voters");
  rf->add_option("--weak", refine_cmd.weak, "comma-separated modalities to train weak classifiers for");
  rf->add_option("--sources-dir", refine_cmd.sources_dir, "save weak-classifier predictions here");
  rf->add_option("--out", refine_cmd.out, "refined label file");
  rf->add_option("--queue", refine_cmd.queue, "vote-record / review queue file");
  rf->add_flag("--no-original-vote", refine_cmd.no_original_vote, "original label does not vote");
  rf->add_flag("--include-unlabeled", refine_cmd.include_unlabeled, "pseudo-label samples without a gold label");
  rf->add_option("--json", refine_cmd.json_out, "JSON summary path");

  ReviewApplyCmd review_apply;
  auto* rv = app.add_subcommand("review", "human review of disputed labels");
  rv->require_subcommand(1);
  auto* ra = rv->add_subcommand("apply", "record one review decision");
  ra->add_option("--queue", review_apply.queue, "review queue file");
  ra->add_option("--log", review_apply.log, "append-only review log");
  ra->add_option("--sample", review_apply.sample, "sample id")->required();
  ra->add_option("--label", review_apply.label, "corrected label")->required();
  ra->add_option("--note", review_apply.note, "reviewer note");
  ra->add_option("--labels-out", review_apply.labels_out, "write the current refined labels here");

  EnsembleCmd ens;
  auto* en = app.add_subcommand("ensemble", "train seed/ablation variants and majority-vote them");
  ens.data.attach(en);
  ens.flags.attach(en);
  en->add_option("--seeds", ens.seeds, "number of seed variants (default 5)");
  en->add_option("--ablations", ens.ablations, "none | standard | random:N");
  en->add_option("--k", ens.k, "folds used to carve out the validation split");
  en->add_option("--val-fold", ens.val_fold, "fold held out for validation");
  en->add_option("--out-dir", ens.out_dir, "checkpoint + manifest directory");
  en->add_option("--manifest", ens.manifest_path, "use an existing ensemble manifest instead of training");
  en->add_option("--predict", ens.predict, "feature manifest to label (default: --features)");
  en->add_option("--predictions-out", ens.predictions_out, "label file for the ensemble predictions");
  en->add_option("--voting", ens.voting, "hard | soft");
  en->add_option("--json", ens.json_out, "JSON result path");

  ServeReviewCmd serve;
  auto* sv = app.add_subcommand("serve-review", "serve the review API and UI");
  sv->add_option("--bind", serve.bind, "host:port (port 0 picks a free port)");
  sv->add_option("--queue", serve.queue, "review queue file");
  sv->add_option("--log", serve.log, "append-only review log");
  sv->add_option("--static", serve.static_dir, "directory with built review UI assets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (*s) return synth.run();
    if (*in) return ingest_cmd.run();
    if (*tr) return train.run();
    if (*c) return cv.run();
    if (*ev) return eval.run();
    if (*rf) return refine_cmd.run();
    if (*ra) return review_apply.run();
    if (*en) return ens.run();
    if (*sv) return serve.run();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}
