#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecmf/dataset.hpp"
#include "ecmf/error.hpp"
#include "ecmf/fusion_net.hpp"
#include "ecmf/jsonl.hpp"
#include "ecmf/metrics.hpp"
#include "ecmf/preprocess.hpp"

namespace ecmf {

struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t max_epochs = 200;
  double grad_clip_norm = 1.0;
  std::size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t patience = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be > 0");
    if (!(grad_clip_norm > 0)) throw Error(ErrorCode::InvalidConfig, "grad_clip_norm must be > 0");
    if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be positive");
    if (max_epochs == 0) throw Error(ErrorCode::InvalidConfig, "max_epochs must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
      throw Error(ErrorCode::InvalidConfig, "Adam betas must lie in [0,1)");
    }
  }

  bool operator==(const TrainConfig&) const = default;
};

inline json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"max_epochs", c.max_epochs}, {"grad_clip_norm", c.grad_clip_norm},
          {"batch_size", c.batch_size},       {"beta1", c.beta1},           {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},           {"patience", c.patience},     {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
  try {
    if (j.contains("learning_rate")) base.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("max_epochs")) base.max_epochs = j.at("max_epochs").get<std::size_t>();
    if (j.contains("grad_clip_norm")) base.grad_clip_norm = j.at("grad_clip_norm").get<double>();
    if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("beta1")) base.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) base.beta2 = j.at("beta2").get<double>();
    if (j.contains("adam_eps")) base.adam_eps = j.at("adam_eps").get<double>();
    if (j.contains("patience")) base.patience = j.at("patience").get<std::size_t>();
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("train config: ") + e.what());
  }
  return base;
}

/// splitmix64 finaliser; derives independent stream seeds from one user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Loss and gradients

/// -log softmax(logits)[gold], via log-sum-exp.
inline double cross_entropy(const Logits& logits, EmotionLabel gold) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (double z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum) - logits[index_of(gold)];
}

struct LossAndGrad {
  double loss = 0.0;  // mean over the batch
  FusionParams grads;
};

namespace detail {

inline void add_colsum(Mat& bias_grad, const Mat& d) { bias_grad.row(0) += d.colwise().sum(); }

/// Backprop through one attention layer; returns d(loss)/d(input tokens).
inline Mat attention_backward(const AttentionParams& a, const AttentionCache& c, const Mat& dy, AttentionParams& g,
                              std::size_t batch, std::size_t n, std::size_t num_heads) {
  const Eigen::Index H = a.w_q.rows();
  const auto dh = H / static_cast<Eigen::Index>(num_heads);
  const auto ni = static_cast<Eigen::Index>(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // LayerNorm
  g.ln_gain.row(0) += (dy.array() * c.xhat.array()).matrix().colwise().sum();
  add_colsum(g.ln_bias, dy);
  Mat dxhat = dy.array().rowwise() * a.ln_gain.row(0).array();
  Mat dr(dy.rows(), H);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).mean();
    const double mean_dx = dxhat.row(i).dot(c.xhat.row(i)) / static_cast<double>(H);
    dr.row(i) = c.inv_std(i) * (dxhat.row(i).array() - mean_d - c.xhat.row(i).array() * mean_dx);
  }

  // residual + dropout
  Mat dz = c.mask.size() > 0 ? Mat(dr.array() * c.mask.array()) : dr;
  Mat dx = dr;

  g.w_o.noalias() += c.o.transpose() * dz;
  add_colsum(g.b_o, dz);
  Mat d_o = dz * a.w_o.transpose();

  Mat dq = Mat::Zero(dy.rows(), H);
  Mat dk = Mat::Zero(dy.rows(), H);
  Mat dv = Mat::Zero(dy.rows(), H);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b) * ni;
    for (std::size_t hd = 0; hd < num_heads; ++hd) {
      const auto c0 = static_cast<Eigen::Index>(hd) * dh;
      const Mat& attn = c.attn[b * num_heads + hd];
      auto d_oh = d_o.block(r0, c0, ni, dh);
      Mat d_attn = d_oh * c.v.block(r0, c0, ni, dh).transpose();
      dv.block(r0, c0, ni, dh).noalias() = attn.transpose() * d_oh;
      Eigen::VectorXd row_dot = (d_attn.array() * attn.array()).rowwise().sum();
      Mat ds = attn.array() * (d_attn.colwise() - row_dot).array();
      dq.block(r0, c0, ni, dh).noalias() = scale * ds * c.k.block(r0, c0, ni, dh);
      dk.block(r0, c0, ni, dh).noalias() = scale * ds.transpose() * c.q.block(r0, c0, ni, dh);
    }
  }
  g.w_q.noalias() += c.x.transpose() * dq;
  g.w_k.noalias() += c.x.transpose() * dk;
  g.w_v.noalias() += c.x.transpose() * dv;
  add_colsum(g.b_q, dq);
  add_colsum(g.b_k, dk);
  add_colsum(g.b_v, dv);
  dx.noalias() += dq * a.w_q.transpose();
  dx.noalias() += dk * a.w_k.transpose();
  dx.noalias() += dv * a.w_v.transpose();
  return dx;
}

inline void encoder_backward(const EncoderParams& e, const EncoderCache& c, const Mat& dout, EncoderParams& g) {
  Mat dh = dout;
  if (e.w_mid.size() > 0) {
    Mat du = c.mask.size() > 0 ? Mat(dout.array() * c.mask.array()) : dout;
    du.array() *= c.u.unaryExpr([](double v) { return gelu_grad(v); }).array();
    g.w_mid.noalias() += c.h.transpose() * du;
    add_colsum(g.b_mid, du);
    dh.noalias() += du * e.w_mid.transpose();
  }
  g.w_in.noalias() += c.x.transpose() * dh;
  add_colsum(g.b_in, dh);
}

}  // namespace detail

/// Mean cross-entropy over a labeled batch and its exact gradient w.r.t. every parameter.
/// In train mode the dropout masks come from `rng`, drawn exactly as forward_batch draws them.
inline LossAndGrad backward(const FusionModel& model, std::span<const Sample* const> batch, bool train_mode = false,
                            Rng* rng = nullptr) {
  if (batch.empty()) throw Error(ErrorCode::EmptyInput, "backward on an empty batch");
  for (const Sample* s : batch) {
    if (!s->gold_label) throw Error(ErrorCode::EmptyInput, "sample " + s->sample_id + " has no gold label");
  }
  const auto& cfg = model.config;
  ForwardCache cache;
  Mat logits = forward_batch(model, batch, train_mode, rng, &cache);

  const std::size_t B = batch.size();
  const std::size_t n = cache.tokens;
  const auto H = static_cast<Eigen::Index>(cfg.hidden_dim);
  LossAndGrad out{0.0, model.zeros_like()};
  auto& g = out.grads;

  Mat dlogits(logits.rows(), logits.cols());
  for (std::size_t b = 0; b < B; ++b) {
    Logits z{};
    for (std::size_t c = 0; c < kNumClasses; ++c) z[c] = logits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c));
    out.loss += cross_entropy(z, *batch[b]->gold_label);
    auto p = softmax(z);
    p[index_of(*batch[b]->gold_label)] -= 1.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      dlogits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c)) = p[c] / static_cast<double>(B);
    }
  }
  out.loss /= static_cast<double>(B);
  if (!std::isfinite(out.loss)) throw Error(ErrorCode::NonFiniteLoss, "batch loss is not finite");

  g.w_cls.noalias() = cache.pooled.transpose() * dlogits;
  g.b_cls.row(0) = dlogits.colwise().sum();
  Mat dpooled = dlogits * model.params.w_cls.transpose();

  Mat dtokens(static_cast<Eigen::Index>(B * n), H);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < n; ++t) {
      dtokens.row(static_cast<Eigen::Index>(b * n + t)) = dpooled.row(static_cast<Eigen::Index>(b)) / static_cast<double>(n);
    }
  }
  for (std::size_t l = cfg.num_attn_layers; l-- > 0;) {
    dtokens = detail::attention_backward(model.params.layers[l], cache.layers[l], dtokens, g.layers[l], B, n,
                                         cfg.num_heads);
  }

  std::vector<Mat> dencoded(cfg.schema.size(), Mat::Zero(static_cast<Eigen::Index>(B), H));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < n; ++t) {
      const auto& slot = model.plan[t];
      const auto row = dtokens.row(static_cast<Eigen::Index>(b * n + t));
      if (slot.is_modal_token) {
        g.modal_tokens[static_cast<std::size_t>(slot.modality)].row(0) += row;
      } else {
        dencoded[slot.stream].row(static_cast<Eigen::Index>(b)) = row;
      }
    }
  }
  for (std::size_t s = 0; s < cfg.schema.size(); ++s) {
    detail::encoder_backward(model.params.encoders[s], cache.encoders[s], dencoded[s], g.encoders[s]);
  }

  for_each_param(cfg.schema, g, [](const std::string& name, const Mat& m) {
    if (!m.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "gradient of " + name + " is not finite");
  });
  return out;
}

inline double global_norm(const FusionParams& grads) {
  double sq = 0;
  for_each_tensor(grads, [&](const Mat& m) { sq += m.squaredNorm(); });
  return std::sqrt(sq);
}

/// Rescales all gradients jointly so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_gradients(FusionParams& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for_each_tensor(grads, [&](Mat& m) { m *= scale; });
  }
  return norm;
}

class AdamOptimizer {
 public:
  AdamOptimizer(const FusionModel& model, const TrainConfig& config)
      : config_(config), m_(model.zeros_like()), v_(model.zeros_like()) {}

  void step(FusionParams& params, const FusionParams& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    std::vector<Mat*> p, m, v;
    std::vector<const Mat*> g;
    for_each_tensor(params, [&](Mat& x) { p.push_back(&x); });
    for_each_tensor(m_, [&](Mat& x) { m.push_back(&x); });
    for_each_tensor(v_, [&](Mat& x) { v.push_back(&x); });
    for_each_tensor(grads, [&](const Mat& x) { g.push_back(&x); });
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i]->array() = config_.beta1 * m[i]->array() + (1.0 - config_.beta1) * g[i]->array();
      v[i]->array() = config_.beta2 * v[i]->array() + (1.0 - config_.beta2) * g[i]->array().square();
      p[i]->array() -= config_.learning_rate * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + config_.adam_eps);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  TrainConfig config_;
  FusionParams m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Trained pipeline: model plus the standardization it was trained under

struct TrainedModel {
  FusionModel model;
  std::optional<NormStats> norm;

  Sample prepare(const Sample& raw) const { return norm ? apply_norm(raw, *norm) : raw; }

  Dataset prepare(const Dataset& raw) const { return norm ? apply_norm(raw, *norm) : raw; }

  Prediction predict(const Sample& raw) const { return ecmf::predict(model, prepare(raw)); }

  std::vector<Prediction> predict_all(const Dataset& raw) const {
    return ecmf::predict_all(model, prepare(raw).samples);
  }
};

inline json to_json(const TrainedModel& t) {
  return {{"checkpoint", checkpoint_to_json(t.model)}, {"norm", t.norm ? to_json(*t.norm) : json(nullptr)}};
}

inline TrainedModel trained_model_from_json(const json& j) {
  try {
    TrainedModel t{checkpoint_from_json(j.at("checkpoint")), std::nullopt};
    if (!j.at("norm").is_null()) t.norm = norm_stats_from_json(j.at("norm"));
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("trained model: ") + e.what());
  }
}

inline void save_trained_model(const TrainedModel& t, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << to_json(t).dump() << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + path.string());
}

inline TrainedModel load_trained_model(const std::filesystem::path& path) {
  return trained_model_from_json(read_json_file(path));
}

/// Metrics of a trained model on the labeled samples of `data` (raw features).
inline MetricsReport evaluate_model(const TrainedModel& t, const Dataset& data) {
  std::vector<EmotionLabel> golds, preds;
  const auto prepared = t.prepare(data);
  std::vector<Sample> labeled;
  for (const auto& s : prepared.samples) {
    if (s.gold_label) labeled.push_back(s);
  }
  if (labeled.empty()) throw Error(ErrorCode::EmptyInput, "no labeled samples to evaluate");
  auto predictions = ecmf::predict_all(t.model, labeled);
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    golds.push_back(*labeled[i].gold_label);
    preds.push_back(predictions[i].label);
  }
  return evaluate(golds, preds);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_waf;     // per epoch; empty without a validation set
  std::size_t best_epoch = 0;      // 1-based
  double best_val_waf = 0.0;
  TrainedModel best;
  std::optional<MetricsReport> final_val;  // best checkpoint on the validation set
};

inline json to_json(const TrainReport& r) {
  return {{"train_loss", r.train_loss},
          {"val_waf", r.val_waf},
          {"best_epoch", r.best_epoch},
          {"best_val_waf", r.best_val_waf},
          {"final_val", r.final_val ? to_json(*r.final_val) : json(nullptr)}};
}

/// Trains a fresh model from `model_config` on the labeled samples of `train_set`.
/// Norm stats (when enabled) are fitted on `train_set` alone. After every epoch the
/// model is scored on `val_set` in eval mode; the best-WAF epoch is kept and training
/// stops once more than `patience` epochs pass without improvement. With an empty
/// `val_set` the last epoch is kept and there is no early stopping.
inline TrainReport train_one(const ModelConfig& model_config, const Dataset& train_set, const Dataset& val_set,
                             const TrainConfig& config) {
  config.validate();
  model_config.validate();

  std::vector<Sample> train;
  for (const auto& s : train_set.samples) {
    if (s.gold_label) train.push_back(s);
  }
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "training set has no labeled samples");
  std::vector<Sample> val;
  for (const auto& s : val_set.samples) {
    if (s.gold_label) val.push_back(s);
  }

  std::optional<NormStats> norm;
  if (model_config.enable_norm) {
    norm = fit_norm(Dataset{train_set.schema, train});
    for (auto& s : train) s = apply_norm(s, *norm);
    for (auto& s : val) s = apply_norm(s, *norm);
  }
  std::vector<EmotionLabel> val_golds;
  for (const auto& s : val) val_golds.push_back(*s.gold_label);

  FusionModel model = init_model(model_config);
  AdamOptimizer adam(model, config);
  Rng shuffle_rng(mix_seed(config.seed, 1));
  Rng dropout_rng(mix_seed(config.seed, 2));

  TrainReport report;
  report.best_val_waf = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;
  std::vector<const Sample*> batch;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
      batch.clear();
      for (std::size_t j = i; j < std::min(order.size(), i + config.batch_size); ++j) batch.push_back(&train[order[j]]);
      LossAndGrad lg;
      try {
        lg = backward(model, batch, true, &dropout_rng);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFiniteLoss || e.code() == ErrorCode::NonFiniteGradient) {
          throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ": " + e.what());
        }
        throw;
      }
      loss_sum += lg.loss * static_cast<double>(batch.size());
      clip_gradients(lg.grads, config.grad_clip_norm);
      adam.step(model.params, lg.grads);
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(train.size()));

    if (val.empty()) {
      report.best_epoch = epoch;
      continue;
    }
    auto predictions = predict_all(model, val);
    std::vector<EmotionLabel> preds;
    for (const auto& p : predictions) preds.push_back(p.label);
    const double waf = weighted_f_score(val_golds, preds);
    report.val_waf.push_back(waf);
    if (waf > report.best_val_waf) {
      report.best_val_waf = waf;
      report.best_epoch = epoch;
      report.best = TrainedModel{model, norm};
      report.final_val = evaluate(val_golds, preds);
      since_best = 0;
    } else if (++since_best > config.patience) {
      break;
    }
  }
  if (val.empty()) {
    report.best = TrainedModel{std::move(model), norm};
    report.best_val_waf = 0.0;
  }
  return report;
}

// ---------------------------------------------------------------------------
// k-fold protocol

struct CvReport {
  FoldSplit split;
  std::vector<TrainReport> folds;
  std::vector<double> best_wafs;
  double mean_waf = 0.0;
  double std_waf = 0.0;  // population std over folds
};

inline json to_json(const CvReport& r) {
  json folds = json::array();
  for (const auto& f : r.folds) folds.push_back(to_json(f));
  return {{"k", r.split.k},
          {"best_wafs", r.best_wafs},
          {"mean_waf", r.mean_waf},
          {"mean_waf_percent", format_percent(r.mean_waf)},
          {"std_waf", r.std_waf},
          {"folds", folds},
          {"split", to_json(r.split)}};
}

/// Trains fold i on every other fold and validates on fold i; the headline number
/// is the mean over folds of each fold's best validation WAF.
inline CvReport run_cv(const Dataset& dataset, std::size_t k, const ModelConfig& model_config,
                       const TrainConfig& train_config) {
  CvReport report;
  report.split = make_folds(dataset, k, train_config.seed);
  for (std::size_t fold = 0; fold < k; ++fold) {
    auto train = dataset.subset(report.split.ids_not_in(fold));
    auto val = dataset.subset(report.split.ids_in(fold));
    report.folds.push_back(train_one(model_config, train, val, train_config));
    report.best_wafs.push_back(report.folds.back().best_val_waf);
  }
  const double n = static_cast<double>(k);
  report.mean_waf = std::accumulate(report.best_wafs.begin(), report.best_wafs.end(), 0.0) / n;
  double var = 0;
  for (double w : report.best_wafs) var += (w - report.mean_waf) * (w - report.mean_waf);
  report.std_waf = std::sqrt(var / n);
  return report;
}

}  // namespace ecmf
