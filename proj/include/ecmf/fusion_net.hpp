#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ecmf/dataset.hpp"
#include "ecmf/error.hpp"
#include "ecmf/jsonl.hpp"
#include "ecmf/labels.hpp"

namespace ecmf {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;
using Logits = std::array<double, kNumClasses>;

struct ModelConfig {
  std::size_t hidden_dim = 128;
  double dropout_rate = 0.6;
  std::size_t num_heads = 2;
  std::size_t num_attn_layers = 2;
  bool enable_norm = true;
  bool enable_modal_token = true;
  bool enable_residual_mlp = true;
  std::uint64_t seed = 0;
  StreamSchema schema = default_schema();

  std::size_t head_dim() const { return hidden_dim / num_heads; }

  void validate() const {
    if (hidden_dim == 0) throw Error(ErrorCode::InvalidConfig, "hidden_dim must be positive");
    if (num_heads == 0) throw Error(ErrorCode::InvalidConfig, "num_heads must be positive");
    if (hidden_dim % num_heads != 0) {
      throw Error(ErrorCode::InvalidConfig, "hidden_dim " + std::to_string(hidden_dim) + " not divisible by " +
                                                std::to_string(num_heads) + " heads");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "dropout_rate must lie in [0,1)");
    }
    if (schema.empty()) throw Error(ErrorCode::InvalidConfig, "schema has no streams");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline json to_json(const ModelConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"dropout_rate", c.dropout_rate},
          {"num_heads", c.num_heads},
          {"num_attn_layers", c.num_attn_layers},
          {"enable_norm", c.enable_norm},
          {"enable_modal_token", c.enable_modal_token},
          {"enable_residual_mlp", c.enable_residual_mlp},
          {"seed", c.seed},
          {"schema", to_json(c.schema)}};
}

/// Reads the keys present in `j` over `base`; missing keys keep base values.
inline ModelConfig model_config_from_json(const json& j, ModelConfig base = {}) {
  try {
    if (j.contains("hidden_dim")) base.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    if (j.contains("dropout_rate")) base.dropout_rate = j.at("dropout_rate").get<double>();
    if (j.contains("num_heads")) base.num_heads = j.at("num_heads").get<std::size_t>();
    if (j.contains("num_attn_layers")) base.num_attn_layers = j.at("num_attn_layers").get<std::size_t>();
    if (j.contains("enable_norm")) base.enable_norm = j.at("enable_norm").get<bool>();
    if (j.contains("enable_modal_token")) base.enable_modal_token = j.at("enable_modal_token").get<bool>();
    if (j.contains("enable_residual_mlp")) base.enable_residual_mlp = j.at("enable_residual_mlp").get<bool>();
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("schema")) base.schema = schema_from_json(j.at("schema"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("model config: ") + e.what());
  }
  return base;
}

// ---------------------------------------------------------------------------
// Parameters

struct EncoderParams {
  Mat w_in, b_in;    // dim x hidden, 1 x hidden
  Mat w_mid, b_mid;  // hidden x hidden, 1 x hidden; empty when the residual MLP is disabled
};

struct AttentionParams {
  Mat w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Mat ln_gain, ln_bias;
};

/// Every learnable tensor. Gradients use the same layout.
struct FusionParams {
  std::vector<EncoderParams> encoders;  // one per schema stream
  std::array<Mat, kNumModalities> modal_tokens;  // 1 x hidden; empty when absent or disabled
  std::vector<AttentionParams> layers;
  Mat w_cls, b_cls;  // hidden x 6, 1 x 6
};

/// Calls `fn(name, tensor)` over every present parameter in a fixed order.
/// `stream_name(i)` supplies the name used for encoder `i`.
template <typename Params, typename NameFn, typename Fn>
void visit_params(Params& p, NameFn&& stream_name, Fn&& fn) {
  for (std::size_t s = 0; s < p.encoders.size(); ++s) {
    auto& e = p.encoders[s];
    const std::string base = "encoder." + stream_name(s) + ".";
    fn(base + "w_in", e.w_in);
    fn(base + "b_in", e.b_in);
    if (e.w_mid.size() > 0) {
      fn(base + "w_mid", e.w_mid);
      fn(base + "b_mid", e.b_mid);
    }
  }
  for (Modality m : kAllModalities) {
    auto& t = p.modal_tokens[static_cast<std::size_t>(m)];
    if (t.size() > 0) fn("modal_token." + std::string(to_string(m)), t);
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& a = p.layers[l];
    const std::string base = "attn." + std::to_string(l) + ".";
    fn(base + "w_q", a.w_q);
    fn(base + "b_q", a.b_q);
    fn(base + "w_k", a.w_k);
    fn(base + "b_k", a.b_k);
    fn(base + "w_v", a.w_v);
    fn(base + "b_v", a.b_v);
    fn(base + "w_o", a.w_o);
    fn(base + "b_o", a.b_o);
    fn(base + "ln_gain", a.ln_gain);
    fn(base + "ln_bias", a.ln_bias);
  }
  fn(std::string("classifier.w"), p.w_cls);
  fn(std::string("classifier.b"), p.b_cls);
}

template <typename Params, typename Fn>
void for_each_param(const StreamSchema& schema, Params& p, Fn&& fn) {
  visit_params(p, [&](std::size_t s) { return schema[s].name; }, std::forward<Fn>(fn));
}

/// Name-free traversal, same order as for_each_param.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  visit_params(p, [](std::size_t s) { return std::to_string(s); },
               [&](const std::string&, auto& m) { fn(m); });
}

/// A token slot: either a modality's learnable token or an encoded stream.
struct TokenSlot {
  bool is_modal_token;
  Modality modality;
  std::size_t stream;  // schema position when !is_modal_token
};

/// Token order: for audio, text, video in turn, the modal token (if enabled)
/// followed by that modality's streams in schema order.
inline std::vector<TokenSlot> token_plan(const ModelConfig& config) {
  std::vector<TokenSlot> plan;
  for (Modality m : kAllModalities) {
    auto streams = config.schema.streams_of(m);
    if (streams.empty()) continue;
    if (config.enable_modal_token) plan.push_back({true, m, 0});
    for (std::size_t s : streams) plan.push_back({false, m, s});
  }
  return plan;
}

struct FusionModel {
  ModelConfig config;
  FusionParams params;
  std::vector<TokenSlot> plan;

  std::size_t num_tokens() const { return plan.size(); }

  /// Zero tensors with this model's parameter shapes.
  FusionParams zeros_like() const {
    FusionParams z = params;
    for_each_param(config.schema, z, [](const std::string&, Mat& m) { m.setZero(); });
    return z;
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for_each_param(config.schema, params, [&](const std::string& name, const Mat&) { out.push_back(name); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_param(config.schema, params, [&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }
};

inline FusionModel init_model(const ModelConfig& config) {
  config.validate();
  const auto H = static_cast<Eigen::Index>(config.hidden_dim);
  FusionModel model{config, {}, token_plan(config)};
  auto& p = model.params;

  for (const auto& spec : config.schema.entries()) {
    EncoderParams e;
    e.w_in = Mat::Zero(static_cast<Eigen::Index>(spec.dim), H);
    e.b_in = Mat::Zero(1, H);
    if (config.enable_residual_mlp) {
      e.w_mid = Mat::Zero(H, H);
      e.b_mid = Mat::Zero(1, H);
    }
    p.encoders.push_back(std::move(e));
  }
  if (config.enable_modal_token) {
    for (Modality m : kAllModalities) {
      if (config.schema.has_modality(m)) p.modal_tokens[static_cast<std::size_t>(m)] = Mat::Zero(1, H);
    }
  }
  for (std::size_t l = 0; l < config.num_attn_layers; ++l) {
    AttentionParams a;
    for (Mat* w : {&a.w_q, &a.w_k, &a.w_v, &a.w_o}) *w = Mat::Zero(H, H);
    for (Mat* b : {&a.b_q, &a.b_k, &a.b_v, &a.b_o, &a.ln_bias}) *b = Mat::Zero(1, H);
    a.ln_gain = Mat::Ones(1, H);
    p.layers.push_back(std::move(a));
  }
  p.w_cls = Mat::Zero(H, static_cast<Eigen::Index>(kNumClasses));
  p.b_cls = Mat::Zero(1, static_cast<Eigen::Index>(kNumClasses));

  // Glorot-uniform weight matrices, N(0, 0.02^2) modal tokens; biases stay zero, LayerNorm gain one.
  Rng rng(config.seed);
  std::normal_distribution<double> token_init(0.0, 0.02);
  for_each_param(config.schema, p, [&](const std::string& name, Mat& m) {
    if (name.rfind("modal_token.", 0) == 0) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = token_init(rng);
      return;
    }
    const auto leaf = name.substr(name.rfind('.') + 1);
    if (leaf[0] == 'b' || leaf.rfind("ln_", 0) == 0) return;
    const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  });
  return model;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

/// Inverted-dropout mask: entries are 0 or 1/(1-rate).
inline Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
  return mask;
}

inline void softmax_rows(Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace detail

struct EncoderCache {
  Mat x, h, u, mask;  // mask empty in eval mode
};

struct AttentionCache {
  Mat x, q, k, v, o, z, mask;
  std::vector<Mat> attn;  // [sample * heads + head] -> n x n
  Mat xhat;
  Eigen::VectorXd inv_std;
};

/// Intermediate activations of one batched forward pass, kept for backprop.
struct ForwardCache {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::vector<EncoderCache> encoders;
  std::vector<AttentionCache> layers;
  Mat pooled;  // batch x hidden
};

/// Residual stream encoder over a batch of one stream's features (rows = samples):
/// h = x W_in + b_in; out = h + Dropout(GELU(h W_mid + b_mid)).
inline Mat encode_batch(const FusionModel& model, std::size_t stream, const Mat& x, bool train_mode, Rng* rng,
                        EncoderCache* cache) {
  const auto& e = model.params.encoders.at(stream);
  if (x.cols() != e.w_in.rows()) {
    throw Error(ErrorCode::DimMismatch, "stream " + model.config.schema[stream].name + " expects dim " +
                                            std::to_string(e.w_in.rows()) + ", got " + std::to_string(x.cols()));
  }
  Mat h = x * e.w_in;
  h.rowwise() += e.b_in.row(0);
  Mat out = h;
  if (e.w_mid.size() > 0) {
    Mat u = h * e.w_mid;
    u.rowwise() += e.b_mid.row(0);
    Mat g = u.unaryExpr([](double v) { return detail::gelu(v); });
    Mat mask;
    if (train_mode && model.config.dropout_rate > 0.0) {
      mask = detail::dropout_mask(g.rows(), g.cols(), model.config.dropout_rate, *rng);
      g.array() *= mask.array();
    }
    out += g;
    if (cache) {
      cache->u = std::move(u);
      cache->mask = std::move(mask);
    }
  }
  if (cache) {
    cache->x = x;
    cache->h = std::move(h);
  }
  return out;
}

/// Multi-head self-attention + residual + LayerNorm over `batch` stacked token blocks
/// of `n` rows each: out = LayerNorm(x + Dropout(MHA(x))).
inline Mat attention_batch(const AttentionParams& a, const Mat& x, std::size_t batch, std::size_t n,
                           std::size_t num_heads, double dropout_rate, bool train_mode, Rng* rng,
                           AttentionCache* cache) {
  const Eigen::Index H = a.w_q.rows();
  if (x.cols() != H || static_cast<std::size_t>(x.rows()) != batch * n) {
    throw Error(ErrorCode::ShapeMismatch, "attention input is " + std::to_string(x.rows()) + "x" +
                                              std::to_string(x.cols()) + ", expected " + std::to_string(batch * n) +
                                              "x" + std::to_string(H));
  }
  const auto dh = static_cast<Eigen::Index>(H / static_cast<Eigen::Index>(num_heads));
  const auto ni = static_cast<Eigen::Index>(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat q = x * a.w_q;
  q.rowwise() += a.b_q.row(0);
  Mat k = x * a.w_k;
  k.rowwise() += a.b_k.row(0);
  Mat v = x * a.w_v;
  v.rowwise() += a.b_v.row(0);

  Mat o(x.rows(), H);
  std::vector<Mat> attn;
  if (cache) attn.reserve(batch * num_heads);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b) * ni;
    for (std::size_t hd = 0; hd < num_heads; ++hd) {
      const auto c0 = static_cast<Eigen::Index>(hd) * dh;
      Mat s = q.block(r0, c0, ni, dh) * k.block(r0, c0, ni, dh).transpose() * scale;
      detail::softmax_rows(s);
      o.block(r0, c0, ni, dh).noalias() = s * v.block(r0, c0, ni, dh);
      if (cache) attn.push_back(std::move(s));
    }
  }

  Mat z = o * a.w_o;
  z.rowwise() += a.b_o.row(0);
  Mat mask;
  Mat r = x;
  if (train_mode && dropout_rate > 0.0) {
    mask = detail::dropout_mask(z.rows(), z.cols(), dropout_rate, *rng);
    r.array() += z.array() * mask.array();
  } else {
    r += z;
  }

  Mat xhat(r.rows(), H);
  Eigen::VectorXd inv_std(r.rows());
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    const double mu = r.row(i).mean();
    const double var = (r.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + detail::kLayerNormEps);
    xhat.row(i) = (r.row(i).array() - mu) * inv_std(i);
  }
  Mat y = xhat.array().rowwise() * a.ln_gain.row(0).array();
  y.rowwise() += a.ln_bias.row(0);

  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
    cache->z = std::move(z);
    cache->mask = std::move(mask);
    cache->attn = std::move(attn);
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

/// Batched forward. Returns logits (batch x 6). `rng` is required in train mode.
/// Dropout masks are drawn in a fixed order: encoders in schema order, then layers.
inline Mat forward_batch(const FusionModel& model, std::span<const Sample* const> samples, bool train_mode, Rng* rng,
                         ForwardCache* cache = nullptr) {
  const auto& cfg = model.config;
  const auto& schema = cfg.schema;
  if (train_mode && cfg.dropout_rate > 0.0 && rng == nullptr) {
    throw Error(ErrorCode::InvalidConfig, "train-mode forward needs an rng");
  }
  const std::size_t batch = samples.size();
  const std::size_t n = model.num_tokens();
  const auto H = static_cast<Eigen::Index>(cfg.hidden_dim);
  for (const Sample* s : samples) check_conforms(*s, schema);

  if (cache) {
    cache->batch = batch;
    cache->tokens = n;
    cache->encoders.assign(schema.size(), {});
    cache->layers.assign(cfg.num_attn_layers, {});
  }

  std::vector<Mat> encoded(schema.size());
  for (std::size_t s = 0; s < schema.size(); ++s) {
    const auto dim = static_cast<Eigen::Index>(schema[s].dim);
    Mat x(static_cast<Eigen::Index>(batch), dim);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& vals = samples[b]->streams[s].values;
      x.row(static_cast<Eigen::Index>(b)) = Eigen::Map<const Eigen::RowVectorXd>(vals.data(), dim);
    }
    encoded[s] = encode_batch(model, s, x, train_mode, rng, cache ? &cache->encoders[s] : nullptr);
  }

  Mat tokens(static_cast<Eigen::Index>(batch * n), H);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < n; ++t) {
      const auto& slot = model.plan[t];
      const auto row = static_cast<Eigen::Index>(b * n + t);
      if (slot.is_modal_token) {
        tokens.row(row) = model.params.modal_tokens[static_cast<std::size_t>(slot.modality)].row(0);
      } else {
        tokens.row(row) = encoded[slot.stream].row(static_cast<Eigen::Index>(b));
      }
    }
  }

  for (std::size_t l = 0; l < cfg.num_attn_layers; ++l) {
    tokens = attention_batch(model.params.layers[l], tokens, batch, n, cfg.num_heads, cfg.dropout_rate, train_mode,
                             rng, cache ? &cache->layers[l] : nullptr);
  }

  Mat pooled(static_cast<Eigen::Index>(batch), H);
  for (std::size_t b = 0; b < batch; ++b) {
    pooled.row(static_cast<Eigen::Index>(b)) =
        tokens.middleRows(static_cast<Eigen::Index>(b * n), static_cast<Eigen::Index>(n)).colwise().mean();
  }
  Mat logits = pooled * model.params.w_cls;
  logits.rowwise() += model.params.b_cls.row(0);
  if (cache) cache->pooled = std::move(pooled);
  return logits;
}

// ---------------------------------------------------------------------------
// Single-sample entry points

inline Eigen::RowVectorXd encode_stream(const FusionModel& model, const FeatureStream& stream, bool train_mode,
                                        Rng* rng) {
  auto pos = model.config.schema.find(stream.stream_name);
  if (!pos) throw Error(ErrorCode::SchemaMismatch, "stream " + stream.stream_name + " not in schema");
  const auto dim = static_cast<Eigen::Index>(stream.values.size());
  Mat x = Eigen::Map<const Eigen::RowVectorXd>(stream.values.data(), dim);
  return encode_batch(model, *pos, x, train_mode, rng, nullptr).row(0);
}

/// Token sequence (num_tokens x hidden) for one sample before the attention stack.
inline Mat assemble_tokens(const FusionModel& model, const Sample& sample, bool train_mode = false,
                           Rng* rng = nullptr) {
  check_conforms(sample, model.config.schema);
  const auto H = static_cast<Eigen::Index>(model.config.hidden_dim);
  Mat tokens(static_cast<Eigen::Index>(model.num_tokens()), H);
  for (std::size_t t = 0; t < model.plan.size(); ++t) {
    const auto& slot = model.plan[t];
    if (slot.is_modal_token) {
      tokens.row(static_cast<Eigen::Index>(t)) =
          model.params.modal_tokens[static_cast<std::size_t>(slot.modality)].row(0);
    } else {
      tokens.row(static_cast<Eigen::Index>(t)) = encode_stream(model, sample.streams[slot.stream], train_mode, rng);
    }
  }
  return tokens;
}

/// One self-attention layer on a single token sequence. `attention_out`, when given,
/// receives each head's attention matrix.
inline Mat self_attention_layer(const Mat& tokens, const AttentionParams& layer, std::size_t num_heads,
                                double dropout_rate, bool train_mode, Rng* rng,
                                std::vector<Mat>* attention_out = nullptr) {
  if (num_heads == 0 || layer.w_q.rows() % static_cast<Eigen::Index>(num_heads) != 0) {
    throw Error(ErrorCode::ShapeMismatch, "hidden dim not divisible by head count");
  }
  AttentionCache cache;
  Mat y = attention_batch(layer, tokens, 1, static_cast<std::size_t>(tokens.rows()), num_heads, dropout_rate,
                          train_mode, rng, attention_out ? &cache : nullptr);
  if (attention_out) *attention_out = std::move(cache.attn);
  return y;
}

/// Both attention layers applied to an assembled token sequence.
inline Mat attention_stack(const FusionModel& model, Mat tokens, bool train_mode = false, Rng* rng = nullptr) {
  for (const auto& layer : model.params.layers) {
    tokens = self_attention_layer(tokens, layer, model.config.num_heads, model.config.dropout_rate, train_mode, rng);
  }
  return tokens;
}

/// Mean-pool the output tokens and apply the classifier head.
inline Logits readout(const FusionModel& model, const Mat& tokens) {
  Eigen::RowVectorXd pooled = tokens.colwise().mean();
  Eigen::RowVectorXd z = pooled * model.params.w_cls + model.params.b_cls.row(0);
  Logits out{};
  for (std::size_t c = 0; c < kNumClasses; ++c) out[c] = z(static_cast<Eigen::Index>(c));
  return out;
}

inline Logits forward(const FusionModel& model, const Sample& sample, bool train_mode = false, Rng* rng = nullptr) {
  const Sample* one[] = {&sample};
  Mat z = forward_batch(model, one, train_mode, rng);
  Logits out{};
  for (std::size_t c = 0; c < kNumClasses; ++c) out[c] = z(0, static_cast<Eigen::Index>(c));
  return out;
}

inline std::array<double, kNumClasses> softmax(const Logits& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::array<double, kNumClasses> p{};
  double sum = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) sum += (p[c] = std::exp(logits[c] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

struct Prediction {
  EmotionLabel label;
  std::array<double, kNumClasses> probs;
};

/// Argmax with ties going to the lower class index.
inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline Prediction prediction_from_logits(const Logits& logits) {
  auto p = softmax(logits);
  return {label_from_index(argmax(p)), p};
}

inline Prediction predict(const FusionModel& model, const Sample& sample) {
  return prediction_from_logits(forward(model, sample, false, nullptr));
}

/// Eval-mode predictions for many samples, batched.
inline std::vector<Prediction> predict_all(const FusionModel& model, const std::vector<Sample>& samples,
                                           std::size_t batch_size = 64) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  std::vector<const Sample*> ptrs;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    ptrs.clear();
    for (std::size_t j = i; j < std::min(samples.size(), i + batch_size); ++j) ptrs.push_back(&samples[j]);
    Mat z = forward_batch(model, ptrs, false, nullptr);
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      Logits l{};
      for (std::size_t c = 0; c < kNumClasses; ++c) l[c] = z(r, static_cast<Eigen::Index>(c));
      out.push_back(prediction_from_logits(l));
    }
  }
  return out;
}

/// Human-readable list of forward-pass stages, derived from the same token plan and
/// flags the forward pass uses. Ablation tests diff these.
inline std::vector<std::string> forward_graph(const ModelConfig& config) {
  std::vector<std::string> g;
  if (config.enable_norm) g.push_back("standardize");
  for (const auto& spec : config.schema.entries()) {
    g.push_back("encoder[" + spec.name + "].affine");
    if (config.enable_residual_mlp) g.push_back("encoder[" + spec.name + "].residual_mlp");
  }
  for (const auto& slot : token_plan(config)) {
    if (slot.is_modal_token) {
      g.push_back("token:modal[" + std::string(to_string(slot.modality)) + "]");
    } else {
      g.push_back("token:stream[" + config.schema[slot.stream].name + "]");
    }
  }
  for (std::size_t l = 0; l < config.num_attn_layers; ++l) g.push_back("self_attention[" + std::to_string(l) + "]");
  g.push_back("mean_pool");
  g.push_back("classifier");
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

inline json checkpoint_to_json(const FusionModel& model) {
  json params = json::object();
  for_each_param(model.config.schema, model.params, [&](const std::string& name, const Mat& m) {
    params[name] = {{"shape", {m.rows(), m.cols()}},
                    {"values", std::vector<double>(m.data(), m.data() + m.size())}};
  });
  return {{"format", "ecmf-checkpoint"},
          {"version", kCheckpointVersion},
          {"config", to_json(model.config)},
          {"parameters", std::move(params)}};
}

inline FusionModel checkpoint_from_json(const json& j) {
  try {
    if (j.at("format") != "ecmf-checkpoint" || j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::ParseFailure, "unsupported checkpoint format/version");
    }
    FusionModel model = init_model(model_config_from_json(j.at("config")));
    const auto& params = j.at("parameters");
    std::size_t seen = 0;
    for_each_param(model.config.schema, model.params, [&](const std::string& name, Mat& m) {
      if (!params.contains(name)) throw Error(ErrorCode::ParseFailure, "checkpoint lacks parameter " + name);
      const auto& entry = params.at(name);
      auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter " + name + " has wrong shape");
      }
      auto values = entry.at("values").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(values.size()) != m.size()) {
        throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter " + name + " has wrong value count");
      }
      std::copy(values.begin(), values.end(), m.data());
      ++seen;
    });
    if (seen != params.size()) throw Error(ErrorCode::ParseFailure, "checkpoint has unexpected parameters");
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseFailure, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace ecmf
