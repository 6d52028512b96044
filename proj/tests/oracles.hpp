// Independent reference computations used only by the tests. Nothing here shares
// code with the library's Eigen paths: every oracle is a plain loop over std::vector.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "ecmf/fusion_net.hpp"
#include "ecmf/labels.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

inline Rows to_rows(const ecmf::Mat& m) {
  Rows r(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  }
  return r;
}

/// y = x W + b for a row vector x.
inline Vec dense(const Vec& x, const ecmf::Mat& w, const ecmf::Mat& b) {
  Vec y(static_cast<std::size_t>(w.cols()), 0.0);
  for (std::size_t j = 0; j < y.size(); ++j) {
    double acc = b(0, static_cast<Eigen::Index>(j));
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    y[j] = acc;
  }
  return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Vec encode(const ecmf::EncoderParams& e, const Vec& x) {
  Vec h = dense(x, e.w_in, e.b_in);
  if (e.w_mid.size() == 0) return h;
  Vec u = dense(h, e.w_mid, e.b_mid);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] += gelu(u[i]);
  return h;
}

/// Eval-mode attention layer; `attn_out` receives per-head attention matrices.
inline Rows attention(const ecmf::AttentionParams& a, const Rows& x, std::size_t heads,
                      std::vector<Rows>* attn_out = nullptr) {
  const std::size_t n = x.size();
  const std::size_t H = x[0].size();
  const std::size_t dh = H / heads;
  Rows q(n), k(n), v(n);
  for (std::size_t t = 0; t < n; ++t) {
    q[t] = dense(x[t], a.w_q, a.b_q);
    k[t] = dense(x[t], a.w_k, a.b_k);
    v[t] = dense(x[t], a.w_v, a.b_v);
  }
  Rows o(n, Vec(H, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    Rows A(n, Vec(n));
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
        A[i][j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, A[i][j]);
      }
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) sum += (A[i][j] = std::exp(A[i][j] - mx));
      for (std::size_t j = 0; j < n; ++j) A[i][j] /= sum;
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += A[i][j] * v[j][h * dh + c];
        o[i][h * dh + c] = acc;
      }
    }
    if (attn_out) attn_out->push_back(A);
  }
  Rows y(n);
  for (std::size_t t = 0; t < n; ++t) {
    Vec z = dense(o[t], a.w_o, a.b_o);
    Vec r(H);
    double mu = 0;
    for (std::size_t c = 0; c < H; ++c) mu += (r[c] = x[t][c] + z[c]);
    mu /= static_cast<double>(H);
    double var = 0;
    for (std::size_t c = 0; c < H; ++c) var += (r[c] - mu) * (r[c] - mu);
    var /= static_cast<double>(H);
    y[t].resize(H);
    for (std::size_t c = 0; c < H; ++c) {
      y[t][c] = (r[c] - mu) / std::sqrt(var + 1e-5) * a.ln_gain(0, static_cast<Eigen::Index>(c)) +
                a.ln_bias(0, static_cast<Eigen::Index>(c));
    }
  }
  return y;
}

/// Eval-mode forward pass written step by step from the architecture description.
inline std::array<double, ecmf::kNumClasses> forward(const ecmf::FusionModel& m, const ecmf::Sample& s) {
  Rows tokens;
  for (ecmf::Modality mod : ecmf::kAllModalities) {
    auto streams = m.config.schema.streams_of(mod);
    if (streams.empty()) continue;
    if (m.config.enable_modal_token) tokens.push_back(to_rows(m.params.modal_tokens[static_cast<std::size_t>(mod)])[0]);
    for (std::size_t st : streams) tokens.push_back(encode(m.params.encoders[st], s.streams[st].values));
  }
  for (const auto& layer : m.params.layers) tokens = attention(layer, tokens, m.config.num_heads);
  Vec pooled(tokens[0].size(), 0.0);
  for (const auto& t : tokens) {
    for (std::size_t c = 0; c < pooled.size(); ++c) pooled[c] += t[c] / static_cast<double>(tokens.size());
  }
  Vec z = dense(pooled, m.params.w_cls, m.params.b_cls);
  std::array<double, ecmf::kNumClasses> out{};
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = z[c];
  return out;
}

/// Softmax first, then log: the textbook route, no log-sum-exp.
inline double cross_entropy(const std::array<double, ecmf::kNumClasses>& z, std::size_t gold) {
  double sum = 0;
  for (double v : z) sum += std::exp(v);
  return -std::log(std::exp(z[gold]) / sum);
}

/// WAF from per-class TP/FP/FN counted directly over the pairs.
inline double waf(const std::vector<ecmf::EmotionLabel>& golds, const std::vector<ecmf::EmotionLabel>& preds) {
  double num = 0;
  double den = 0;
  for (std::size_t c = 0; c < ecmf::kNumClasses; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      const bool g = ecmf::index_of(golds[i]) == c;
      const bool p = ecmf::index_of(preds[i]) == c;
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
    }
    const double support = tp + fn;
    if (support == 0) continue;
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0;
    const double rec = tp / support;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
    num += support * f1;
    den += support;
  }
  return num / den;
}

/// Central finite difference of `loss` w.r.t. one scalar.
inline double central_difference(double& x, double step, const std::function<double()>& loss) {
  const double saved = x;
  x = saved + step;
  const double up = loss();
  x = saved - step;
  const double down = loss();
  x = saved;
  return (up - down) / (2.0 * step);
}

}  // namespace oracle
