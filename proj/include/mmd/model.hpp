#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mmd/batch.hpp"
#include "mmd/common.hpp"
#include "mmd/tape.hpp"
#include "mmd/tensor.hpp"

namespace mmd {

struct ModelConfig {
  i64 n_layers = 2;
  i64 hidden = 64;
  i64 n_heads = 4;
  i64 vocab_size = 0;
  i64 max_positions = 256;
  i64 d_v = 16;
  i64 d_a = 8;
  double dropout_rate = 0.1;

  i64 feature_dim() const { return 2 * d_v + d_a; }
  i64 head_dim() const { return hidden / n_heads; }

  void validate() const {
    if (n_layers < 1 || hidden < 1 || n_heads < 1 || vocab_size < 1)
      raise(ErrorKind::Config, "model config has non-positive sizes");
    if (max_positions < 1)
      raise(ErrorKind::Config, "max_positions must be positive");
    if (hidden % n_heads != 0)
      raise(ErrorKind::Config,
            strprintf("hidden %lld not divisible by n_heads %lld",
                      static_cast<long long>(hidden),
                      static_cast<long long>(n_heads)));
    if (d_v < 1 || d_a < 0)
      raise(ErrorKind::Config, "feature dims must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      raise(ErrorKind::Config, "dropout_rate must be in [0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct ModelParams {
  ModelConfig config;

  Tensor<T> we;  // [V x H], tied LM head
  Tensor<T> pe;  // [max_positions x H]
  Tensor<T> ve_w, ve_b;  // video embedder [F x H], [H]
  struct Layer {
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
  Tensor<T> lnf_g, lnf_b;
  Tensor<T> reg_w, reg_b;  // regression head [H x F], [F]

  std::vector<std::pair<std::string, Tensor<T>>> named;

  Tensor<T>& get(const std::string& name) {
    for (auto& [n, t] : named)
      if (n == name) return t;
    raise(ErrorKind::Index, "no parameter named " + name);
  }

  i64 total_params() const {
    i64 n = 0;
    for (const auto& [name, t] : named) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : named) t.zero_grad();
  }

  bool all_params_finite() const {
    for (const auto& [name, t] : named)
      if (!all_finite(t)) return false;
    return true;
  }
};

namespace detail {

constexpr std::uint64_t kStreamInit = 0x494e4954;

template <typename T>
Tensor<T> make_param(ModelParams<T>& p, const std::string& name, Shape shape,
                     int kind /*0 normal, 1 zero, 2 one*/, Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
  if (kind == 0) {
    for (i64 i = 0; i < t.numel(); ++i)
      t.at(i) = static_cast<T>(0.02 * rng.normal());
  } else if (kind == 2) {
    for (i64 i = 0; i < t.numel(); ++i) t.at(i) = T(1);
  }
  p.named.emplace_back(name, t);
  return t;
}

}  // namespace detail

// GPT-2-style initialization: weights ~ N(0, 0.02^2), biases zero,
// layer-norm gains one. Deterministic in the seed.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed_stream(seed, detail::kStreamInit));
  ModelParams<T> p;
  p.config = config;
  const i64 h = config.hidden, f = config.feature_dim();
  p.we = detail::make_param(p, "we", {config.vocab_size, h}, 0, rng);
  p.pe = detail::make_param(p, "pe", {config.max_positions, h}, 0, rng);
  p.ve_w = detail::make_param(p, "ve.w", {f, h}, 0, rng);
  p.ve_b = detail::make_param(p, "ve.b", {h}, 1, rng);
  for (i64 l = 0; l < config.n_layers; ++l) {
    std::string pre = "h" + std::to_string(l) + ".";
    typename ModelParams<T>::Layer layer;
    layer.ln1_g = detail::make_param(p, pre + "ln1.g", {h}, 2, rng);
    layer.ln1_b = detail::make_param(p, pre + "ln1.b", {h}, 1, rng);
    layer.wq = detail::make_param(p, pre + "attn.wq", {h, h}, 0, rng);
    layer.bq = detail::make_param(p, pre + "attn.bq", {h}, 1, rng);
    layer.wk = detail::make_param(p, pre + "attn.wk", {h, h}, 0, rng);
    layer.bk = detail::make_param(p, pre + "attn.bk", {h}, 1, rng);
    layer.wv = detail::make_param(p, pre + "attn.wv", {h, h}, 0, rng);
    layer.bv = detail::make_param(p, pre + "attn.bv", {h}, 1, rng);
    layer.wo = detail::make_param(p, pre + "attn.wo", {h, h}, 0, rng);
    layer.bo = detail::make_param(p, pre + "attn.bo", {h}, 1, rng);
    layer.ln2_g = detail::make_param(p, pre + "ln2.g", {h}, 2, rng);
    layer.ln2_b = detail::make_param(p, pre + "ln2.b", {h}, 1, rng);
    layer.w1 = detail::make_param(p, pre + "mlp.w1", {h, 4 * h}, 0, rng);
    layer.b1 = detail::make_param(p, pre + "mlp.b1", {4 * h}, 1, rng);
    layer.w2 = detail::make_param(p, pre + "mlp.w2", {4 * h, h}, 0, rng);
    layer.b2 = detail::make_param(p, pre + "mlp.b2", {h}, 1, rng);
    p.layers.push_back(std::move(layer));
  }
  p.lnf_g = detail::make_param(p, "ln_f.g", {h}, 2, rng);
  p.lnf_b = detail::make_param(p, "ln_f.b", {h}, 1, rng);
  p.reg_w = detail::make_param(p, "reg.w", {h, f}, 0, rng);
  p.reg_b = detail::make_param(p, "reg.b", {f}, 1, rng);
  return p;
}

enum class RunMode { Train, Eval };

template <typename T>
struct ForwardResult {
  Tensor<T> lm_logits;      // [L x V]
  Tensor<T> feature_preds;  // [L x F], consumers select the video positions
};

// per (layer*heads + head) row-major L x L attention rows, eval probe
template <typename T>
struct AttentionCapture {
  std::vector<std::vector<T>> probs;
};

// WE + PE + SE for text slots, VideoEmbedder + PE + SE[video] for feature
// slots. One global position index across the assembled sequence.
template <typename T>
Tensor<T> embed_inputs(Tape<T>& tape, const SequenceBatch& batch,
                       ModelParams<T>& params) {
  const i64 length = batch.length();
  if (length < 1) raise(ErrorKind::Shape, "empty batch");
  if (length > params.config.max_positions)
    raise(ErrorKind::Shape,
          strprintf("sequence of %lld exceeds max_positions %lld",
                    static_cast<long long>(length),
                    static_cast<long long>(params.config.max_positions)));

  // maximal runs of same-kind slots
  std::vector<Tensor<T>> parts;
  const i64 f = params.config.feature_dim();
  std::size_t i = 0;
  while (i < batch.layout.size()) {
    std::size_t j = i;
    bool feat = batch.layout[i].is_feature;
    while (j < batch.layout.size() && batch.layout[j].is_feature == feat) ++j;
    if (feat) {
      if (batch.feature_dim != f)
        raise(ErrorKind::Shape,
              strprintf("batch feature dim %lld does not match config %lld",
                        static_cast<long long>(batch.feature_dim),
                        static_cast<long long>(f)));
      i64 rows = static_cast<i64>(j - i);
      std::vector<T> x(static_cast<std::size_t>(rows * f));
      for (i64 r = 0; r < rows; ++r) {
        const float* src = batch.feature_row(batch.layout[i + r].feature_row);
        for (i64 c = 0; c < f; ++c)
          x[static_cast<std::size_t>(r * f + c)] = static_cast<T>(src[c]);
      }
      Tensor<T> rows_t = Tensor<T>::from_data({rows, f}, std::move(x));
      parts.push_back(
          tape.add_bias(tape.matmul(rows_t, params.ve_w), params.ve_b));
    } else {
      std::vector<TokenId> ids;
      ids.reserve(j - i);
      for (std::size_t r = i; r < j; ++r) ids.push_back(batch.layout[r].token);
      parts.push_back(tape.embedding(params.we, std::move(ids)));
    }
    i = j;
  }
  Tensor<T> content =
      parts.size() == 1 ? parts[0] : tape.concat_rows(std::move(parts));

  Tensor<T> pos = tape.slice_rows(params.pe, 0, length);
  std::vector<TokenId> seg_ids;
  seg_ids.reserve(batch.layout.size());
  for (const auto& s : batch.layout) seg_ids.push_back(s.segment);
  Tensor<T> seg = tape.embedding(params.we, std::move(seg_ids));
  return tape.add(tape.add(content, pos), seg);
}

// Causal decoder stack (pre-layer-norm blocks), tied LM head over the final
// hidden states and the feature-regression head over the same states.
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const SequenceBatch& batch,
                         ModelParams<T>& params, RunMode mode,
                         Rng* dropout_rng = nullptr,
                         AttentionCapture<T>* capture = nullptr) {
  const ModelConfig& cfg = params.config;
  const bool train = mode == RunMode::Train;
  const double rate = train ? cfg.dropout_rate : 0.0;
  if (train && rate > 0.0 && dropout_rng == nullptr)
    raise(ErrorKind::Usage, "train-mode forward needs a dropout rng");

  const i64 length = batch.length();
  const i64 dh = cfg.head_dim();
  std::vector<i64> causal(length);
  for (i64 r = 0; r < length; ++r) causal[r] = r + 1;

  Tensor<T> x = embed_inputs(tape, batch, params);
  if (rate > 0.0) x = tape.dropout(x, rate, *dropout_rng);

  for (i64 l = 0; l < cfg.n_layers; ++l) {
    auto& ly = params.layers[l];
    Tensor<T> h =
        tape.layer_norm(x, ly.ln1_g, ly.ln1_b, static_cast<T>(kLayerNormEps));
    Tensor<T> q = tape.add_bias(tape.matmul(h, ly.wq), ly.bq);
    Tensor<T> k = tape.add_bias(tape.matmul(h, ly.wk), ly.bk);
    Tensor<T> v = tape.add_bias(tape.matmul(h, ly.wv), ly.bv);
    std::vector<Tensor<T>> heads;
    heads.reserve(cfg.n_heads);
    for (i64 hd = 0; hd < cfg.n_heads; ++hd) {
      Tensor<T> qh = tape.slice_cols(q, hd * dh, (hd + 1) * dh);
      Tensor<T> kh = tape.slice_cols(k, hd * dh, (hd + 1) * dh);
      Tensor<T> vh = tape.slice_cols(v, hd * dh, (hd + 1) * dh);
      Tensor<T> scores = tape.scale(tape.matmul(qh, tape.transpose(kh)),
                                    static_cast<T>(1.0 / std::sqrt(double(dh))));
      Tensor<T> probs = tape.softmax(scores, causal);
      if (capture) capture->probs.push_back(probs.values());
      heads.push_back(tape.matmul(probs, vh));
    }
    Tensor<T> ctx = cfg.n_heads == 1 ? heads[0]
                                     : tape.concat_cols(std::move(heads));
    Tensor<T> attn = tape.add_bias(tape.matmul(ctx, ly.wo), ly.bo);
    if (rate > 0.0) attn = tape.dropout(attn, rate, *dropout_rng);
    x = tape.add(x, attn);

    Tensor<T> h2 =
        tape.layer_norm(x, ly.ln2_g, ly.ln2_b, static_cast<T>(kLayerNormEps));
    Tensor<T> u = tape.gelu(tape.add_bias(tape.matmul(h2, ly.w1), ly.b1));
    Tensor<T> ff = tape.add_bias(tape.matmul(u, ly.w2), ly.b2);
    if (rate > 0.0) ff = tape.dropout(ff, rate, *dropout_rng);
    x = tape.add(x, ff);

    if (!all_finite(x))
      raise(ErrorKind::Numerical,
            strprintf("non-finite activation after layer %lld",
                      static_cast<long long>(l)));
  }

  Tensor<T> final_h =
      tape.layer_norm(x, params.lnf_g, params.lnf_b,
                      static_cast<T>(kLayerNormEps));
  ForwardResult<T> out;
  out.lm_logits = tape.matmul(final_h, tape.transpose(params.we));
  out.feature_preds =
      tape.add_bias(tape.matmul(final_h, params.reg_w), params.reg_b);
  return out;
}

}  // namespace mmd
