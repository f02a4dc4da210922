#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmd/model.hpp"
#include "mmd/synthetic.hpp"
#include "mmd/trainer.hpp"
#include "testutil.hpp"

using namespace mmd;

namespace {

struct TinyWorld {
  Vocab vocab;
  std::vector<DialogueSample> samples;
  ModelConfig config;
  AssemblyOptions opts;
};

TinyWorld make_world(i64 layers = 2, i64 hidden = 16, i64 heads = 2) {
  SyntheticSpec spec;
  spec.n_dialogues = 6;
  spec.turns_per_dialogue = 4;
  spec.feature_t = 3;
  spec.d_v = 5;
  spec.d_a = 2;  // feature_dim 12
  spec.seed = 5;
  auto data = generate_synthetic(spec);
  TinyWorld w;
  std::vector<std::string> corpus;
  for (const auto& s : data.samples) {
    corpus.push_back(join_tokens(s.caption));
    for (const auto& t : s.turns) {
      corpus.push_back(join_tokens(t.question));
      corpus.push_back(join_tokens(t.response));
    }
  }
  w.vocab = build_vocab(corpus, 1);
  w.samples = data.samples;
  w.config.n_layers = layers;
  w.config.hidden = hidden;
  w.config.n_heads = heads;
  w.config.vocab_size = w.vocab.size();
  w.config.max_positions = 96;
  w.config.d_v = 5;
  w.config.d_a = 2;
  w.config.dropout_rate = 0.1;
  w.opts.max_history = 3;
  w.opts.max_positions = w.config.max_positions;
  return w;
}

// Straight-line double-precision reimplementation of the forward math,
// independent of the tape/kernels path.
struct RefOut {
  std::vector<double> logits;
  std::vector<double> preds;
};

double ref_gelu(double x) {
  double u = std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

std::vector<double> ref_layer_norm(const std::vector<double>& x, i64 rows,
                                   i64 cols, const Tensor<double>& g,
                                   const Tensor<double>& b) {
  std::vector<double> y(x.size());
  for (i64 r = 0; r < rows; ++r) {
    double mu = 0;
    for (i64 j = 0; j < cols; ++j) mu += x[r * cols + j];
    mu /= cols;
    double var = 0;
    for (i64 j = 0; j < cols; ++j) {
      double d = x[r * cols + j] - mu;
      var += d * d;
    }
    var /= cols;
    double rs = 1.0 / std::sqrt(var + 1e-5);
    for (i64 j = 0; j < cols; ++j)
      y[r * cols + j] = (x[r * cols + j] - mu) * rs * g.at(j) + b.at(j);
  }
  return y;
}

RefOut reference_forward(ModelParams<double>& P, const SequenceBatch& batch) {
  const auto& cfg = P.config;
  const i64 L = batch.length(), H = cfg.hidden, F = cfg.feature_dim();
  std::vector<double> x(L * H);
  for (i64 p = 0; p < L; ++p) {
    const Slot& slot = batch.layout[p];
    for (i64 j = 0; j < H; ++j) {
      double content;
      if (slot.is_feature) {
        content = P.ve_b.at(j);
        const float* row = batch.feature_row(slot.feature_row);
        for (i64 c = 0; c < F; ++c) content += double(row[c]) * P.ve_w.at(c, j);
      } else {
        content = P.we.at(slot.token, j);
      }
      x[p * H + j] = content + P.pe.at(p, j) + P.we.at(slot.segment, j);
    }
  }

  const i64 nh = cfg.n_heads, dh = cfg.head_dim();
  for (i64 l = 0; l < cfg.n_layers; ++l) {
    auto& ly = P.layers[l];
    auto h = ref_layer_norm(x, L, H, ly.ln1_g, ly.ln1_b);
    std::vector<double> q(L * H), k(L * H), v(L * H);
    for (i64 p = 0; p < L; ++p)
      for (i64 j = 0; j < H; ++j) {
        double sq = ly.bq.at(j), sk = ly.bk.at(j), sv = ly.bv.at(j);
        for (i64 c = 0; c < H; ++c) {
          sq += h[p * H + c] * ly.wq.at(c, j);
          sk += h[p * H + c] * ly.wk.at(c, j);
          sv += h[p * H + c] * ly.wv.at(c, j);
        }
        q[p * H + j] = sq;
        k[p * H + j] = sk;
        v[p * H + j] = sv;
      }
    std::vector<double> ctx(L * H, 0.0);
    for (i64 hd = 0; hd < nh; ++hd) {
      for (i64 p = 0; p < L; ++p) {
        std::vector<double> scores(p + 1);
        for (i64 t = 0; t <= p; ++t) {
          double s = 0;
          for (i64 j = 0; j < dh; ++j)
            s += q[p * H + hd * dh + j] * k[t * H + hd * dh + j];
          scores[t] = s / std::sqrt(double(dh));
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double sum = 0;
        for (auto& s : scores) {
          s = std::exp(s - mx);
          sum += s;
        }
        for (auto& s : scores) s /= sum;
        for (i64 j = 0; j < dh; ++j) {
          double acc = 0;
          for (i64 t = 0; t <= p; ++t)
            acc += scores[t] * v[t * H + hd * dh + j];
          ctx[p * H + hd * dh + j] = acc;
        }
      }
    }
    for (i64 p = 0; p < L; ++p)
      for (i64 j = 0; j < H; ++j) {
        double s = ly.bo.at(j);
        for (i64 c = 0; c < H; ++c) s += ctx[p * H + c] * ly.wo.at(c, j);
        x[p * H + j] += s;
      }

    auto h2 = ref_layer_norm(x, L, H, ly.ln2_g, ly.ln2_b);
    for (i64 p = 0; p < L; ++p) {
      std::vector<double> inner(4 * H);
      for (i64 j = 0; j < 4 * H; ++j) {
        double s = ly.b1.at(j);
        for (i64 c = 0; c < H; ++c) s += h2[p * H + c] * ly.w1.at(c, j);
        inner[j] = ref_gelu(s);
      }
      for (i64 j = 0; j < H; ++j) {
        double s = ly.b2.at(j);
        for (i64 c = 0; c < 4 * H; ++c) s += inner[c] * ly.w2.at(c, j);
        x[p * H + j] += s;
      }
    }
  }

  auto final_h = ref_layer_norm(x, L, H, P.lnf_g, P.lnf_b);
  RefOut out;
  out.logits.resize(L * cfg.vocab_size);
  out.preds.resize(L * F);
  for (i64 p = 0; p < L; ++p) {
    for (i64 t = 0; t < cfg.vocab_size; ++t) {
      double s = 0;
      for (i64 j = 0; j < H; ++j) s += final_h[p * H + j] * P.we.at(t, j);
      out.logits[p * cfg.vocab_size + t] = s;
    }
    for (i64 c = 0; c < F; ++c) {
      double s = P.reg_b.at(c);
      for (i64 j = 0; j < H; ++j) s += final_h[p * H + j] * P.reg_w.at(j, c);
      out.preds[p * F + c] = s;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("init is deterministic per seed and varies across seeds") {
  auto w = make_world();
  auto a = init_params<double>(w.config, 7);
  auto b = init_params<double>(w.config, 7);
  auto c = init_params<double>(w.config, 8);
  REQUIRE(a.named.size() == b.named.size());
  bool all_same_ab = true, any_diff_ac = false;
  for (std::size_t i = 0; i < a.named.size(); ++i) {
    all_same_ab &= a.named[i].second.values() == b.named[i].second.values();
    any_diff_ac |= a.named[i].second.values() != c.named[i].second.values();
  }
  CHECK(all_same_ab);
  CHECK(any_diff_ac);
}

TEST_CASE("parameter count matches the closed-form formula") {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden = 16;
  cfg.n_heads = 2;
  cfg.vocab_size = 50;
  cfg.max_positions = 64;
  cfg.d_v = 5;
  cfg.d_a = 2;  // feature_dim 12
  auto params = init_params<float>(cfg, 1);
  i64 h = cfg.hidden, f = cfg.feature_dim();
  i64 expected = cfg.vocab_size * h            // WE
                 + cfg.max_positions * h       // PE
                 + f * h + h                   // video embedder
                 + cfg.n_layers * (12 * h * h + 13 * h)
                 + 2 * h                       // final layer norm
                 + h * f + f;                  // regression head
  CHECK(params.total_params() == expected);
}

TEST_CASE("config validation errors") {
  ModelConfig cfg;
  cfg.vocab_size = 10;
  cfg.hidden = 10;
  cfg.n_heads = 4;  // 10 % 4 != 0
  CHECK_THROWS_AS(init_params<float>(cfg, 1), Error);
  cfg.n_heads = 2;
  cfg.max_positions = 0;
  CHECK_THROWS_AS(init_params<float>(cfg, 1), Error);
}

TEST_CASE("zero features with zero embedder bias reduce to PE + SE") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 3);
  for (auto& v : params.ve_b.values()) v = 0.0;

  SequenceBatch batch;
  batch.task = TaskTag::VASM;
  batch.feature_dim = w.config.feature_dim();
  for (int r = 0; r < 2; ++r) {
    Slot s;
    s.is_feature = true;
    s.segment = Vocab::kVideoSeg;
    s.feature_row = r;
    batch.layout.push_back(s);
    for (i64 j = 0; j < batch.feature_dim; ++j)
      batch.feature_rows.push_back(0.0f);
    ++batch.n_feature_rows;
  }
  batch.lm_targets.assign(2, -1);
  batch.lm_mask.assign(2, false);
  batch.feature_targets.assign(2, -1);
  batch.feature_mask.assign(2, false);

  Tape<double> tape;
  auto emb = embed_inputs(tape, batch, params);
  for (i64 p = 0; p < 2; ++p)
    for (i64 j = 0; j < w.config.hidden; ++j)
      CHECK(emb.at(p, j) ==
            doctest::Approx(params.pe.at(p, j) +
                            params.we.at(Vocab::kVideoSeg, j))
                .epsilon(1e-12));
}

TEST_CASE("swapping two text positions moves only the PE contribution") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 3);
  auto batch = assemble_rlm(w.samples[0], 2, w.opts, w.vocab);
  // pick two text positions inside the history block and swap their slots
  i64 a = -1, b = -1;
  for (i64 p = 0; p < batch.length() && b < 0; ++p) {
    if (batch.layout[p].is_feature) continue;
    if (a < 0)
      a = p;
    else if (batch.layout[p].token != batch.layout[a].token)
      b = p;
  }
  REQUIRE(b > a);
  SequenceBatch swapped = batch;
  std::swap(swapped.layout[a], swapped.layout[b]);

  Tape<double> tape;
  auto e1 = embed_inputs(tape, batch, params);
  auto e2 = embed_inputs(tape, swapped, params);
  const i64 h = w.config.hidden;
  for (i64 j = 0; j < h; ++j) {
    // row a now holds b's content: differs from e1 row b by PE[a] - PE[b]
    CHECK(e2.at(a, j) - e1.at(b, j) ==
          doctest::Approx(params.pe.at(a, j) - params.pe.at(b, j))
              .epsilon(1e-9));
    CHECK(e2.at(b, j) - e1.at(a, j) ==
          doctest::Approx(params.pe.at(b, j) - params.pe.at(a, j))
              .epsilon(1e-9));
  }
  // all other rows bit-identical
  for (i64 p = 0; p < batch.length(); ++p) {
    if (p == a || p == b) continue;
    for (i64 j = 0; j < h; ++j) CHECK(e1.at(p, j) == e2.at(p, j));
  }
}

TEST_CASE("segment swap shifts the embedding by the SE row difference") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 3);
  auto batch = assemble_rlm(w.samples[0], 1, w.opts, w.vocab);
  i64 pos = -1;
  for (i64 p = 0; p < batch.length(); ++p)
    if (batch.layout[p].segment == Vocab::kUser1Seg) pos = p;
  REQUIRE(pos >= 0);
  SequenceBatch flipped = batch;
  flipped.layout[pos].segment = Vocab::kUser2Seg;

  Tape<double> tape;
  auto e1 = embed_inputs(tape, batch, params);
  auto e2 = embed_inputs(tape, flipped, params);
  for (i64 j = 0; j < w.config.hidden; ++j)
    CHECK(e2.at(pos, j) - e1.at(pos, j) ==
          doctest::Approx(params.we.at(Vocab::kUser2Seg, j) -
                          params.we.at(Vocab::kUser1Seg, j))
              .epsilon(1e-12));
}

TEST_CASE("feature slots project into the hidden width") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 4);
  auto batch = assemble_vasm(w.samples[0], w.opts, w.vocab);
  REQUIRE(batch.has_value());
  Tape<double> tape;
  auto emb = embed_inputs(tape, *batch, params);
  CHECK(emb.shape() == Shape{batch->length(), w.config.hidden});
}

TEST_CASE("embedding rejects sequences beyond max_positions") {
  auto w = make_world();
  w.config.max_positions = 8;
  auto params = init_params<double>(w.config, 3);
  auto batch = assemble_rlm(w.samples[0], 1,
                            AssemblyOptions{3, true, true, 256}, w.vocab);
  Tape<double> tape;
  CHECK_THROWS_WITH_AS(embed_inputs(tape, batch, params),
                       doctest::Contains("max_positions"), Error);
}

TEST_CASE("single-position batch keeps declared output shapes") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 3);
  SequenceBatch batch;
  batch.task = TaskTag::RLM;
  Slot s;
  s.token = Vocab::kBos;
  s.segment = Vocab::kUser1Seg;
  batch.layout.push_back(s);
  batch.lm_targets.assign(1, -1);
  batch.lm_mask.assign(1, false);
  batch.feature_targets.assign(1, -1);
  batch.feature_mask.assign(1, false);
  Tape<double> tape;
  auto out = forward(tape, batch, params, RunMode::Eval);
  CHECK(out.lm_logits.shape() == Shape{1, w.config.vocab_size});
  CHECK(out.feature_preds.shape() == Shape{1, w.config.feature_dim()});
}

TEST_CASE("causality: suffix perturbations leave prefix logits bit-identical") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 9);
  auto batch = assemble_rlm(w.samples[1], 2, w.opts, w.vocab);
  const i64 L = batch.length();
  // perturb the final third of the sequence
  i64 cut = 2 * L / 3;
  SequenceBatch other = batch;
  for (i64 p = cut; p < L; ++p) {
    if (other.layout[p].is_feature) continue;
    other.layout[p].token =
        (other.layout[p].token + 1) % w.config.vocab_size;
  }
  Tape<double> tape;
  auto o1 = forward(tape, batch, params, RunMode::Eval);
  auto o2 = forward(tape, other, params, RunMode::Eval);
  const i64 v = w.config.vocab_size;
  for (i64 p = 0; p < cut; ++p)
    for (i64 j = 0; j < v; ++j)
      CHECK(o1.lm_logits.at(p, j) == o2.lm_logits.at(p, j));
}

TEST_CASE("eval forward is a pure function of batch and params") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 13);
  auto batch = assemble_rlm(w.samples[2], 1, w.opts, w.vocab);
  Tape<double> tape;
  auto a = forward(tape, batch, params, RunMode::Eval);
  auto b = forward(tape, batch, params, RunMode::Eval);
  CHECK(a.lm_logits.values() == b.lm_logits.values());
  CHECK(a.feature_preds.values() == b.feature_preds.values());
}

TEST_CASE("forward matches an independent straight-line reimplementation") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 21);
  for (int which = 0; which < 3; ++which) {
    SequenceBatch batch;
    if (which == 0)
      batch = assemble_rlm(w.samples[0], 3, w.opts, w.vocab);
    else if (which == 1)
      batch = *assemble_vasm(w.samples[1], w.opts, w.vocab);
    else
      batch = *assemble_clm(w.samples[2], w.opts, w.vocab);
    Tape<double> tape;
    auto out = forward(tape, batch, params, RunMode::Eval);
    auto ref = reference_forward(params, batch);
    double worst = 0;
    for (i64 i = 0; i < out.lm_logits.numel(); ++i)
      worst = std::max(worst,
                       std::abs(out.lm_logits.at(i) - ref.logits[i]));
    for (i64 i = 0; i < out.feature_preds.numel(); ++i)
      worst = std::max(worst,
                       std::abs(out.feature_preds.at(i) - ref.preds[i]));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("attention rows are distributions over the unmasked prefix") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 31);
  auto batch = assemble_rlm(w.samples[3], 2, w.opts, w.vocab);
  Tape<double> tape;
  AttentionCapture<double> capture;
  forward(tape, batch, params, RunMode::Eval, nullptr, &capture);
  const i64 L = batch.length();
  REQUIRE(capture.probs.size() ==
          static_cast<std::size_t>(w.config.n_layers * w.config.n_heads));
  for (const auto& mat : capture.probs) {
    for (i64 r = 0; r < L; ++r) {
      double sum = 0;
      for (i64 c = 0; c < L; ++c) {
        if (c <= r)
          sum += mat[r * L + c];
        else
          CHECK(mat[r * L + c] == 0.0);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("train mode requires a dropout rng and perturbs outputs") {
  auto w = make_world();
  auto params = init_params<double>(w.config, 17);
  auto batch = assemble_rlm(w.samples[4], 1, w.opts, w.vocab);
  Tape<double> tape;
  CHECK_THROWS_AS(forward(tape, batch, params, RunMode::Train), Error);
  Rng rng(4);
  auto dropped = forward(tape, batch, params, RunMode::Train, &rng);
  auto clean = forward(tape, batch, params, RunMode::Eval);
  CHECK(dropped.lm_logits.values() != clean.lm_logits.values());
}

TEST_CASE("full-model gradients match central differences at 64-bit") {
  auto w = make_world(1, 8, 2);  // keep the FD sweep small
  w.config.max_positions = 48;
  auto params = init_params<double>(w.config, 2);
  auto batch = assemble_rlm(w.samples[0], 1, w.opts, w.vocab);
  auto build = [&](Tape<double>& t) {
    auto out = forward(t, batch, params, RunMode::Eval);
    return rlm_loss(t, out.lm_logits, batch);
  };
  auto report =
      testutil::check_tape_gradients_full<double>(build, params.named, 1e-4);
  // tensor-scale normalization; the raw per-coordinate measure bottoms out
  // at FD quantization noise (~ulp(loss)/2eps) against its 1e-8 floor
  CHECK(report.worst_scaled < 1e-4);
  CHECK(report.worst < 1e-2);
}
