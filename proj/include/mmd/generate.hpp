#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mmd/batch.hpp"
#include "mmd/model.hpp"

namespace mmd {

struct DecodeConfig {
  enum class Method { Greedy, Beam, Nucleus };
  Method method = Method::Beam;
  int beam_size = 5;
  int max_length = 20;
  double length_penalty = 0.3;  // final ranking by logprob / len^alpha
  double nucleus_p = 0.9;
  std::uint64_t seed = 0;

  void validate() const {
    if (beam_size < 1) raise(ErrorKind::Config, "beam_size must be >= 1");
    if (max_length < 1) raise(ErrorKind::Config, "max_length must be >= 1");
    if (nucleus_p <= 0.0 || nucleus_p > 1.0)
      raise(ErrorKind::Config, "nucleus_p must be in (0, 1]");
  }
};

inline DecodeConfig::Method parse_decode_method(const std::string& name) {
  if (name == "greedy") return DecodeConfig::Method::Greedy;
  if (name == "beam") return DecodeConfig::Method::Beam;
  if (name == "nucleus") return DecodeConfig::Method::Nucleus;
  raise(ErrorKind::Config, "unknown decode method " + name);
}

inline const char* decode_method_name(DecodeConfig::Method m) {
  switch (m) {
    case DecodeConfig::Method::Greedy: return "greedy";
    case DecodeConfig::Method::Beam: return "beam";
    case DecodeConfig::Method::Nucleus: return "nucleus";
  }
  return "?";
}

struct Hypothesis {
  std::vector<TokenId> tokens;  // EOS included when it ended the sequence
  double log_prob = 0.0;
  bool finished = false;
  double score = 0.0;

  void finalize(double alpha) {
    finished = true;
    score = log_prob /
            std::pow(static_cast<double>(std::max<std::size_t>(tokens.size(), 1)),
                     alpha);
  }
};

namespace gen_detail {

template <typename T>
std::vector<double> log_softmax_row(const T* row, i64 v) {
  double mx = static_cast<double>(row[0]);
  for (i64 j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
  double sum = 0.0;
  for (i64 j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
  double lse = mx + std::log(sum);
  std::vector<double> out(v);
  for (i64 j = 0; j < v; ++j) out[j] = static_cast<double>(row[j]) - lse;
  return out;
}

}  // namespace gen_detail

// log P(next token | ctx) for every vocabulary entry
template <typename T>
std::vector<double> next_token_log_probs(ModelParams<T>& params,
                                         const SequenceBatch& ctx) {
  Tape<T> tape;
  auto out = forward(tape, ctx, params, RunMode::Eval);
  const i64 v = out.lm_logits.cols();
  const T* row = out.lm_logits.data() + (ctx.length() - 1) * v;
  return gen_detail::log_softmax_row(row, v);
}

// Sum of per-token conditional log-probs of `response` + EOS given the
// context (Eq. 1 in log space). An empty response scores log P(EOS | ctx).
template <typename T>
double sequence_log_prob(ModelParams<T>& params, const SequenceBatch& context,
                         const std::vector<TokenId>& response,
                         TokenId continuation_segment = Vocab::kUser2Seg) {
  SequenceBatch full = context;
  for (TokenId id : response)
    append_text_slot(full, id, continuation_segment);
  Tape<T> tape;
  auto out = forward(tape, full, params, RunMode::Eval);
  const i64 v = out.lm_logits.cols();
  const i64 c = context.length();
  double total = 0.0;
  for (std::size_t j = 0; j < response.size(); ++j) {
    auto lp = gen_detail::log_softmax_row(
        out.lm_logits.data() + (c - 1 + static_cast<i64>(j)) * v, v);
    if (response[j] < 0 || response[j] >= v)
      raise(ErrorKind::Index, "response token outside vocabulary");
    total += lp[response[j]];
  }
  auto lp = gen_detail::log_softmax_row(
      out.lm_logits.data() +
          (c - 1 + static_cast<i64>(response.size())) * v,
      v);
  total += lp[Vocab::kEos];
  return total;
}

namespace gen_detail {

inline void check_capacity(const SequenceBatch& ctx, const DecodeConfig& cfg,
                           i64 max_positions) {
  if (ctx.length() + cfg.max_length > max_positions)
    raise(ErrorKind::Shape,
          strprintf("context of %lld leaves no room for max_length %d "
                    "within max_positions %lld",
                    static_cast<long long>(ctx.length()), cfg.max_length,
                    static_cast<long long>(max_positions)));
}

}  // namespace gen_detail

// Argmax decoding, ties broken by the lowest token id. Returns generated
// ids including the terminating EOS when one was emitted.
template <typename T>
std::vector<TokenId> greedy_decode(ModelParams<T>& params,
                                   const SequenceBatch& context,
                                   const DecodeConfig& config,
                                   TokenId continuation_segment = Vocab::kUser2Seg) {
  config.validate();
  gen_detail::check_capacity(context, config, params.config.max_positions);
  SequenceBatch work = context;
  std::vector<TokenId> out;
  for (int step = 0; step < config.max_length; ++step) {
    auto lp = next_token_log_probs(params, work);
    std::size_t best = 0;
    for (std::size_t j = 1; j < lp.size(); ++j)
      if (lp[j] > lp[best]) best = j;  // strict: ties keep the lower id
    out.push_back(static_cast<TokenId>(best));
    if (static_cast<TokenId>(best) == Vocab::kEos) break;
    append_text_slot(work, static_cast<TokenId>(best), continuation_segment);
  }
  return out;
}

// Standard beam search: expand every live hypothesis over the full
// vocabulary, prune on cumulative log-prob (ties: lexicographically
// smaller token sequence), retire EOS/max-length hypotheses to a pool, and
// rank the pool by the length-penalized score.
template <typename T>
std::vector<Hypothesis> beam_search_decode(
    ModelParams<T>& params, const SequenceBatch& context,
    const DecodeConfig& config,
    TokenId continuation_segment = Vocab::kUser2Seg) {
  config.validate();
  gen_detail::check_capacity(context, config, params.config.max_positions);

  auto lex_less = [](const Hypothesis& a, const Hypothesis& b) {
    return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(),
                                        b.tokens.begin(), b.tokens.end());
  };
  auto prune_less = [&](const Hypothesis& a, const Hypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return lex_less(a, b);
  };

  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> pool;
  for (int step = 0; step < config.max_length && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const auto& hyp : live) {
      SequenceBatch work = context;
      for (TokenId id : hyp.tokens)
        append_text_slot(work, id, continuation_segment);
      auto lp = next_token_log_probs(params, work);
      for (std::size_t j = 0; j < lp.size(); ++j) {
        Hypothesis cand = hyp;
        cand.tokens.push_back(static_cast<TokenId>(j));
        cand.log_prob += lp[j];
        candidates.push_back(std::move(cand));
      }
    }
    std::size_t keep =
        std::min<std::size_t>(config.beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep,
                      candidates.end(), prune_less);
    candidates.resize(keep);
    live.clear();
    for (auto& cand : candidates) {
      bool ended = cand.tokens.back() == Vocab::kEos ||
                   static_cast<int>(cand.tokens.size()) == config.max_length;
      if (ended) {
        cand.finalize(config.length_penalty);
        pool.push_back(std::move(cand));
      } else {
        live.push_back(std::move(cand));
      }
    }
  }
  auto rank_less = [&](const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return lex_less(a, b);
  };
  std::sort(pool.begin(), pool.end(), rank_less);
  return pool;
}

// Top-p sampling: smallest probability-sorted prefix with cumulative mass
// >= p, renormalized; deterministic given the rng state.
template <typename T>
std::vector<TokenId> nucleus_sample(ModelParams<T>& params,
                                    const SequenceBatch& context,
                                    const DecodeConfig& config, Rng& rng,
                                    TokenId continuation_segment = Vocab::kUser2Seg) {
  config.validate();
  gen_detail::check_capacity(context, config, params.config.max_positions);
  SequenceBatch work = context;
  std::vector<TokenId> out;
  for (int step = 0; step < config.max_length; ++step) {
    auto lp = next_token_log_probs(params, work);
    std::vector<std::size_t> order(lp.size());
    for (std::size_t j = 0; j < lp.size(); ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (lp[a] != lp[b]) return lp[a] > lp[b];
      return a < b;
    });
    std::vector<double> probs(lp.size());
    double mass = 0.0;
    std::size_t cut = order.size();
    for (std::size_t r = 0; r < order.size(); ++r) {
      probs[r] = std::exp(lp[order[r]]);
      mass += probs[r];
      if (mass >= config.nucleus_p) {
        cut = r + 1;
        break;
      }
    }
    double u = rng.uniform() * mass;
    std::size_t pick = cut - 1;
    double acc = 0.0;
    for (std::size_t r = 0; r < cut; ++r) {
      acc += probs[r];
      if (u < acc) {
        pick = r;
        break;
      }
    }
    TokenId tok = static_cast<TokenId>(order[pick]);
    out.push_back(tok);
    if (tok == Vocab::kEos) break;
    append_text_slot(work, tok, continuation_segment);
  }
  return out;
}

// Dispatches one decode according to config.method; returns generated ids
// (EOS included when emitted) plus the sequence log-prob and penalized
// score of the result.
template <typename T>
Hypothesis decode(ModelParams<T>& params, const SequenceBatch& context,
                  const DecodeConfig& config, Rng& rng,
                  TokenId continuation_segment = Vocab::kUser2Seg) {
  Hypothesis hyp;
  switch (config.method) {
    case DecodeConfig::Method::Greedy:
      hyp.tokens = greedy_decode(params, context, config, continuation_segment);
      break;
    case DecodeConfig::Method::Beam: {
      auto ranked =
          beam_search_decode(params, context, config, continuation_segment);
      return ranked.front();
    }
    case DecodeConfig::Method::Nucleus:
      hyp.tokens =
          nucleus_sample(params, context, config, rng, continuation_segment);
      break;
  }
  std::vector<TokenId> body = hyp.tokens;
  if (!body.empty() && body.back() == Vocab::kEos) body.pop_back();
  hyp.log_prob = sequence_log_prob(params, context, body, continuation_segment);
  hyp.finalize(config.length_penalty);
  return hyp;
}

// strips specials (notably the trailing EOS) and maps back to words
inline std::vector<std::string> ids_to_tokens(const std::vector<TokenId>& ids,
                                              const Vocab& vocab) {
  std::vector<std::string> out;
  for (TokenId id : ids)
    if (id >= Vocab::kNumSpecials) out.push_back(vocab.token(id));
  return out;
}

// Two-stage caption-free inference: decode a caption from the CLM context,
// then decode the response with the generated caption substituted into the
// RLM context.
template <typename T>
struct RecaptionResult {
  std::vector<std::string> caption;
  Hypothesis response;
};

template <typename T>
RecaptionResult<T> recaption_respond(ModelParams<T>& params,
                                     const DialogueSample& sample,
                                     int turn_index,
                                     const AssemblyOptions& opts,
                                     const DecodeConfig& config,
                                     const Vocab& vocab, Rng& rng) {
  AssemblyOptions cap_opts = opts;
  cap_opts.include_video = true;
  SequenceBatch clm_ctx = assemble_clm_context(sample, cap_opts, vocab);
  Hypothesis cap = decode(params, clm_ctx, config, rng, Vocab::kCapSeg);
  RecaptionResult<T> result;
  result.caption = ids_to_tokens(cap.tokens, vocab);

  AssemblyOptions resp_opts = opts;
  resp_opts.include_caption = true;  // the generated caption stands in
  SequenceBatch rlm_ctx = assemble_rlm_context(sample, turn_index, resp_opts,
                                               vocab, &result.caption);
  result.response = decode(params, rlm_ctx, config, rng, Vocab::kUser2Seg);
  return result;
}

}  // namespace mmd
