#include "mmd/batch.hpp"

#include <algorithm>

namespace mmd {

void SequenceBatch::validate() const {
  const std::size_t n = layout.size();
  if (lm_targets.size() != n || lm_mask.size() != n ||
      feature_targets.size() != n || feature_mask.size() != n)
    raise(ErrorKind::Shape, "batch mask/target arrays out of step with layout");
  for (std::size_t i = 0; i < n; ++i) {
    if (lm_mask[i] && lm_targets[i] < 0)
      raise(ErrorKind::Shape, "lm_mask set without lm_target");
    if (feature_mask[i] && feature_targets[i] < 0)
      raise(ErrorKind::Shape, "feature_mask set without feature_target");
    if (feature_mask[i] && feature_targets[i] >= n_feature_rows)
      raise(ErrorKind::Index, "feature_target outside stacked rows");
    if (layout[i].is_feature &&
        (layout[i].feature_row < 0 || layout[i].feature_row >= n_feature_rows))
      raise(ErrorKind::Index, "feature slot row outside stacked rows");
  }
  bool any_lm = false, any_feat = false;
  for (std::size_t i = 0; i < n; ++i) {
    any_lm |= static_cast<bool>(lm_mask[i]);
    any_feat |= static_cast<bool>(feature_mask[i]);
  }
  switch (task) {
    case TaskTag::RLM:
    case TaskTag::CLM:
      if (any_feat) raise(ErrorKind::Shape, "LM batch with feature mask set");
      break;
    case TaskTag::VASM:
      if (any_lm) raise(ErrorKind::Shape, "VASM batch with lm mask set");
      break;
  }
}

namespace {

class Builder {
 public:
  Builder(TaskTag task, std::int64_t feature_dim) {
    batch_.task = task;
    batch_.feature_dim = feature_dim;
  }

  void text(TokenId token, TokenId segment) {
    Slot s;
    s.token = token;
    s.segment = segment;
    batch_.layout.push_back(s);
  }

  void tokens(const std::vector<std::string>& toks, TokenId segment,
              const Vocab& vocab) {
    for (const auto& t : toks) text(vocab.id(t), segment);
  }

  void features(const VideoAudioFeatures& f) {
    for (std::int64_t r = 0; r < f.t; ++r) {
      Slot s;
      s.is_feature = true;
      s.segment = Vocab::kVideoSeg;
      s.feature_row = batch_.n_feature_rows;
      batch_.layout.push_back(s);
      batch_.feature_rows.insert(batch_.feature_rows.end(), f.row(r),
                                 f.row(r) + f.dim);
      ++batch_.n_feature_rows;
    }
  }

  SequenceBatch finish() {
    const std::size_t n = batch_.layout.size();
    batch_.lm_targets.assign(n, -1);
    batch_.lm_mask.assign(n, false);
    batch_.feature_targets.assign(n, -1);
    batch_.feature_mask.assign(n, false);
    return std::move(batch_);
  }

  std::int64_t length() const { return batch_.length(); }

 private:
  SequenceBatch batch_;
};

int history_window(int max_history, int turn_index) {
  return std::min(max_history, turn_index - 1);
}

// shared RLM prefix: BOS, optional video, optional caption, h history
// turns, Q_n
Builder rlm_prefix(const VideoAudioFeatures* features,
                   const std::vector<std::string>* caption,
                   const std::vector<DialogueTurn>& turns, int turn_index,
                   int h, const AssemblyOptions& opts, const Vocab& vocab) {
  Builder b(TaskTag::RLM, features ? features->dim : 0);
  bool video = opts.include_video && features != nullptr;
  bool cap = opts.include_caption && caption != nullptr && !caption->empty();
  TokenId bos_seg = video ? Vocab::kVideoSeg
                          : (cap ? Vocab::kCapSeg : Vocab::kUser1Seg);
  b.text(Vocab::kBos, bos_seg);
  if (video) b.features(*features);
  if (cap) {
    b.text(Vocab::kCapSeg, Vocab::kCapSeg);
    b.tokens(*caption, Vocab::kCapSeg, vocab);
  }
  for (int t = turn_index - 1 - h; t < turn_index - 1; ++t) {
    b.tokens(turns[t].question, Vocab::kUser1Seg, vocab);
    b.tokens(turns[t].response, Vocab::kUser2Seg, vocab);
  }
  b.tokens(turns[turn_index - 1].question, Vocab::kUser1Seg, vocab);
  return b;
}

[[noreturn]] void too_long(std::int64_t len, std::int64_t cap) {
  raise(ErrorKind::Shape,
        strprintf("assembled sequence of %lld exceeds max_positions %lld "
                  "even with history dropped",
                  static_cast<long long>(len), static_cast<long long>(cap)));
}

}  // namespace

SequenceBatch assemble_rlm(const DialogueSample& sample, int turn_index,
                           const AssemblyOptions& opts, const Vocab& vocab) {
  if (turn_index < 1 ||
      turn_index > static_cast<int>(sample.turns.size()))
    raise(ErrorKind::Index,
          strprintf("turn index %d outside 1..%zu", turn_index,
                    sample.turns.size()));
  const auto& response = sample.turns[turn_index - 1].response;
  auto response_ids = encode_tokens(response, vocab);

  for (int h = history_window(opts.max_history, turn_index); h >= 0; --h) {
    Builder b = rlm_prefix(&sample.features, &sample.caption, sample.turns,
                           turn_index, h, opts, vocab);
    std::int64_t r_start = b.length();
    for (TokenId id : response_ids) b.text(id, Vocab::kUser2Seg);
    b.text(Vocab::kEos, Vocab::kUser2Seg);
    if (b.length() > opts.max_positions) {
      if (h == 0) too_long(b.length(), opts.max_positions);
      continue;  // drop the oldest history turn and retry
    }
    SequenceBatch batch = b.finish();
    // position p predicts the token at p+1; masked over R_n + EOS
    std::int64_t m = static_cast<std::int64_t>(response_ids.size());
    for (std::int64_t p = r_start - 1; p <= r_start + m - 1; ++p) {
      batch.lm_targets[p] = batch.layout[p + 1].token;
      batch.lm_mask[p] = true;
    }
    batch.validate();
    return batch;
  }
  too_long(0, opts.max_positions);
}

SequenceBatch assemble_rlm_context(
    const DialogueSample& sample, int turn_index, const AssemblyOptions& opts,
    const Vocab& vocab, const std::vector<std::string>* caption_override) {
  if (turn_index < 1 ||
      turn_index > static_cast<int>(sample.turns.size()))
    raise(ErrorKind::Index,
          strprintf("turn index %d outside 1..%zu", turn_index,
                    sample.turns.size()));
  const std::vector<std::string>* caption =
      caption_override ? caption_override : &sample.caption;
  for (int h = history_window(opts.max_history, turn_index); h >= 0; --h) {
    Builder b = rlm_prefix(&sample.features, caption, sample.turns,
                           turn_index, h, opts, vocab);
    if (b.length() > opts.max_positions) {
      if (h == 0) too_long(b.length(), opts.max_positions);
      continue;
    }
    SequenceBatch batch = b.finish();
    batch.validate();
    return batch;
  }
  too_long(0, opts.max_positions);
}

SequenceBatch assemble_chat_context(
    const VideoAudioFeatures* features,
    const std::vector<std::string>* caption,
    const std::vector<DialogueTurn>& history,
    const std::vector<std::string>& question, const AssemblyOptions& opts,
    const Vocab& vocab) {
  std::vector<DialogueTurn> turns = history;
  DialogueTurn current;
  current.question = question;
  turns.push_back(current);
  int turn_index = static_cast<int>(turns.size());
  for (int h = history_window(opts.max_history, turn_index); h >= 0; --h) {
    Builder b =
        rlm_prefix(features, caption, turns, turn_index, h, opts, vocab);
    if (b.length() > opts.max_positions) {
      if (h == 0) too_long(b.length(), opts.max_positions);
      continue;
    }
    SequenceBatch batch = b.finish();
    batch.validate();
    return batch;
  }
  too_long(0, opts.max_positions);
}

std::optional<SequenceBatch> assemble_vasm(const DialogueSample& sample,
                                           const AssemblyOptions& opts,
                                           const Vocab& vocab) {
  if (sample.features.t < 2) return std::nullopt;  // no regression target
  bool cap = opts.include_caption && !sample.caption.empty();
  int total_turns = static_cast<int>(sample.turns.size());
  for (int h = std::min(opts.max_history, total_turns); h >= 0; --h) {
    Builder b(TaskTag::VASM, sample.features.dim);
    TokenId bos_seg = cap ? Vocab::kCapSeg
                          : (h > 0 ? Vocab::kUser1Seg : Vocab::kVideoSeg);
    b.text(Vocab::kBos, bos_seg);
    if (cap) {
      b.text(Vocab::kCapSeg, Vocab::kCapSeg);
      b.tokens(sample.caption, Vocab::kCapSeg, vocab);
    }
    for (int t = total_turns - h; t < total_turns; ++t) {
      b.tokens(sample.turns[t].question, Vocab::kUser1Seg, vocab);
      b.tokens(sample.turns[t].response, Vocab::kUser2Seg, vocab);
    }
    std::int64_t v_start = b.length();
    b.features(sample.features);
    if (b.length() > opts.max_positions) {
      if (h == 0) too_long(b.length(), opts.max_positions);
      continue;
    }
    SequenceBatch batch = b.finish();
    // slot holding VA_t predicts VA_{t+1}, t = 1..T-1 (1-based)
    for (std::int64_t r = 0; r + 1 < sample.features.t; ++r) {
      std::int64_t p = v_start + r;
      batch.feature_targets[p] = batch.layout[p].feature_row + 1;
      batch.feature_mask[p] = true;
    }
    batch.validate();
    return batch;
  }
  too_long(0, opts.max_positions);
}

std::optional<SequenceBatch> assemble_clm(const DialogueSample& sample,
                                          const AssemblyOptions& opts,
                                          const Vocab& vocab) {
  if (sample.caption.empty()) return std::nullopt;
  auto caption_ids = encode_tokens(sample.caption, vocab);
  Builder b(TaskTag::CLM, sample.features.dim);
  b.text(Vocab::kBos, opts.include_video ? Vocab::kVideoSeg : Vocab::kCapSeg);
  if (opts.include_video) b.features(sample.features);
  std::int64_t cap_marker = b.length();
  b.text(Vocab::kCapSeg, Vocab::kCapSeg);
  for (TokenId id : caption_ids) b.text(id, Vocab::kCapSeg);
  b.text(Vocab::kEos, Vocab::kCapSeg);
  if (b.length() > opts.max_positions)
    too_long(b.length(), opts.max_positions);
  SequenceBatch batch = b.finish();
  std::int64_t m = static_cast<std::int64_t>(caption_ids.size());
  for (std::int64_t p = cap_marker; p <= cap_marker + m; ++p) {
    batch.lm_targets[p] = batch.layout[p + 1].token;
    batch.lm_mask[p] = true;
  }
  batch.validate();
  return batch;
}

SequenceBatch assemble_clm_context(const DialogueSample& sample,
                                   const AssemblyOptions& opts,
                                   const Vocab& vocab) {
  Builder b(TaskTag::CLM, sample.features.dim);
  b.text(Vocab::kBos, opts.include_video ? Vocab::kVideoSeg : Vocab::kCapSeg);
  if (opts.include_video) b.features(sample.features);
  b.text(Vocab::kCapSeg, Vocab::kCapSeg);
  if (b.length() > opts.max_positions)
    too_long(b.length(), opts.max_positions);
  SequenceBatch batch = b.finish();
  batch.validate();
  return batch;
}

void append_text_slot(SequenceBatch& batch, TokenId token, TokenId segment) {
  Slot s;
  s.token = token;
  s.segment = segment;
  batch.layout.push_back(s);
  batch.lm_targets.push_back(-1);
  batch.lm_mask.push_back(false);
  batch.feature_targets.push_back(-1);
  batch.feature_mask.push_back(false);
}

}  // namespace mmd
