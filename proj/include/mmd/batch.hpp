#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mmd/corpus.hpp"
#include "mmd/vocab.hpp"

namespace mmd {

enum class TaskTag { RLM, VASM, CLM };

// One position of the assembled sequence: either a text token or a
// video-audio feature row. `segment` names the segment-embedding row added
// at this position.
struct Slot {
  bool is_feature = false;
  TokenId token = -1;
  TokenId segment = -1;
  std::int64_t feature_row = -1;  // row into SequenceBatch::feature_rows
};

struct SequenceBatch {
  TaskTag task = TaskTag::RLM;
  std::vector<Slot> layout;

  // stacked feature rows referenced by feature slots and targets
  std::vector<float> feature_rows;
  std::int64_t feature_dim = 0;
  std::int64_t n_feature_rows = 0;

  std::vector<TokenId> lm_targets;            // -1 where absent
  std::vector<bool> lm_mask;
  std::vector<std::int64_t> feature_targets;  // row index, -1 where absent
  std::vector<bool> feature_mask;

  std::int64_t length() const { return static_cast<std::int64_t>(layout.size()); }
  std::int64_t feature_slot_count() const {
    std::int64_t n = 0;
    for (const auto& s : layout) n += s.is_feature ? 1 : 0;
    return n;
  }
  const float* feature_row(std::int64_t r) const {
    return feature_rows.data() + r * feature_dim;
  }

  // checks the per-task mask invariants; throws on violation
  void validate() const;
};

struct AssemblyOptions {
  int max_history = 3;
  bool include_video = true;
  bool include_caption = true;
  std::int64_t max_positions = 256;
};

// [BOS] (+) video (+) [cap] caption (+) last min(max_history, n-1) turns
// (+) Q_n (+) R_n (+) [EOS]; lm targets shift over R_n+EOS. turn_index is
// 1-based. Oldest history turns are dropped first when the sequence would
// not fit.
SequenceBatch assemble_rlm(const DialogueSample& sample, int turn_index,
                           const AssemblyOptions& opts, const Vocab& vocab);

// Decode-time prefix of assemble_rlm, ending after Q_n. caption_override
// substitutes the recaption output for the stored caption.
SequenceBatch assemble_rlm_context(
    const DialogueSample& sample, int turn_index, const AssemblyOptions& opts,
    const Vocab& vocab,
    const std::vector<std::string>* caption_override = nullptr);

// Free-form context for the chat REPL: rolling history not tied to a
// stored sample.
SequenceBatch assemble_chat_context(
    const VideoAudioFeatures* features,
    const std::vector<std::string>* caption,
    const std::vector<DialogueTurn>& history,
    const std::vector<std::string>& question, const AssemblyOptions& opts,
    const Vocab& vocab);

// [BOS] (+) [cap] caption (+) turns (+) video; the slot holding VA_t is
// regressed onto VA_{t+1}. nullopt when T < 2 (no regression target).
std::optional<SequenceBatch> assemble_vasm(const DialogueSample& sample,
                                           const AssemblyOptions& opts,
                                           const Vocab& vocab);

// [BOS] (+) video (+) [cap] caption (+) [EOS]; lm targets shift over
// caption+EOS. nullopt when the caption is empty.
std::optional<SequenceBatch> assemble_clm(const DialogueSample& sample,
                                          const AssemblyOptions& opts,
                                          const Vocab& vocab);

// Decode-time prefix of assemble_clm, ending at the [cap] marker.
SequenceBatch assemble_clm_context(const DialogueSample& sample,
                                   const AssemblyOptions& opts,
                                   const Vocab& vocab);

// Appends one generated token under `segment` (decoding grows the sequence
// in place).
void append_text_slot(SequenceBatch& batch, TokenId token, TokenId segment);

}  // namespace mmd
