#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmd {

using TokenId = std::int32_t;

// Word-level vocabulary with a fixed special-token block. The four segment
// markers are ordinary vocabulary entries; their embedding rows double as
// the segment embeddings.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kVideoSeg = 4;
  static constexpr TokenId kCapSeg = 5;
  static constexpr TokenId kUser1Seg = 6;
  static constexpr TokenId kUser2Seg = 7;
  static constexpr std::int32_t kNumSpecials = 8;

  static const std::vector<std::string>& special_tokens();

  Vocab();  // specials only

  TokenId id(const std::string& token) const;  // kUnk when missing
  const std::string& token(TokenId id) const;  // throws on invalid id
  std::int32_t size() const { return static_cast<std::int32_t>(id_to_token_.size()); }
  bool contains(const std::string& token) const;

  void add(const std::string& token);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

// Lowercase, split on whitespace, detach trailing , . ? ! as their own
// tokens.
std::vector<std::string> normalize_text(const std::string& text);

std::string join_tokens(const std::vector<std::string>& tokens);

// Frequency >= min_freq, ordered by (frequency desc, token asc) after the
// special block.
Vocab build_vocab(const std::vector<std::string>& corpus,
                  std::int64_t min_freq);

std::vector<TokenId> encode(const std::string& text, const Vocab& vocab);
std::vector<TokenId> encode_tokens(const std::vector<std::string>& tokens,
                                   const Vocab& vocab);
std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab);

// one token per line, line number = id
void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

}  // namespace mmd
