#include "mmd/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "mmd/common.hpp"

namespace mmd {

const std::vector<std::string>& Vocab::special_tokens() {
  static const std::vector<std::string> specials = {
      "[pad]", "[bos]", "[eos]", "[unk]",
      "[video]", "[cap]", "[user1]", "[user2]"};
  return specials;
}

Vocab::Vocab() {
  for (const auto& s : special_tokens()) add(s);
}

void Vocab::add(const std::string& token) {
  auto [it, inserted] =
      token_to_id_.emplace(token, static_cast<TokenId>(id_to_token_.size()));
  if (inserted) id_to_token_.push_back(token);
}

TokenId Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocab::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size())
    raise(ErrorKind::Index,
          strprintf("token id %d outside vocab of %d entries", id, size()));
  return id_to_token_[id];
}

static bool is_detachable(char c) {
  return c == ',' || c == '.' || c == '?' || c == '!';
}

std::vector<std::string> normalize_text(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&]() {
    if (word.empty()) return;
    // peel trailing punctuation into standalone tokens, preserving order
    std::string tail;
    while (!word.empty() && is_detachable(word.back())) {
      tail.push_back(word.back());
      word.pop_back();
    }
    if (!word.empty()) out.push_back(word);
    for (auto it = tail.rbegin(); it != tail.rend(); ++it)
      out.push_back(std::string(1, *it));
    word.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      word.push_back(
          static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocab build_vocab(const std::vector<std::string>& corpus,
                  std::int64_t min_freq) {
  if (corpus.empty())
    raise(ErrorKind::Data, "build_vocab on an empty corpus");
  std::map<std::string, std::int64_t> freq;
  for (const auto& sentence : corpus)
    for (const auto& tok : normalize_text(sentence)) ++freq[tok];

  std::vector<std::pair<std::string, std::int64_t>> items(freq.begin(),
                                                          freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab vocab;
  for (const auto& [tok, count] : items) {
    if (count < min_freq) continue;
    if (vocab.contains(tok)) continue;  // token that collides with a special
    vocab.add(tok);
  }
  return vocab;
}

std::vector<TokenId> encode(const std::string& text, const Vocab& vocab) {
  return encode_tokens(normalize_text(text), vocab);
}

std::vector<TokenId> encode_tokens(const std::vector<std::string>& tokens,
                                   const Vocab& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) ids.push_back(vocab.id(tok));
  return ids;
}

std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = vocab.token(id);  // validates the id
    if (id < Vocab::kNumSpecials) continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Data, "cannot write vocab file " + path);
  for (TokenId i = 0; i < vocab.size(); ++i) out << vocab.token(i) << '\n';
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Data, "cannot read vocab file " + path);
  Vocab vocab;
  std::string line;
  TokenId idx = 0;
  while (std::getline(in, line)) {
    if (idx < Vocab::kNumSpecials) {
      if (line != Vocab::special_tokens()[idx])
        raise(ErrorKind::Data,
              strprintf("vocab file %s: line %d is not the expected special "
                        "token %s",
                        path.c_str(), idx,
                        Vocab::special_tokens()[idx].c_str()));
    } else {
      vocab.add(line);
    }
    ++idx;
  }
  if (idx < Vocab::kNumSpecials)
    raise(ErrorKind::Data, "vocab file " + path + " is truncated");
  return vocab;
}

}  // namespace mmd
