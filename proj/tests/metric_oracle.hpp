#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mmd/metrics.hpp"

// Straight-line re-derivations of the three metrics, structured differently
// from the library path (linear scans over explicit n-gram lists, recursive
// LCS) so the two implementations can cross-check each other.
namespace oracle {

using mmd::EvalCase;

using Tokens = std::vector<std::string>;

inline std::vector<Tokens> grams(const Tokens& s, int n) {
  std::vector<Tokens> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i)
    out.push_back(Tokens(s.begin() + i, s.begin() + i + n));
  return out;
}

inline int count_gram(const std::vector<Tokens>& list, const Tokens& g) {
  int c = 0;
  for (const auto& x : list)
    if (x == g) ++c;
  return c;
}

inline double bleu(const std::vector<EvalCase>& cases, int order) {
  double log_acc = 0.0;
  long long cand_total = 0, ref_total = 0;
  std::vector<long long> matched(order, 0), possible(order, 0);
  for (const auto& c : cases) {
    cand_total += static_cast<long long>(c.candidate.size());
    long long best_ref = static_cast<long long>(c.references[0].size());
    for (const auto& r : c.references) {
      long long len = static_cast<long long>(r.size());
      long long cl = static_cast<long long>(c.candidate.size());
      long long cur = std::llabs(best_ref - cl), alt = std::llabs(len - cl);
      if (alt < cur || (alt == cur && len < best_ref)) best_ref = len;
    }
    ref_total += best_ref;
    for (int n = 1; n <= order; ++n) {
      auto cand_grams = grams(c.candidate, n);
      std::vector<Tokens> uniq;
      for (const auto& g : cand_grams)
        if (count_gram(uniq, g) == 0) uniq.push_back(g);
      for (const auto& g : uniq) {
        int in_cand = count_gram(cand_grams, g);
        int best = 0;
        for (const auto& r : c.references)
          best = std::max(best, count_gram(grams(r, n), g));
        matched[n - 1] += std::min(in_cand, best);
      }
      possible[n - 1] += static_cast<long long>(cand_grams.size());
    }
  }
  if (cand_total == 0) return 0.0;
  for (int n = 1; n <= order; ++n) {
    if (matched[n - 1] == 0 || possible[n - 1] == 0) return 0.0;
    log_acc += std::log(double(matched[n - 1]) / double(possible[n - 1]));
  }
  double bp = cand_total > ref_total
                  ? 1.0
                  : std::exp(1.0 - double(ref_total) / double(cand_total));
  return bp * std::exp(log_acc / order);
}

inline int lcs_rec(const Tokens& a, const Tokens& b, int i, int j,
            std::vector<int>& memo) {
  if (i == 0 || j == 0) return 0;
  int& slot = memo[i * (b.size() + 1) + j];
  if (slot >= 0) return slot;
  if (a[i - 1] == b[j - 1])
    slot = 1 + lcs_rec(a, b, i - 1, j - 1, memo);
  else
    slot = std::max(lcs_rec(a, b, i - 1, j, memo),
                    lcs_rec(a, b, i, j - 1, memo));
  return slot;
}

inline double rouge_l(const std::vector<EvalCase>& cases) {
  double sum = 0.0;
  for (const auto& c : cases) {
    double best = 0.0;
    for (const auto& r : c.references) {
      if (c.candidate.empty() || r.empty()) continue;
      std::vector<int> memo((c.candidate.size() + 1) * (r.size() + 1), -1);
      double l = lcs_rec(c.candidate, r, int(c.candidate.size()),
                         int(r.size()), memo);
      double p = l / c.candidate.size();
      double rec = l / r.size();
      if (p + rec > 0.0) {
        double beta2 = 1.44;
        best = std::max(best, (1 + beta2) * rec * p / (rec + beta2 * p));
      }
    }
    sum += best;
  }
  return sum / cases.size();
}

inline double cider(const std::vector<EvalCase>& cases) {
  double total = 0.0;
  for (const auto& c : cases) {
    double case_score = 0.0;
    for (int n = 1; n <= 4; ++n) {
      // union of n-grams seen in this candidate or its refs
      std::vector<Tokens> vocab;
      auto note = [&](const Tokens& g) {
        if (count_gram(vocab, g) == 0) vocab.push_back(g);
      };
      for (const auto& g : grams(c.candidate, n)) note(g);
      for (const auto& r : c.references)
        for (const auto& g : grams(r, n)) note(g);

      auto idf = [&](const Tokens& g) {
        int df = 0;
        for (const auto& other : cases) {
          bool present = false;
          for (const auto& r : other.references)
            if (count_gram(grams(r, n), g) > 0) present = true;
          df += present ? 1 : 0;
        }
        return df > 0 ? std::log(double(cases.size()) / df) : 0.0;
      };

      std::vector<double> cand_vec;
      for (const auto& g : vocab)
        cand_vec.push_back(count_gram(grams(c.candidate, n), g) * idf(g));
      double ref_avg = 0.0;
      for (const auto& r : c.references) {
        std::vector<double> ref_vec;
        for (const auto& g : vocab)
          ref_vec.push_back(count_gram(grams(r, n), g) * idf(g));
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < vocab.size(); ++i) {
          dot += cand_vec[i] * ref_vec[i];
          na += cand_vec[i] * cand_vec[i];
          nb += ref_vec[i] * ref_vec[i];
        }
        ref_avg += (na > 0 && nb > 0) ? dot / std::sqrt(na * nb) : 0.0;
      }
      case_score += ref_avg / c.references.size();
    }
    total += 10.0 * case_score / 4.0;
  }
  return total / cases.size();
}

}  // namespace oracle

#include "mmd/vocab.hpp"

namespace golden {

using mmd::EvalCase;

inline mmd::EvalCase make_case(const std::string& cand,
                   const std::vector<std::string>& refs) {
  mmd::EvalCase c;
  c.candidate = mmd::normalize_text(cand);
  for (const auto& r : refs) c.references.push_back(mmd::normalize_text(r));
  return c;
}

// twenty fixed cases spanning identity, partial overlap, multi-reference,
// repetition clipping, and empty candidates
inline std::vector<mmd::EvalCase> golden_cases() {
  return {
      make_case("a cat sat", {"a cat sat on a mat"}),
      make_case("the cat sat", {"the cat on the mat sat"}),
      make_case("a man rides a horse", {"a man rides a horse"}),
      make_case("purple monkeys dance", {"the weather is cold today"}),
      make_case("the the the the", {"the cat sat on the mat"}),
      make_case("a person is cooking in the kitchen",
                {"someone cooks food in a kitchen",
                 "a person is cooking a meal", "a chef prepares dinner"}),
      make_case("two people are talking",
                {"two people have a conversation", "some people are talking"}),
      make_case("", {"a non empty reference"}),
      make_case("she opened the old wooden door slowly",
                {"she opened the wooden door", "the old door was opened"}),
      make_case("the dog runs fast", {"the dog runs very fast"}),
      make_case("a a b b c c", {"a b c a b c"}),
      make_case("he reads a long book about history",
                {"he reads a history book",
                 "a man reads a long book about history"}),
      make_case("children play in the park",
                {"kids play at the park", "children play outside in the park"}),
      make_case("it is raining heavily outside",
                {"it rains outside", "heavy rain falls outside",
                 "it is raining hard outside"}),
      make_case("one two three four five six",
                {"one two three four five six seven eight"}),
      make_case("exactly the same words", {"exactly the same words"}),
      make_case("almost the same words", {"nearly the same words"}),
      make_case("a quick brown fox jumps", {"the quick brown fox jumped"}),
      make_case("singing and dancing all night",
                {"they were singing and dancing all night long",
                 "singing and dancing"}),
      make_case("final case with common tokens",
                {"final case with some common tokens", "another reference"}),
  };
}


}  // namespace golden
