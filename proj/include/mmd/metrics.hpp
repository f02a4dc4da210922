#pragma once

#include <string>
#include <vector>

namespace mmd {

struct EvalCase {
  std::vector<std::string> candidate;
  std::vector<std::vector<std::string>> references;  // >= 1
};

// Corpus-level BLEU-n: clipped modified n-gram precisions aggregated over
// cases before dividing, geometric mean over orders 1..n, brevity penalty
// from per-case closest reference lengths. Strict (unsmoothed) by default:
// any zero precision zeroes the score.
double bleu(const std::vector<EvalCase>& cases, int n, bool smooth = false);

// Mean over cases of the max-over-references LCS F-measure with beta = 1.2.
double rouge_l(const std::vector<EvalCase>& cases);

// TF-IDF n-gram cosine consensus (n = 1..4), IDF = log(|cases| / df) from
// the evaluation set's own references, averaged over references and orders,
// scaled by 10; corpus score is the mean over cases.
double cider(const std::vector<EvalCase>& cases);

// Fraction of cases whose candidate equals one of its references.
double exact_match(const std::vector<EvalCase>& cases);

struct MetricReport {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double rouge = 0;
  double cider_score = 0;

  std::string table() const;    // aligned, 4 decimal places
  std::string json() const;     // machine-readable record
};

MetricReport evaluate_cases(const std::vector<EvalCase>& cases);

// Line-delimited records: predictions {dialogue_id, turn, text},
// references {dialogue_id, turn, texts}. Misaligned ids raise an error
// naming the orphans.
std::vector<EvalCase> load_eval_cases(const std::string& pred_path,
                                      const std::string& ref_path);
MetricReport evaluate_corpus(const std::string& pred_path,
                             const std::string& ref_path);

}  // namespace mmd
