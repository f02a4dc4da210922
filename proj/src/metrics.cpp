#include "mmd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmd/common.hpp"
#include "mmd/vocab.hpp"

namespace mmd {

namespace {

using Counts = std::map<std::string, std::int64_t>;

// n-gram key: tokens joined on a separator that cannot appear in them
std::string gram_key(const std::vector<std::string>& toks, std::size_t start,
                     int n) {
  std::string key;
  for (int i = 0; i < n; ++i) {
    if (i) key += '\x1f';
    key += toks[start + i];
  }
  return key;
}

Counts ngram_counts(const std::vector<std::string>& toks, int n) {
  Counts c;
  if (static_cast<int>(toks.size()) >= n)
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++c[gram_key(toks, i, n)];
  return c;
}

std::int64_t lcs_length(const std::vector<std::string>& a,
                        const std::vector<std::string>& b) {
  std::vector<std::int64_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu(const std::vector<EvalCase>& cases, int n, bool smooth) {
  if (n < 1 || n > 4) raise(ErrorKind::Usage, "bleu order must be 1..4");
  if (cases.empty()) raise(ErrorKind::Usage, "bleu on an empty case list");
  std::vector<std::int64_t> matched(n, 0), total(n, 0);
  std::int64_t cand_len = 0, ref_len = 0;
  for (const auto& c : cases) {
    if (c.references.empty())
      raise(ErrorKind::Usage, "eval case without references");
    cand_len += static_cast<std::int64_t>(c.candidate.size());
    // closest reference length; ties go to the shorter reference
    std::int64_t closest = static_cast<std::int64_t>(c.references[0].size());
    for (const auto& r : c.references) {
      auto len = static_cast<std::int64_t>(r.size());
      auto cl = static_cast<std::int64_t>(c.candidate.size());
      if (std::llabs(len - cl) < std::llabs(closest - cl) ||
          (std::llabs(len - cl) == std::llabs(closest - cl) && len < closest))
        closest = len;
    }
    ref_len += closest;
    for (int k = 1; k <= n; ++k) {
      Counts cand = ngram_counts(c.candidate, k);
      Counts clip;
      for (const auto& r : c.references) {
        Counts rc = ngram_counts(r, k);
        for (const auto& [g, cnt] : rc)
          clip[g] = std::max(clip[g], cnt);
      }
      for (const auto& [g, cnt] : cand) {
        auto it = clip.find(g);
        matched[k - 1] += std::min(cnt, it == clip.end() ? 0 : it->second);
        total[k - 1] += cnt;
      }
    }
  }
  if (cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    double num = static_cast<double>(matched[k - 1]);
    double den = static_cast<double>(total[k - 1]);
    if (smooth && k > 1) {
      num += 1.0;
      den += 1.0;
    }
    if (num <= 0.0 || den <= 0.0) return 0.0;  // strict geometric mean
    log_sum += std::log(num / den);
  }
  double bp = cand_len > ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) /
                                       static_cast<double>(cand_len));
  return bp * std::exp(log_sum / n);
}

double rouge_l(const std::vector<EvalCase>& cases) {
  if (cases.empty()) raise(ErrorKind::Usage, "rouge_l on an empty case list");
  const double beta2 = 1.2 * 1.2;
  double sum = 0.0;
  for (const auto& c : cases) {
    if (c.references.empty())
      raise(ErrorKind::Usage, "eval case without references");
    double best = 0.0;
    for (const auto& r : c.references) {
      if (c.candidate.empty() || r.empty()) continue;
      double lcs = static_cast<double>(lcs_length(c.candidate, r));
      double p = lcs / static_cast<double>(c.candidate.size());
      double rr = lcs / static_cast<double>(r.size());
      if (p + rr == 0.0) continue;
      double f = (1.0 + beta2) * rr * p / (rr + beta2 * p);
      best = std::max(best, f);
    }
    sum += best;
  }
  return sum / static_cast<double>(cases.size());
}

double cider(const std::vector<EvalCase>& cases) {
  if (cases.empty()) raise(ErrorKind::Usage, "cider on an empty corpus");
  const int max_n = 4;
  // document frequency: number of cases whose reference set contains the
  // n-gram
  Counts df;
  for (const auto& c : cases) {
    std::set<std::string> seen;
    for (const auto& r : c.references)
      for (int k = 1; k <= max_n; ++k)
        for (const auto& [g, cnt] : ngram_counts(r, k)) seen.insert(g);
    for (const auto& g : seen) ++df[g];
  }
  const double corpus_n = static_cast<double>(cases.size());
  auto idf = [&](const std::string& g) {
    auto it = df.find(g);
    double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
    return d > 0.0 ? std::log(corpus_n / d) : 0.0;
  };
  auto tfidf = [&](const Counts& counts) {
    std::map<std::string, double> vec;
    for (const auto& [g, cnt] : counts)
      vec[g] = static_cast<double>(cnt) * idf(g);
    return vec;
  };
  auto cosine = [](const std::map<std::string, double>& a,
                   const std::map<std::string, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, v] : a) {
      na += v * v;
      auto it = b.find(g);
      if (it != b.end()) dot += v * it->second;
    }
    for (const auto& [g, v] : b) nb += v * v;
    if (na == 0.0 || nb == 0.0) return 0.0;  // zero vectors score nothing
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  double corpus = 0.0;
  for (const auto& c : cases) {
    double per_case = 0.0;
    for (int k = 1; k <= max_n; ++k) {
      auto cand = tfidf(ngram_counts(c.candidate, k));
      double over_refs = 0.0;
      for (const auto& r : c.references)
        over_refs += cosine(cand, tfidf(ngram_counts(r, k)));
      per_case += over_refs / static_cast<double>(c.references.size());
    }
    corpus += 10.0 * per_case / static_cast<double>(max_n);
  }
  return corpus / corpus_n;
}

double exact_match(const std::vector<EvalCase>& cases) {
  if (cases.empty()) return 0.0;
  std::int64_t hits = 0;
  for (const auto& c : cases)
    for (const auto& r : c.references)
      if (c.candidate == r) {
        ++hits;
        break;
      }
  return static_cast<double>(hits) / static_cast<double>(cases.size());
}

MetricReport evaluate_cases(const std::vector<EvalCase>& cases) {
  MetricReport r;
  r.bleu1 = bleu(cases, 1);
  r.bleu2 = bleu(cases, 2);
  r.bleu3 = bleu(cases, 3);
  r.bleu4 = bleu(cases, 4);
  r.rouge = rouge_l(cases);
  r.cider_score = cider(cases);
  return r;
}

std::string MetricReport::table() const {
  std::string out;
  out += strprintf("%-8s %8s\n", "metric", "value");
  out += strprintf("%-8s %8.4f\n", "BLEU-1", bleu1);
  out += strprintf("%-8s %8.4f\n", "BLEU-2", bleu2);
  out += strprintf("%-8s %8.4f\n", "BLEU-3", bleu3);
  out += strprintf("%-8s %8.4f\n", "BLEU-4", bleu4);
  out += strprintf("%-8s %8.4f\n", "ROUGE-L", rouge);
  out += strprintf("%-8s %8.4f\n", "CIDEr", cider_score);
  return out;
}

std::string MetricReport::json() const {
  nlohmann::json j;
  j["bleu1"] = bleu1;
  j["bleu2"] = bleu2;
  j["bleu3"] = bleu3;
  j["bleu4"] = bleu4;
  j["rouge_l"] = rouge;
  j["cider"] = cider_score;
  return j.dump();
}

namespace {

nlohmann::json parse_jsonl_line(const std::string& line,
                                const std::string& path, std::size_t lineno) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    raise(ErrorKind::Data, strprintf("%s line %zu: %s", path.c_str(), lineno,
                                     e.what()));
  }
}

}  // namespace

std::vector<EvalCase> load_eval_cases(const std::string& pred_path,
                                      const std::string& ref_path) {
  std::ifstream pin(pred_path, std::ios::binary);
  if (!pin) raise(ErrorKind::Data, "cannot read predictions " + pred_path);
  std::ifstream rin(ref_path, std::ios::binary);
  if (!rin) raise(ErrorKind::Data, "cannot read references " + ref_path);

  std::map<std::pair<std::string, std::int64_t>, std::string> preds;
  std::map<std::pair<std::string, std::int64_t>, std::vector<std::string>> refs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(pin, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = parse_jsonl_line(line, pred_path, lineno);
    preds[{j.at("dialogue_id").get<std::string>(),
           j.at("turn").get<std::int64_t>()}] = j.at("text").get<std::string>();
  }
  lineno = 0;
  while (std::getline(rin, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = parse_jsonl_line(line, ref_path, lineno);
    refs[{j.at("dialogue_id").get<std::string>(),
          j.at("turn").get<std::int64_t>()}] =
        j.at("texts").get<std::vector<std::string>>();
  }
  if (preds.empty()) raise(ErrorKind::Data, "no predictions in " + pred_path);

  std::vector<std::string> orphans;
  for (const auto& [key, text] : preds)
    if (!refs.count(key))
      orphans.push_back(strprintf("pred %s#%lld", key.first.c_str(),
                                  static_cast<long long>(key.second)));
  for (const auto& [key, texts] : refs)
    if (!preds.count(key))
      orphans.push_back(strprintf("ref %s#%lld", key.first.c_str(),
                                  static_cast<long long>(key.second)));
  if (!orphans.empty()) {
    std::string msg = "prediction/reference mismatch:";
    for (std::size_t i = 0; i < orphans.size() && i < 10; ++i)
      msg += " " + orphans[i];
    if (orphans.size() > 10)
      msg += strprintf(" (+%zu more)", orphans.size() - 10);
    raise(ErrorKind::Align, msg);
  }

  std::vector<EvalCase> cases;
  for (const auto& [key, text] : preds) {
    EvalCase c;
    c.candidate = normalize_text(text);
    for (const auto& t : refs[key]) c.references.push_back(normalize_text(t));
    cases.push_back(std::move(c));
  }
  return cases;
}

MetricReport evaluate_corpus(const std::string& pred_path,
                             const std::string& ref_path) {
  return evaluate_cases(load_eval_cases(pred_path, ref_path));
}

}  // namespace mmd
