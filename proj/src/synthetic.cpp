#include "mmd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mmd/vocab.hpp"

namespace mmd {

namespace {

enum class QType { Activity, Count, YesNo, Same };
enum class Attr { Activity, Count };

constexpr std::uint64_t kStreamDialogue = 0x53594e44;  // per-dialogue draws

const std::vector<std::string> kActivities = {
    "cooking", "dancing", "reading", "singing", "painting", "exercising"};
const std::vector<std::string> kCounts = {"one", "two", "three", "four"};

std::string summary_text(int activity) {
  return "a person is " + kActivities[activity] + " in the room";
}

std::string caption_text(int activity, int count) {
  return "there are " + kCounts[count - 1] + " people and someone is " +
         kActivities[activity];
}

std::string question_text(QType q, int probe_activity) {
  switch (q) {
    case QType::Activity: return "what is the person doing ?";
    case QType::Count: return "how many people are there ?";
    case QType::YesNo:
      return "is anyone " + kActivities[probe_activity] + " ?";
    case QType::Same: return "is that still true ?";
  }
  return "";
}

std::string answer_text(QType q, int activity, int count, int probe_activity,
                        Attr prev_attr) {
  switch (q) {
    case QType::Activity:
      return "the person is " + kActivities[activity] + " .";
    case QType::Count:
      return "there are " + kCounts[count - 1] + " people .";
    case QType::YesNo:
      return probe_activity == activity
                 ? "yes , someone is " + kActivities[activity] + " ."
                 : "no , the person is " + kActivities[activity] + " .";
    case QType::Same:
      return prev_attr == Attr::Count
                 ? "yes , still " + kCounts[count - 1] + " people ."
                 : "yes , still " + kActivities[activity] + " .";
  }
  return "";
}

Attr answer_attr(QType q, Attr prev_attr) {
  switch (q) {
    case QType::Count: return Attr::Count;
    case QType::Same: return prev_attr;
    default: return Attr::Activity;
  }
}

// question tokens -> template type; questions are templated, so matching on
// the first word plus the probe slot is exact
QType parse_qtype(const std::vector<std::string>& q, int* probe_activity) {
  if (!q.empty() && q[0] == "what") return QType::Activity;
  if (!q.empty() && q[0] == "how") return QType::Count;
  if (q.size() >= 3 && q[0] == "is" && q[1] == "anyone") {
    for (std::size_t a = 0; a < kActivities.size(); ++a)
      if (q[2] == kActivities[a]) *probe_activity = static_cast<int>(a);
    return QType::YesNo;
  }
  return QType::Same;
}

Attr parse_answer_attr(const std::vector<std::string>& answer) {
  for (const auto& tok : answer)
    if (tok == "people") return Attr::Count;
  return Attr::Activity;
}

int infer_activity_from_caption(const std::vector<std::string>& caption,
                                int n_activities) {
  for (const auto& tok : caption)
    for (int a = 0; a < n_activities; ++a)
      if (tok == kActivities[a]) return a;
  return 0;
}

int infer_count_from_caption(const std::vector<std::string>& caption) {
  for (const auto& tok : caption)
    for (int c = 0; c < 4; ++c)
      if (tok == kCounts[c]) return c + 1;
  return 1;
}

// drift-corrected row mean, then nearest prototype (count coordinate
// excluded), then the count read off the dedicated coordinate
void infer_latents_from_features(const VideoAudioFeatures& f,
                                 const SyntheticOracle& oracle, int* activity,
                                 int* count) {
  std::int64_t dim = f.dim;
  std::vector<double> mean(dim, 0.0);
  for (std::int64_t r = 0; r < f.t; ++r)
    for (std::int64_t j = 0; j < dim; ++j)
      mean[j] += static_cast<double>(f.row(r)[j]) -
                 static_cast<double>(r) * oracle.drift[j];
  for (auto& v : mean) v /= static_cast<double>(f.t);

  std::int64_t cc = oracle.count_coord;
  int best = 0;
  double best_d = 0.0;
  for (std::size_t a = 0; a < oracle.prototypes.size(); ++a) {
    double d = 0.0;
    for (std::int64_t j = 0; j < dim; ++j) {
      if (j == cc) continue;
      double diff = mean[j] - oracle.prototypes[a][j];
      d += diff * diff;
    }
    if (a == 0 || d < best_d) {
      best_d = d;
      best = static_cast<int>(a);
    }
  }
  *activity = best;
  double raw =
      (mean[cc] - oracle.prototypes[best][cc]) / oracle.count_scale;
  int c = static_cast<int>(std::lround(raw));
  *count = std::min(4, std::max(1, c));
}

}  // namespace

const std::vector<std::string>& synthetic_activity_words() {
  return kActivities;
}
const std::vector<std::string>& synthetic_count_words() { return kCounts; }

std::vector<std::string> bayes_response(const DialogueSample& sample,
                                        const SyntheticOracle& oracle,
                                        std::size_t turn_index,
                                        bool with_caption,
                                        int history_window) {
  int probe = 0;
  QType q = parse_qtype(sample.turns[turn_index].question, &probe);
  int activity, count;
  if (with_caption) {
    activity = infer_activity_from_caption(sample.caption, oracle.n_activities);
    count = infer_count_from_caption(sample.caption);
  } else {
    infer_latents_from_features(sample.features, oracle, &activity, &count);
  }
  Attr prev_attr = Attr::Activity;  // fallback when history is invisible
  if (q == QType::Same && history_window >= 1 && turn_index >= 1)
    prev_attr = parse_answer_attr(sample.turns[turn_index - 1].response);
  return normalize_text(answer_text(q, activity, count, probe, prev_attr));
}

BayesAccuracy evaluate_bayes(const std::vector<DialogueSample>& samples,
                             const SyntheticOracle& oracle, bool with_caption,
                             int history_window) {
  std::int64_t token_hits = 0, token_total = 0, exact_hits = 0,
               exact_total = 0;
  for (const auto& s : samples) {
    for (std::size_t n = 0; n < s.turns.size(); ++n) {
      auto pred = bayes_response(s, oracle, n, with_caption, history_window);
      const auto& gold = s.turns[n].response;
      std::size_t agree = 0;
      for (std::size_t i = 0; i < std::min(pred.size(), gold.size()); ++i)
        if (pred[i] == gold[i]) ++agree;
      token_hits += static_cast<std::int64_t>(agree);
      token_total += static_cast<std::int64_t>(gold.size());
      exact_hits += (pred == gold) ? 1 : 0;
      ++exact_total;
    }
  }
  BayesAccuracy acc;
  acc.token = token_total ? static_cast<double>(token_hits) / token_total : 0.0;
  acc.exact = exact_total ? static_cast<double>(exact_hits) / exact_total : 0.0;
  return acc;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_activities < 1 ||
      spec.n_activities > static_cast<int>(kActivities.size()))
    raise(ErrorKind::Config,
          strprintf("n_activities must be in [1, %zu]", kActivities.size()));
  if (spec.n_dialogues < 1 || spec.turns_per_dialogue < 1 ||
      spec.feature_t < 1)
    raise(ErrorKind::Config, "synthetic spec sizes must be positive");

  const std::int64_t dim = spec.feature_dim();
  const std::int64_t count_coord = 2 * spec.d_v;  // first audio coordinate

  SyntheticData out;
  auto& oracle = out.oracle;
  oracle.n_activities = spec.n_activities;
  oracle.noise_std = spec.noise_std;
  oracle.count_scale = spec.count_scale;
  oracle.noise_floor =
      static_cast<double>(dim) * spec.noise_std * spec.noise_std;
  oracle.count_coord = count_coord;

  Rng proto_rng(seed_stream(spec.seed, kStreamDialogue, 0xbead));
  oracle.prototypes.assign(spec.n_activities, std::vector<double>(dim));
  for (auto& p : oracle.prototypes)
    for (auto& v : p) v = proto_rng.normal();
  oracle.drift.assign(dim, 0.0);
  for (auto& v : oracle.drift) v = proto_rng.normal() * spec.drift_scale;

  // prototypes must separate by at least 6 sigma for the Bayes responder to
  // be near-perfect without captions
  for (int a = 0; a < spec.n_activities; ++a)
    for (int b = a + 1; b < spec.n_activities; ++b) {
      double d = 0.0;
      for (std::int64_t j = 0; j < dim; ++j) {
        double diff = oracle.prototypes[a][j] - oracle.prototypes[b][j];
        d += diff * diff;
      }
      if (std::sqrt(d) < 6.0 * spec.noise_std)
        raise(ErrorKind::Config,
              strprintf("prototype separation %.4f below 6*sigma=%.4f",
                        std::sqrt(d), 6.0 * spec.noise_std));
    }

  for (int i = 0; i < spec.n_dialogues; ++i) {
    Rng rng(seed_stream(spec.seed, kStreamDialogue, 1, i));
    DialogueSample s;
    SyntheticLatents lat;
    lat.video_id = strprintf("syn%05d", i);
    lat.activity = static_cast<int>(rng.below(spec.n_activities));
    lat.count = 1 + static_cast<int>(rng.below(4));
    s.video_id = lat.video_id;
    s.summary = normalize_text(summary_text(lat.activity));
    s.caption = normalize_text(summary_text(lat.activity) + " " +
                               caption_text(lat.activity, lat.count));

    s.features.t = spec.feature_t;
    s.features.dim = dim;
    s.features.rows.resize(static_cast<std::size_t>(spec.feature_t * dim));
    for (int r = 0; r < spec.feature_t; ++r)
      for (std::int64_t j = 0; j < dim; ++j) {
        double base = oracle.prototypes[lat.activity][j];
        if (j == count_coord) base += lat.count * spec.count_scale;
        double v = base + static_cast<double>(r) * oracle.drift[j] +
                   spec.noise_std * rng.normal();
        s.features.rows[static_cast<std::size_t>(r * dim + j)] =
            static_cast<float>(v);
      }

    Attr prev_attr = Attr::Activity;
    for (int n = 0; n < spec.turns_per_dialogue; ++n) {
      QType q;
      if (n == 0)
        q = static_cast<QType>(rng.below(3));
      else
        q = static_cast<QType>(rng.below(4));
      int probe = static_cast<int>(rng.below(spec.n_activities));
      DialogueTurn turn;
      turn.question = normalize_text(question_text(q, probe));
      turn.response = normalize_text(
          answer_text(q, lat.activity, lat.count, probe, prev_attr));
      prev_attr = answer_attr(q, prev_attr);
      s.turns.push_back(std::move(turn));
    }

    oracle.latents.push_back(std::move(lat));
    out.samples.push_back(std::move(s));
  }

  // deterministic 80/10/10 split, disjoint by construction
  for (int i = 0; i < spec.n_dialogues; ++i) {
    const auto& id = out.samples[i].video_id;
    if (i % 10 == 8)
      out.val_ids.push_back(id);
    else if (i % 10 == 9)
      out.test_ids.push_back(id);
    else
      out.train_ids.push_back(id);
  }

  // full template word inventory (for the vocab-size oracle)
  std::set<std::string> words;
  auto feed = [&](const std::string& text) {
    for (auto& t : normalize_text(text)) words.insert(t);
  };
  for (int a = 0; a < spec.n_activities; ++a) {
    for (int c = 1; c <= 4; ++c) {
      feed(summary_text(a));
      feed(caption_text(a, c));
      for (int probe = 0; probe < spec.n_activities; ++probe) {
        feed(question_text(QType::YesNo, probe));
        feed(answer_text(QType::YesNo, a, c, probe, Attr::Activity));
      }
      for (QType q : {QType::Activity, QType::Count, QType::Same}) {
        feed(question_text(q, 0));
        feed(answer_text(q, a, c, 0, Attr::Activity));
        feed(answer_text(q, a, c, 0, Attr::Count));
      }
    }
  }
  oracle.vocab_words.assign(words.begin(), words.end());

  oracle.bayes = evaluate_bayes(out.samples, oracle, true, 1 << 20);
  oracle.bayes_nocaption =
      evaluate_bayes(out.samples, oracle, false, 1 << 20);
  return out;
}

std::vector<double> oracle_predicted_row(const SyntheticOracle& oracle,
                                         std::size_t dialogue_index,
                                         std::int64_t next_row) {
  const auto& lat = oracle.latents.at(dialogue_index);
  const auto& proto = oracle.prototypes[lat.activity];
  std::vector<double> row(proto.size());
  for (std::size_t j = 0; j < proto.size(); ++j) {
    double v = proto[j] + static_cast<double>(next_row) * oracle.drift[j];
    if (static_cast<std::int64_t>(j) == oracle.count_coord)
      v += lat.count * oracle.count_scale;
    // emitted rows are float32; the optimal predictor of the stored data
    // passes through the same rounding
    row[j] = static_cast<double>(static_cast<float>(v));
  }
  return row;
}

double oracle_next_feature_mse(const std::vector<DialogueSample>& samples,
                               const SyntheticOracle& oracle) {
  double total = 0.0;
  std::int64_t n = 0;
  for (std::size_t d = 0; d < samples.size(); ++d) {
    const auto& f = samples[d].features;
    for (std::int64_t r = 0; r + 1 < f.t; ++r) {
      auto pred = oracle_predicted_row(oracle, d, r + 1);
      double err = 0.0;
      for (std::int64_t j = 0; j < f.dim; ++j) {
        double diff = static_cast<double>(f.row(r + 1)[j]) - pred[j];
        err += diff * diff;
      }
      total += err;
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

void save_oracle(const std::string& path, const SyntheticOracle& oracle) {
  nlohmann::json j;
  j["n_activities"] = oracle.n_activities;
  j["noise_std"] = oracle.noise_std;
  j["count_scale"] = oracle.count_scale;
  j["count_coord"] = oracle.count_coord;
  j["noise_floor"] = oracle.noise_floor;
  j["drift"] = oracle.drift;
  j["prototypes"] = oracle.prototypes;
  j["vocab_words"] = oracle.vocab_words;
  j["bayes"] = {{"token", oracle.bayes.token}, {"exact", oracle.bayes.exact}};
  j["bayes_nocaption"] = {{"token", oracle.bayes_nocaption.token},
                          {"exact", oracle.bayes_nocaption.exact}};
  nlohmann::json lats = nlohmann::json::array();
  for (const auto& l : oracle.latents)
    lats.push_back({{"video_id", l.video_id},
                    {"activity", l.activity},
                    {"count", l.count}});
  j["latents"] = std::move(lats);
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Data, "cannot write oracle file " + path);
  out << j.dump(1) << '\n';
}

SyntheticOracle load_oracle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Data, "cannot read oracle file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    raise(ErrorKind::Data,
          strprintf("malformed oracle file %s: %s", path.c_str(), e.what()));
  }
  SyntheticOracle o;
  o.n_activities = j.at("n_activities").get<int>();
  o.noise_std = j.at("noise_std").get<double>();
  o.count_scale = j.at("count_scale").get<double>();
  o.count_coord = j.at("count_coord").get<std::int64_t>();
  o.noise_floor = j.at("noise_floor").get<double>();
  o.drift = j.at("drift").get<std::vector<double>>();
  o.prototypes = j.at("prototypes").get<std::vector<std::vector<double>>>();
  o.vocab_words = j.at("vocab_words").get<std::vector<std::string>>();
  o.bayes.token = j.at("bayes").at("token").get<double>();
  o.bayes.exact = j.at("bayes").at("exact").get<double>();
  o.bayes_nocaption.token = j.at("bayes_nocaption").at("token").get<double>();
  o.bayes_nocaption.exact = j.at("bayes_nocaption").at("exact").get<double>();
  for (const auto& l : j.at("latents")) {
    SyntheticLatents lat;
    lat.video_id = l.at("video_id").get<std::string>();
    lat.activity = l.at("activity").get<int>();
    lat.count = l.at("count").get<int>();
    o.latents.push_back(std::move(lat));
  }
  return o;
}

}  // namespace mmd
