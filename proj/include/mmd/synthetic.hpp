#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmd/corpus.hpp"

namespace mmd {

// Templated dialogue world over latent (activity, people-count) pairs.
// Feature rows are activity prototypes plus a count offset, a per-position
// linear drift, and i.i.d. Gaussian noise, so the optimal next-feature
// predictor and the Bayes responder are both available in closed form.
struct SyntheticSpec {
  int n_activities = 4;
  double noise_std = 0.05;
  int n_dialogues = 2000;
  int turns_per_dialogue = 10;
  int feature_t = 8;  // feature rows per video
  int d_v = 16;
  int d_a = 8;
  double count_scale = 0.5;   // people-count encoding on the first audio coord
  double drift_scale = 0.05;  // per-step per-coordinate drift magnitude
  std::uint64_t seed = 1;

  std::int64_t feature_dim() const { return 2 * d_v + d_a; }
};

struct SyntheticLatents {
  std::string video_id;
  int activity = 0;
  int count = 1;  // 1..4
};

struct BayesAccuracy {
  double token = 0.0;
  double exact = 0.0;
};

struct SyntheticOracle {
  int n_activities = 0;
  double noise_std = 0.0;
  double count_scale = 0.0;
  std::int64_t count_coord = 0;  // feature coordinate carrying the count
  double noise_floor = 0.0;  // feature_dim * sigma^2
  std::vector<double> drift;                   // feature_dim
  std::vector<std::vector<double>> prototypes; // K x feature_dim
  std::vector<SyntheticLatents> latents;       // per dialogue
  BayesAccuracy bayes;             // caption available, full history
  BayesAccuracy bayes_nocaption;   // features only, full history
  std::vector<std::string> vocab_words;  // full template word inventory
};

struct SyntheticData {
  std::vector<DialogueSample> samples;
  SyntheticOracle oracle;
  std::vector<std::string> train_ids, val_ids, test_ids;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Bayes-optimal responder over the generator's template world. Predictions
// are compared positionwise against gold responses; `with_caption` selects
// whether latents are read from the caption or inferred from features,
// `history_window` limits how many previous turns the responder sees.
BayesAccuracy evaluate_bayes(const std::vector<DialogueSample>& samples,
                             const SyntheticOracle& oracle, bool with_caption,
                             int history_window);

// Bayes response tokens for a single turn (used by the responder and by
// tests).
std::vector<std::string> bayes_response(const DialogueSample& sample,
                                        const SyntheticOracle& oracle,
                                        std::size_t turn_index,
                                        bool with_caption, int history_window);

// Mean squared error of the closed-form next-feature predictor on the
// emitted data; equals 0 when noise_std is 0.
double oracle_next_feature_mse(const std::vector<DialogueSample>& samples,
                               const SyntheticOracle& oracle);

// Expected next-feature row (the optimal predictor) for dialogue d, row t+1.
std::vector<double> oracle_predicted_row(const SyntheticOracle& oracle,
                                         std::size_t dialogue_index,
                                         std::int64_t next_row);

void save_oracle(const std::string& path, const SyntheticOracle& oracle);
SyntheticOracle load_oracle(const std::string& path);

const std::vector<std::string>& synthetic_activity_words();
const std::vector<std::string>& synthetic_count_words();

}  // namespace mmd
