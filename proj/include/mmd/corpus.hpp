#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmd/common.hpp"

namespace mmd {

struct VideoAudioFeatures {
  std::int64_t t = 0;    // segment count
  std::int64_t dim = 0;  // 2*d_v + d_a
  std::vector<float> rows;  // row-major t x dim

  const float* row(std::int64_t r) const { return rows.data() + r * dim; }
  float* row(std::int64_t r) { return rows.data() + r * dim; }
};

struct DialogueTurn {
  std::vector<std::string> question;  // normalized tokens
  std::vector<std::string> response;
};

struct DialogueSample {
  std::string video_id;
  std::vector<std::string> summary;  // kept separately for recaption output
  std::vector<std::string> caption;  // summary + caption, already joined
  std::vector<DialogueTurn> turns;
  VideoAudioFeatures features;
};

// Binary feature file: magic "VAFT", u32 version, u32 T, u32 dim, then
// T*dim float32 little-endian values. Round-trips bit-exactly.
void write_features(const std::string& path, const VideoAudioFeatures& f);
VideoAudioFeatures read_features(const std::string& path,
                                 std::int64_t expected_dim = -1);

// AVSD-layout dialog file (JSON): {"dialogs": [{"image_id": ...,
// "summary": ..., "caption": ..., "dialog": [{"question", "answer"}]}]}.
// Features are attached from <feature_dir>/<video_id>.vaft.
std::vector<DialogueSample> load_dataset(const std::string& dialog_path,
                                         const std::string& feature_dir,
                                         std::int64_t expected_dim = -1);

void save_dataset_dialogs(const std::string& dialog_path,
                          const std::vector<DialogueSample>& samples);

// split manifest: one video_id per line
std::vector<std::string> load_manifest(const std::string& path);
void save_manifest(const std::string& path,
                   const std::vector<std::string>& ids);
std::vector<DialogueSample> filter_by_ids(
    const std::vector<DialogueSample>& samples,
    const std::vector<std::string>& ids);

}  // namespace mmd
