#include "mmd/corpus.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "mmd/vocab.hpp"

static_assert(std::endian::native == std::endian::little,
              "feature/checkpoint formats assume a little-endian host");

namespace mmd {

namespace {

constexpr char kFeatureMagic[4] = {'V', 'A', 'F', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) raise(ErrorKind::Data, "truncated file " + path);
  return v;
}

}  // namespace

void write_features(const std::string& path, const VideoAudioFeatures& f) {
  if (f.t < 1) raise(ErrorKind::Data, "refusing to write zero-length features");
  if (f.dim < 1 || static_cast<std::int64_t>(f.rows.size()) != f.t * f.dim)
    raise(ErrorKind::Shape, "feature rows do not match T x dim");
  for (float v : f.rows)
    if (!std::isfinite(v))
      raise(ErrorKind::Numerical, "non-finite feature value in " + path);
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Data, "cannot write feature file " + path);
  out.write(kFeatureMagic, 4);
  write_pod(out, kFeatureVersion);
  write_pod(out, static_cast<std::uint32_t>(f.t));
  write_pod(out, static_cast<std::uint32_t>(f.dim));
  out.write(reinterpret_cast<const char*>(f.rows.data()),
            static_cast<std::streamsize>(f.rows.size() * sizeof(float)));
  if (!out) raise(ErrorKind::Data, "short write to feature file " + path);
}

VideoAudioFeatures read_features(const std::string& path,
                                 std::int64_t expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Data, "cannot read feature file " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0)
    raise(ErrorKind::Data, "bad magic in feature file " + path);
  auto version = read_pod<std::uint32_t>(in, path);
  if (version != kFeatureVersion)
    raise(ErrorKind::Data,
          strprintf("unsupported feature file version %u in %s", version,
                    path.c_str()));
  VideoAudioFeatures f;
  f.t = read_pod<std::uint32_t>(in, path);
  f.dim = read_pod<std::uint32_t>(in, path);
  if (f.t < 1) raise(ErrorKind::Data, "zero-length feature file " + path);
  if (expected_dim >= 0 && f.dim != expected_dim)
    raise(ErrorKind::Shape,
          strprintf("feature file %s has dim %lld, config expects %lld",
                    path.c_str(), static_cast<long long>(f.dim),
                    static_cast<long long>(expected_dim)));
  f.rows.resize(static_cast<std::size_t>(f.t * f.dim));
  in.read(reinterpret_cast<char*>(f.rows.data()),
          static_cast<std::streamsize>(f.rows.size() * sizeof(float)));
  if (!in) raise(ErrorKind::Data, "truncated feature file " + path);
  return f;
}

namespace {

std::size_t line_of_byte(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace

std::vector<DialogueSample> load_dataset(const std::string& dialog_path,
                                         const std::string& feature_dir,
                                         std::int64_t expected_dim) {
  std::ifstream in(dialog_path, std::ios::binary);
  if (!in) raise(ErrorKind::Data, "cannot read dialog file " + dialog_path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    raise(ErrorKind::Data,
          strprintf("malformed dialog file %s at line %zu: %s",
                    dialog_path.c_str(), line_of_byte(text, e.byte),
                    e.what()));
  }
  if (!root.is_object() || !root.contains("dialogs") ||
      !root["dialogs"].is_array())
    raise(ErrorKind::Data,
          "dialog file " + dialog_path + " has no top-level dialogs array");

  std::vector<DialogueSample> samples;
  std::size_t index = 0;
  for (const auto& rec : root["dialogs"]) {
    DialogueSample s;
    if (rec.contains("image_id"))
      s.video_id = rec["image_id"].get<std::string>();
    else if (rec.contains("video_id"))
      s.video_id = rec["video_id"].get<std::string>();
    else
      raise(ErrorKind::Data,
            strprintf("dialog record %zu lacks image_id/video_id", index));

    // missing summary is tolerated; caption = summary (+) caption
    std::string summary =
        rec.contains("summary") && rec["summary"].is_string()
            ? rec["summary"].get<std::string>()
            : "";
    std::string caption =
        rec.contains("caption") && rec["caption"].is_string()
            ? rec["caption"].get<std::string>()
            : "";
    s.summary = normalize_text(summary);
    s.caption = normalize_text(summary + " " + caption);

    if (!rec.contains("dialog") || !rec["dialog"].is_array() ||
        rec["dialog"].empty())
      raise(ErrorKind::Data,
            strprintf("dialog record %zu (%s) has no turns", index,
                      s.video_id.c_str()));
    for (const auto& turn : rec["dialog"]) {
      if (!turn.contains("question") || !turn.contains("answer"))
        raise(ErrorKind::Data,
              strprintf("dialog record %zu (%s) has a malformed turn", index,
                        s.video_id.c_str()));
      DialogueTurn t;
      t.question = normalize_text(turn["question"].get<std::string>());
      t.response = normalize_text(turn["answer"].get<std::string>());
      s.turns.push_back(std::move(t));
    }

    std::filesystem::path fpath =
        std::filesystem::path(feature_dir) / (s.video_id + ".vaft");
    if (!std::filesystem::exists(fpath))
      raise(ErrorKind::Data,
            "missing feature file for video_id " + s.video_id + " (" +
                fpath.string() + ")");
    s.features = read_features(fpath.string(), expected_dim);

    samples.push_back(std::move(s));
    ++index;
  }
  return samples;
}

void save_dataset_dialogs(const std::string& dialog_path,
                          const std::vector<DialogueSample>& samples) {
  nlohmann::json dialogs = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json rec;
    rec["image_id"] = s.video_id;
    rec["summary"] = join_tokens(s.summary);
    // stored caption excludes the summary prefix; load_dataset re-joins
    std::vector<std::string> cap_only(s.caption.begin() + s.summary.size(),
                                      s.caption.end());
    rec["caption"] = join_tokens(cap_only);
    rec["dialog"] = nlohmann::json::array();
    for (const auto& t : s.turns) {
      rec["dialog"].push_back({{"question", join_tokens(t.question)},
                               {"answer", join_tokens(t.response)}});
    }
    dialogs.push_back(std::move(rec));
  }
  nlohmann::json root;
  root["dialogs"] = std::move(dialogs);
  std::ofstream out(dialog_path, std::ios::binary);
  if (!out) raise(ErrorKind::Data, "cannot write dialog file " + dialog_path);
  out << root.dump(1) << '\n';
}

std::vector<std::string> load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Data, "cannot read manifest " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ids.push_back(line);
  return ids;
}

void save_manifest(const std::string& path,
                   const std::vector<std::string>& ids) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Data, "cannot write manifest " + path);
  for (const auto& id : ids) out << id << '\n';
}

std::vector<DialogueSample> filter_by_ids(
    const std::vector<DialogueSample>& samples,
    const std::vector<std::string>& ids) {
  std::unordered_set<std::string> want(ids.begin(), ids.end());
  std::vector<DialogueSample> out;
  for (const auto& s : samples)
    if (want.count(s.video_id)) out.push_back(s);
  return out;
}

}  // namespace mmd
