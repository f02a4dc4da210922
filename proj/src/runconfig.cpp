#include "mmd/runconfig.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace mmd {

RunConfig::Setting parse_setting(const std::string& name) {
  if (name == "text-only") return RunConfig::Setting::TextOnly;
  if (name == "text-video") return RunConfig::Setting::TextVideo;
  if (name == "text-video-no-caption")
    return RunConfig::Setting::TextVideoNoCaption;
  raise(ErrorKind::Config, "unknown setting " + name +
                               " (expected text-only, text-video, "
                               "text-video-no-caption)");
}

const char* setting_name(RunConfig::Setting s) {
  switch (s) {
    case RunConfig::Setting::TextOnly: return "text-only";
    case RunConfig::Setting::TextVideo: return "text-video";
    case RunConfig::Setting::TextVideoNoCaption:
      return "text-video-no-caption";
  }
  return "?";
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Config, "cannot read config file " + path);
  std::map<std::string, std::string> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto eq = line.find('=');
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t\r");
      auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (eq == std::string::npos)
      raise(ErrorKind::Config,
            strprintf("%s line %zu: expected key = value", path.c_str(),
                      lineno));
    entries[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return entries;
}

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  raise(ErrorKind::Config, "config key " + key + " expects a boolean, got " + v);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    return std::stoll(v);
  } catch (...) {
    raise(ErrorKind::Config, "config key " + key + " expects an integer, got " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    return std::stod(v);
  } catch (...) {
    raise(ErrorKind::Config, "config key " + key + " expects a number, got " + v);
  }
}

}  // namespace

void apply_config_entries(RunConfig& c,
                          const std::map<std::string, std::string>& entries) {
  for (const auto& [key, value] : entries) {
    if (key == "model.layers") c.model.n_layers = parse_int(key, value);
    else if (key == "model.hidden") c.model.hidden = parse_int(key, value);
    else if (key == "model.heads") c.model.n_heads = parse_int(key, value);
    else if (key == "model.max_positions")
      c.model.max_positions = parse_int(key, value);
    else if (key == "model.d_v") c.model.d_v = parse_int(key, value);
    else if (key == "model.d_a") c.model.d_a = parse_int(key, value);
    else if (key == "model.dropout")
      c.model.dropout_rate = parse_double(key, value);
    else if (key == "precision") c.precision = static_cast<int>(parse_int(key, value));
    else if (key == "setting") c.setting = parse_setting(value);
    else if (key == "recaption") c.recaption = parse_bool(key, value);
    else if (key == "tasks") c.tasks = value;
    else if (key == "train.lr") c.trainer.lr = parse_double(key, value);
    else if (key == "train.clip_norm")
      c.trainer.clip_norm = parse_double(key, value);
    else if (key == "train.batch_size")
      c.trainer.batch_size = parse_int(key, value);
    else if (key == "train.steps") c.trainer.steps = parse_int(key, value);
    else if (key == "train.checkpoint_every")
      c.trainer.checkpoint_every = parse_int(key, value);
    else if (key == "train.eval_every")
      c.trainer.eval_every = parse_int(key, value);
    else if (key == "train.max_history")
      c.trainer.max_history = static_cast<int>(parse_int(key, value));
    else if (key == "train.seed")
      c.trainer.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "train.sample_tasks")
      c.trainer.sample_tasks = parse_bool(key, value);
    else if (key == "train.w_rlm") c.trainer.weights.rlm = parse_double(key, value);
    else if (key == "train.w_vasm")
      c.trainer.weights.vasm = parse_double(key, value);
    else if (key == "train.w_clm") c.trainer.weights.clm = parse_double(key, value);
    else if (key == "decode.method")
      c.decode.method = parse_decode_method(value);
    else if (key == "decode.beam_size")
      c.decode.beam_size = static_cast<int>(parse_int(key, value));
    else if (key == "decode.max_length")
      c.decode.max_length = static_cast<int>(parse_int(key, value));
    else if (key == "decode.length_penalty")
      c.decode.length_penalty = parse_double(key, value);
    else if (key == "decode.nucleus_p")
      c.decode.nucleus_p = parse_double(key, value);
    else if (key == "decode.seed")
      c.decode.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "data.dir") c.data_dir = value;
    else if (key == "data.dialogs") c.dialog_file = value;
    else if (key == "data.features") c.feature_dir = value;
    else if (key == "data.vocab") c.vocab_file = value;
    else if (key == "data.train_split") c.train_manifest = value;
    else if (key == "data.val_split") c.val_manifest = value;
    else if (key == "data.test_split") c.test_manifest = value;
    else if (key == "checkpoint_dir") c.checkpoint_dir = value;
    else
      raise(ErrorKind::Config, "unknown config key " + key);
  }
}

void RunConfig::resolve() {
  namespace fs = std::filesystem;
  if (precision != 32 && precision != 64)
    raise(ErrorKind::Config, "precision must be 32 or 64");

  if (data_dir.empty()) {
    const char* env = std::getenv("MMDIALOG_DATA");
    if (env) data_dir = env;
  }
  auto fill = [&](std::string& slot, const char* leaf) {
    if (slot.empty() && !data_dir.empty())
      slot = (fs::path(data_dir) / leaf).string();
  };
  fill(dialog_file, "dialogs.json");
  fill(feature_dir, "features");
  fill(vocab_file, "vocab.txt");
  fill(train_manifest, "train.txt");
  fill(val_manifest, "val.txt");
  fill(test_manifest, "test.txt");

  bool video = setting != Setting::TextOnly;
  // the recaption variant trains with gold captions; the plain no-caption
  // variant never sees them
  bool caption = setting == Setting::TextVideoNoCaption ? recaption : true;
  trainer.include_video = video;
  trainer.include_caption = caption;

  if (tasks == "auto") {
    trainer.rlm = true;
    switch (setting) {
      case Setting::TextOnly:
        trainer.vasm = trainer.clm = false;
        break;
      case Setting::TextVideo:
        trainer.vasm = trainer.clm = true;
        break;
      case Setting::TextVideoNoCaption:
        trainer.vasm = true;
        trainer.clm = recaption;
        break;
    }
  } else {
    trainer.rlm = tasks.find("rlm") != std::string::npos;
    trainer.vasm = tasks.find("vasm") != std::string::npos;
    trainer.clm = tasks.find("clm") != std::string::npos;
    if (!trainer.rlm && !trainer.vasm && !trainer.clm)
      raise(ErrorKind::Config, "tasks selects nothing: " + tasks);
  }

  if (setting == Setting::TextOnly && (trainer.vasm || trainer.clm))
    raise(ErrorKind::Config,
          "text-only setting cannot train vasm/clm (no video input)");
  if (recaption && setting != Setting::TextVideoNoCaption)
    raise(ErrorKind::Config,
          "recaption only applies to the text-video-no-caption setting");
  if (recaption && !trainer.clm)
    raise(ErrorKind::Config, "recaption needs a CLM-trained model");

  trainer.checkpoint_dir = checkpoint_dir;
  decode.validate();
}

}  // namespace mmd
