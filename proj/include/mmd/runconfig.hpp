#pragma once

#include <map>
#include <string>

#include "mmd/generate.hpp"
#include "mmd/model.hpp"
#include "mmd/trainer.hpp"

namespace mmd {

// Operator-facing run configuration: flat key=value file, CLI flags win.
struct RunConfig {
  enum class Setting { TextOnly, TextVideo, TextVideoNoCaption };

  ModelConfig model;        // vocab_size filled once the vocab is known
  int precision = 32;       // 32 or 64
  Setting setting = Setting::TextVideo;
  bool recaption = false;
  std::string tasks = "auto";  // "auto" or subset of "rlm,vasm,clm"
  TrainerConfig trainer;
  DecodeConfig decode;

  std::string data_dir;  // default from $MMDIALOG_DATA
  std::string dialog_file, feature_dir, vocab_file;
  std::string train_manifest, val_manifest, test_manifest;
  std::string checkpoint_dir = "runs/default";

  // applies setting/tasks to the trainer flags and validates invariants
  void resolve();

  bool eval_includes_caption() const {
    return setting != Setting::TextVideoNoCaption;
  }

  AssemblyOptions eval_assembly_options() const {
    AssemblyOptions opts;
    opts.max_history = trainer.max_history;
    opts.include_video = setting != Setting::TextOnly;
    opts.include_caption = eval_includes_caption();
    opts.max_positions = model.max_positions;
    return opts;
  }
};

std::map<std::string, std::string> parse_config_file(const std::string& path);
void apply_config_entries(RunConfig& config,
                          const std::map<std::string, std::string>& entries);

RunConfig::Setting parse_setting(const std::string& name);
const char* setting_name(RunConfig::Setting s);

}  // namespace mmd
