// mmdialog: train / generate / eval / ablate / chat / make-synthetic

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmd/checkpoint.hpp"
#include "mmd/generate.hpp"
#include "mmd/metrics.hpp"
#include "mmd/runconfig.hpp"
#include "mmd/synthetic.hpp"
#include "mmd/trainer.hpp"

namespace fs = std::filesystem;
using namespace mmd;

namespace {

constexpr std::uint64_t kStreamGenerate = 0x47454e53;

std::vector<DialogueSample> load_split(const RunConfig& rc,
                                       const std::string& split) {
  auto all = load_dataset(rc.dialog_file, rc.feature_dir,
                          rc.model.feature_dim());
  if (split == "all") return all;
  std::string manifest;
  if (split == "train") manifest = rc.train_manifest;
  else if (split == "val") manifest = rc.val_manifest;
  else if (split == "test") manifest = rc.test_manifest;
  else raise(ErrorKind::Usage, "unknown split " + split);
  return filter_by_ids(all, load_manifest(manifest));
}

Vocab load_or_build_vocab(const RunConfig& rc) {
  if (fs::exists(rc.vocab_file)) return load_vocab(rc.vocab_file);
  auto train = load_split(rc, "train");
  if (train.empty())
    raise(ErrorKind::Data, "cannot build a vocabulary from an empty train split");
  std::vector<std::string> corpus;
  for (const auto& s : train) {
    corpus.push_back(join_tokens(s.caption));
    for (const auto& t : s.turns) {
      corpus.push_back(join_tokens(t.question));
      corpus.push_back(join_tokens(t.response));
    }
  }
  Vocab vocab = build_vocab(corpus, 1);
  save_vocab(vocab, rc.vocab_file);
  return vocab;
}

void write_refs(const std::string& path,
                const std::vector<DialogueSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Data, "cannot write references " + path);
  for (const auto& s : samples) {
    for (std::size_t n = 0; n < s.turns.size(); ++n) {
      nlohmann::json j;
      j["dialogue_id"] = s.video_id;
      j["turn"] = static_cast<std::int64_t>(n + 1);
      j["texts"] = {join_tokens(s.turns[n].response)};
      out << j.dump() << "\n";
    }
  }
}

struct PredRecord {
  std::string dialogue_id;
  std::int64_t turn;
  std::string method;
  std::string text;
  double log_prob;
  double score;
  std::optional<std::string> caption;
};

void write_predictions(const std::string& path,
                       const std::vector<PredRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Data, "cannot write predictions " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["dialogue_id"] = r.dialogue_id;
    j["turn"] = r.turn;
    j["method"] = r.method;
    j["text"] = r.text;
    j["log_prob"] = r.log_prob;
    j["score"] = r.score;
    if (r.caption) j["caption"] = *r.caption;
    out << j.dump() << "\n";
  }
}

// teacher-forced per-turn decoding over a split
template <typename T>
std::vector<PredRecord> generate_split(ModelParams<T>& params,
                                       const Vocab& vocab,
                                       const std::vector<DialogueSample>& samples,
                                       const RunConfig& rc,
                                       const DecodeConfig& dcfg,
                                       int max_history) {
  AssemblyOptions opts = rc.eval_assembly_options();
  opts.max_history = max_history;
  std::vector<PredRecord> records;
  bool recaption = rc.recaption;
  for (std::size_t d = 0; d < samples.size(); ++d) {
    const auto& s = samples[d];
    std::optional<std::vector<std::string>> generated_caption;
    if (recaption) {
      AssemblyOptions cap_opts = opts;
      cap_opts.include_video = true;
      Rng rng(seed_stream(dcfg.seed, kStreamGenerate, d, 0));
      auto ctx = assemble_clm_context(s, cap_opts, vocab);
      auto hyp = decode(params, ctx, dcfg, rng, Vocab::kCapSeg);
      generated_caption = ids_to_tokens(hyp.tokens, vocab);
    }
    for (std::size_t n = 1; n <= s.turns.size(); ++n) {
      AssemblyOptions turn_opts = opts;
      const std::vector<std::string>* override_cap = nullptr;
      if (recaption) {
        turn_opts.include_caption = true;
        override_cap = &*generated_caption;
      }
      auto ctx = assemble_rlm_context(s, static_cast<int>(n), turn_opts,
                                      vocab, override_cap);
      Rng rng(seed_stream(dcfg.seed, kStreamGenerate, d, n));
      auto hyp = decode(params, ctx, dcfg, rng, Vocab::kUser2Seg);
      PredRecord rec;
      rec.dialogue_id = s.video_id;
      rec.turn = static_cast<std::int64_t>(n);
      rec.method = decode_method_name(dcfg.method);
      rec.text = join_tokens(ids_to_tokens(hyp.tokens, vocab));
      rec.log_prob = hyp.log_prob;
      rec.score = hyp.score;
      if (generated_caption) rec.caption = join_tokens(*generated_caption);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

std::vector<EvalCase> cases_from_records(
    const std::vector<PredRecord>& records,
    const std::vector<DialogueSample>& samples) {
  std::map<std::pair<std::string, std::int64_t>, std::vector<std::string>> gold;
  for (const auto& s : samples)
    for (std::size_t n = 0; n < s.turns.size(); ++n)
      gold[{s.video_id, static_cast<std::int64_t>(n + 1)}] =
          s.turns[n].response;
  std::vector<EvalCase> cases;
  for (const auto& r : records) {
    auto it = gold.find({r.dialogue_id, r.turn});
    if (it == gold.end())
      raise(ErrorKind::Align, "prediction without a gold turn: " +
                                  r.dialogue_id);
    EvalCase c;
    c.candidate = normalize_text(r.text);
    c.references.push_back(it->second);
    cases.push_back(std::move(c));
  }
  return cases;
}

int run_make_synthetic(const std::string& out_dir, const SyntheticSpec& spec) {
  fs::create_directories(fs::path(out_dir) / "features");
  auto data = generate_synthetic(spec);
  save_dataset_dialogs((fs::path(out_dir) / "dialogs.json").string(),
                       data.samples);
  for (const auto& s : data.samples)
    write_features(
        (fs::path(out_dir) / "features" / (s.video_id + ".vaft")).string(),
        s.features);
  save_manifest((fs::path(out_dir) / "train.txt").string(), data.train_ids);
  save_manifest((fs::path(out_dir) / "val.txt").string(), data.val_ids);
  save_manifest((fs::path(out_dir) / "test.txt").string(), data.test_ids);
  save_oracle((fs::path(out_dir) / "oracle.json").string(), data.oracle);
  for (const auto& [name, ids] :
       {std::pair{"train", &data.train_ids}, {"val", &data.val_ids},
        {"test", &data.test_ids}}) {
    write_refs((fs::path(out_dir) / ("refs_" + std::string(name) + ".jsonl"))
                   .string(),
               filter_by_ids(data.samples, *ids));
  }
  // vocabulary over the train split
  std::vector<std::string> corpus;
  for (const auto& s : filter_by_ids(data.samples, data.train_ids)) {
    corpus.push_back(join_tokens(s.caption));
    for (const auto& t : s.turns) {
      corpus.push_back(join_tokens(t.question));
      corpus.push_back(join_tokens(t.response));
    }
  }
  save_vocab(build_vocab(corpus, 1),
             (fs::path(out_dir) / "vocab.txt").string());
  std::printf("wrote %zu dialogues to %s (bayes token acc %.4f, exact %.4f, "
              "noise floor %.6f)\n",
              data.samples.size(), out_dir.c_str(), data.oracle.bayes.token,
              data.oracle.bayes.exact, data.oracle.noise_floor);
  return 0;
}

template <typename T>
int run_train(RunConfig rc, bool resume) {
  Vocab vocab = load_or_build_vocab(rc);
  rc.model.vocab_size = vocab.size();
  rc.model.validate();
  auto train = load_split(rc, "train");
  auto val = load_split(rc, "val");
  if (train.empty()) raise(ErrorKind::Data, "train split is empty");
  fs::create_directories(rc.checkpoint_dir);
  if (rc.trainer.log_path.empty())
    rc.trainer.log_path =
        (fs::path(rc.checkpoint_dir) / "train_log.tsv").string();

  std::optional<Trainer<T>> trainer;
  std::string state_path =
      (fs::path(rc.checkpoint_dir) / "state.mmts").string();
  if (resume) {
    if (!fs::exists(state_path))
      raise(ErrorKind::Checkpoint, "no resumable state at " + state_path);
    auto [params, state] = load_state<T>(state_path);
    if (!(params.config == rc.model))
      raise(ErrorKind::Checkpoint,
            "state config does not match the requested run config");
    trainer.emplace(std::move(params), &vocab, &train, &val, rc.trainer);
    trainer->restore(state);
    std::printf("resuming from step %lld\n",
                static_cast<long long>(trainer->step()));
  } else {
    trainer.emplace(init_params<T>(rc.model, rc.trainer.seed), &vocab,
                    &train, &val, rc.trainer);
  }
  auto last = trainer->train(&std::cout);
  double val_loss = trainer->validation_loss();
  std::printf("done: step=%lld total=%.4f val=%.4f checkpoint=%s\n",
              static_cast<long long>(trainer->step()), last.total, val_loss,
              rc.checkpoint_dir.c_str());
  return 0;
}

template <typename T>
int run_generate(RunConfig rc, const std::string& checkpoint,
                 const std::string& split, const std::string& out_path,
                 std::int64_t limit) {
  Vocab vocab = load_or_build_vocab(rc);
  auto [config, params] = load_model<T>(checkpoint);
  if (config.vocab_size != vocab.size())
    raise(ErrorKind::Checkpoint,
          strprintf("checkpoint vocab size %lld does not match vocab file %d",
                    static_cast<long long>(config.vocab_size), vocab.size()));
  rc.model = config;
  auto samples = load_split(rc, split);
  if (limit > 0 && static_cast<std::int64_t>(samples.size()) > limit)
    samples.resize(limit);
  auto records =
      generate_split(params, vocab, samples, rc, rc.decode,
                     rc.trainer.max_history);
  write_predictions(out_path, records);
  std::printf("wrote %zu predictions to %s\n", records.size(),
              out_path.c_str());
  return 0;
}

int run_eval(const RunConfig& rc, const std::string& pred,
             std::string ref_path, const std::string& split,
             const std::string& out_prefix) {
  if (ref_path.empty()) {
    auto samples = load_split(rc, split);
    ref_path = out_prefix + ".refs.jsonl";
    write_refs(ref_path, samples);
  }
  auto cases = load_eval_cases(pred, ref_path);
  auto report = evaluate_cases(cases);
  double em = exact_match(cases);
  std::string table =
      report.table() + strprintf("%-8s %8.4f\n", "exact", em);
  std::fputs(table.c_str(), stdout);
  if (!out_prefix.empty()) {
    std::ofstream t(out_prefix + ".txt");
    t << table;
    std::ofstream j(out_prefix + ".json");
    auto record = nlohmann::json::parse(report.json());
    record["exact_match"] = em;
    j << record.dump(1) << "\n";
  }
  return 0;
}

template <typename T>
int run_ablate(RunConfig rc, const std::string& checkpoint,
               const std::string& axis, const std::string& split,
               const std::string& out_path, std::int64_t limit) {
  Vocab vocab = load_or_build_vocab(rc);
  auto [config, params] = load_model<T>(checkpoint);
  rc.model = config;
  auto samples = load_split(rc, split);
  if (limit > 0 && static_cast<std::int64_t>(samples.size()) > limit)
    samples.resize(limit);
  if (samples.empty()) raise(ErrorKind::Data, "ablation split is empty");

  struct Row {
    std::string label;
    MetricReport report;
    double exact;
  };
  std::vector<Row> rows;
  if (axis == "history") {
    for (int h : {0, 1, 2, 3, 5, 9}) {
      auto records =
          generate_split(params, vocab, samples, rc, rc.decode, h);
      auto cases = cases_from_records(records, samples);
      rows.push_back({std::to_string(h), evaluate_cases(cases),
                      exact_match(cases)});
    }
  } else if (axis == "decoding") {
    for (auto method : {DecodeConfig::Method::Greedy,
                        DecodeConfig::Method::Nucleus,
                        DecodeConfig::Method::Beam}) {
      DecodeConfig dcfg = rc.decode;
      dcfg.method = method;
      auto records = generate_split(params, vocab, samples, rc, dcfg,
                                    rc.trainer.max_history);
      auto cases = cases_from_records(records, samples);
      rows.push_back({decode_method_name(method), evaluate_cases(cases),
                      exact_match(cases)});
    }
  } else {
    raise(ErrorKind::Usage, "ablation axis must be history or decoding");
  }

  std::string header = strprintf(
      "%-10s %8s %8s %8s %8s %8s %8s %8s", axis.c_str(), "BLEU-1", "BLEU-2",
      "BLEU-3", "BLEU-4", "ROUGE-L", "CIDEr", "exact");
  std::puts(header.c_str());
  std::ofstream out;
  if (!out_path.empty()) out.open(out_path, std::ios::binary);
  for (const auto& row : rows) {
    std::printf("%-10s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n",
                row.label.c_str(), row.report.bleu1, row.report.bleu2,
                row.report.bleu3, row.report.bleu4, row.report.rouge,
                row.report.cider_score, row.exact);
    if (out.is_open()) {
      auto j = nlohmann::json::parse(row.report.json());
      j["axis"] = axis;
      j["value"] = row.label;
      j["exact_match"] = row.exact;
      out << j.dump() << "\n";
    }
  }
  return 0;
}

template <typename T>
int run_chat(RunConfig rc, const std::string& checkpoint,
             const std::string& video_id) {
  Vocab vocab = load_or_build_vocab(rc);
  auto [config, params] = load_model<T>(checkpoint);
  rc.model = config;
  auto all = load_dataset(rc.dialog_file, rc.feature_dir,
                          rc.model.feature_dim());
  const DialogueSample* sample = nullptr;
  for (const auto& s : all)
    if (s.video_id == video_id) sample = &s;
  if (!sample) raise(ErrorKind::Data, "unknown video_id " + video_id);

  AssemblyOptions opts = rc.eval_assembly_options();
  std::vector<DialogueTurn> history;
  std::string line;
  std::uint64_t turn_counter = 0;
  while (std::getline(std::cin, line)) {
    if (line == "/quit") return 0;
    if (line == "/reset") {
      history.clear();
      std::puts("history cleared");
      continue;
    }
    if (line.rfind("/history ", 0) == 0) {
      opts.max_history = std::stoi(line.substr(9));
      std::printf("history window set to %d\n", opts.max_history);
      continue;
    }
    if (line.empty()) continue;
    auto question = normalize_text(line);
    auto ctx = assemble_chat_context(
        opts.include_video ? &sample->features : nullptr,
        opts.include_caption ? &sample->caption : nullptr, history, question,
        opts, vocab);
    Rng rng(seed_stream(rc.decode.seed, kStreamGenerate, 0xC5A7,
                        turn_counter++));
    auto hyp = decode(params, ctx, rc.decode, rng, Vocab::kUser2Seg);
    auto answer = ids_to_tokens(hyp.tokens, vocab);
    std::printf("%s\n", join_tokens(answer).c_str());
    DialogueTurn t;
    t.question = question;
    t.response = answer;
    history.push_back(std::move(t));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"universal multimodal transformer for video-grounded dialogue"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string config_path;
  std::string tasks_flag, setting_flag, decode_flag;

  app.add_option("--config", config_path, "key=value run configuration file");
  app.add_option("--data", rc.data_dir, "data root (or $MMDIALOG_DATA)");
  app.add_option("--precision", rc.precision, "32 or 64");
  app.add_option("--setting", setting_flag,
                 "text-only | text-video | text-video-no-caption");
  app.add_flag("--recaption", rc.recaption,
               "two-stage caption-free inference");
  app.add_option("--tasks", tasks_flag, "subset of rlm,vasm,clm");
  app.add_option("--max-history", rc.trainer.max_history,
                 "history turns per context");
  app.add_option("--seed", rc.trainer.seed, "training/init seed");
  app.add_option("--decode", decode_flag, "greedy | beam | nucleus");
  app.add_option("--beam-size", rc.decode.beam_size, "beam width");
  app.add_option("--max-length", rc.decode.max_length, "decode length cap");
  app.add_option("--length-penalty", rc.decode.length_penalty,
                 "final-ranking exponent");
  app.add_option("--nucleus-p", rc.decode.nucleus_p, "top-p mass");
  app.add_option("--decode-seed", rc.decode.seed, "sampling seed");
  app.add_option("--checkpoint-dir", rc.checkpoint_dir,
                 "where train writes checkpoints");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->fallthrough();
  bool resume = false;
  train_cmd->add_option("--steps", rc.trainer.steps, "optimizer steps");
  train_cmd->add_option("--batch-size", rc.trainer.batch_size, "per task");
  train_cmd->add_option("--lr", rc.trainer.lr, "learning rate");
  train_cmd->add_option("--clip-norm", rc.trainer.clip_norm, "grad clip");
  train_cmd->add_option("--checkpoint-every", rc.trainer.checkpoint_every,
                        "periodic checkpoint cadence");
  train_cmd->add_option("--eval-every", rc.trainer.eval_every,
                        "validation cadence");
  train_cmd->add_option("--layers", rc.model.n_layers, "transformer layers");
  train_cmd->add_option("--hidden", rc.model.hidden, "hidden width");
  train_cmd->add_option("--heads", rc.model.n_heads, "attention heads");
  train_cmd->add_option("--max-positions", rc.model.max_positions,
                        "sequence capacity");
  train_cmd->add_option("--d-v", rc.model.d_v, "video feature dim per stream");
  train_cmd->add_option("--d-a", rc.model.d_a, "audio feature dim");
  train_cmd->add_option("--dropout", rc.model.dropout_rate, "dropout rate");
  train_cmd->add_flag("--resume", resume, "continue from state.mmts");
  train_cmd->add_flag("--sample-tasks", rc.trainer.sample_tasks,
                      "sample one task per step instead of summing");

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "decode a split");
  gen_cmd->fallthrough();
  std::string checkpoint, split = "test", out_path = "predictions.jsonl";
  std::int64_t limit = 0;
  gen_cmd->add_option("--checkpoint", checkpoint, "model.mmdf")->required();
  gen_cmd->add_option("--split", split, "train | val | test | all");
  gen_cmd->add_option("--out", out_path, "prediction jsonl");
  gen_cmd->add_option("--limit", limit, "cap the dialogue count");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score predictions");
  eval_cmd->fallthrough();
  std::string pred_path, ref_path, report_prefix = "report";
  eval_cmd->add_option("--pred", pred_path, "prediction jsonl")->required();
  eval_cmd->add_option("--refs", ref_path, "reference jsonl");
  eval_cmd->add_option("--split", split, "derive references from this split");
  eval_cmd->add_option("--out", report_prefix, "report path prefix");

  // ablate
  auto* abl_cmd = app.add_subcommand("ablate", "history/decoding sweeps");
  abl_cmd->fallthrough();
  std::string axis = "history";
  abl_cmd->add_option("--checkpoint", checkpoint, "model.mmdf")->required();
  abl_cmd->add_option("--axis", axis, "history | decoding")->required();
  abl_cmd->add_option("--split", split, "evaluation split");
  abl_cmd->add_option("--out", out_path, "row records jsonl");
  abl_cmd->add_option("--limit", limit, "cap the dialogue count");

  // chat
  auto* chat_cmd = app.add_subcommand("chat", "interactive REPL");
  chat_cmd->fallthrough();
  std::string video_id;
  chat_cmd->add_option("--checkpoint", checkpoint, "model.mmdf")->required();
  chat_cmd->add_option("--video-id", video_id, "video to chat about")
      ->required();

  // make-synthetic
  auto* synth_cmd =
      app.add_subcommand("make-synthetic", "emit a synthetic dataset");
  synth_cmd->fallthrough();
  SyntheticSpec spec;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--dialogues", spec.n_dialogues, "dialogue count");
  synth_cmd->add_option("--turns", spec.turns_per_dialogue, "turns each");
  synth_cmd->add_option("--activities", spec.n_activities, "latent classes");
  synth_cmd->add_option("--noise-std", spec.noise_std, "feature noise sigma");
  synth_cmd->add_option("--feature-t", spec.feature_t, "rows per video");
  synth_cmd->add_option("--synth-d-v", spec.d_v, "video dim per stream");
  synth_cmd->add_option("--synth-d-a", spec.d_a, "audio dim");
  synth_cmd->add_option("--count-scale", spec.count_scale,
                        "people-count encoding scale");
  synth_cmd->add_option("--drift-scale", spec.drift_scale,
                        "per-step drift scale");
  synth_cmd->add_option("--synth-seed", spec.seed, "generator seed");

  try {
    app.parse(argc, argv);

    if (!config_path.empty()) {
      apply_config_entries(rc, parse_config_file(config_path));
      // flags win over the file: parse the command line again on top
      app.clear();
      app.parse(argc, argv);
    }
    if (!setting_flag.empty()) rc.setting = parse_setting(setting_flag);
    if (!tasks_flag.empty()) rc.tasks = tasks_flag;
    if (!decode_flag.empty())
      rc.decode.method = parse_decode_method(decode_flag);

    if (synth_cmd->parsed()) return run_make_synthetic(synth_out, spec);

    rc.resolve();
    if (rc.precision != 32 && rc.precision != 64)
      raise(ErrorKind::Config, "precision must be 32 or 64");

    auto dispatch = [&](auto&& fn) {
      if (rc.precision == 64)
        return fn(double{});
      else
        return fn(float{});
    };

    if (train_cmd->parsed())
      return dispatch([&](auto tag) {
        return run_train<decltype(tag)>(rc, resume);
      });
    if (gen_cmd->parsed())
      return dispatch([&](auto tag) {
        return run_generate<decltype(tag)>(rc, checkpoint, split, out_path,
                                           limit);
      });
    if (eval_cmd->parsed())
      return run_eval(rc, pred_path, ref_path, split, report_prefix);
    if (abl_cmd->parsed())
      return dispatch([&](auto tag) {
        return run_ablate<decltype(tag)>(rc, checkpoint, axis, split,
                                         out_path, limit);
      });
    if (chat_cmd->parsed())
      return dispatch([&](auto tag) {
        return run_chat<decltype(tag)>(rc, checkpoint, video_id);
      });
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", error_kind_name(e.kind()),
                 e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 1;
  }
}
