#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mmd/batch.hpp"
#include "mmd/checkpoint.hpp"
#include "mmd/model.hpp"
#include "mmd/synthetic.hpp"

namespace mmd {

// ---- per-task losses (Eq. 3/4/5 as per-position means) ----

template <typename T>
Tensor<T> rlm_loss(Tape<T>& tape, Tensor<T> lm_logits,
                   const SequenceBatch& batch) {
  if (batch.task != TaskTag::RLM)
    raise(ErrorKind::Usage, "rlm_loss on a non-RLM batch");
  std::vector<TokenId> targets(batch.lm_targets.size(), 0);
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (batch.lm_targets[i] >= 0) targets[i] = batch.lm_targets[i];
  return tape.cross_entropy(lm_logits, std::move(targets), batch.lm_mask);
}

template <typename T>
Tensor<T> clm_loss(Tape<T>& tape, Tensor<T> lm_logits,
                   const SequenceBatch& batch) {
  if (batch.task != TaskTag::CLM)
    raise(ErrorKind::Usage, "clm_loss on a non-CLM batch");
  std::vector<TokenId> targets(batch.lm_targets.size(), 0);
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (batch.lm_targets[i] >= 0) targets[i] = batch.lm_targets[i];
  return tape.cross_entropy(lm_logits, std::move(targets), batch.lm_mask);
}

template <typename T>
Tensor<T> vasm_loss(Tape<T>& tape, Tensor<T> feature_preds,
                    const SequenceBatch& batch) {
  if (batch.task != TaskTag::VASM)
    raise(ErrorKind::Usage, "vasm_loss on a non-VASM batch");
  const i64 l = batch.length(), f = batch.feature_dim;
  std::vector<T> tgt(static_cast<std::size_t>(l * f), T(0));
  for (i64 p = 0; p < l; ++p) {
    if (!batch.feature_mask[p]) continue;
    const float* row = batch.feature_row(batch.feature_targets[p]);
    for (i64 j = 0; j < f; ++j)
      tgt[static_cast<std::size_t>(p * f + j)] = static_cast<T>(row[j]);
  }
  Tensor<T> targets = Tensor<T>::from_data({l, f}, std::move(tgt));
  return tape.squared_error(feature_preds, targets, batch.feature_mask);
}

// ---- Adam ----

template <typename T>
struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  i64 t = 0;
  std::vector<std::vector<T>> m, v;

  void init(const ModelParams<T>& params) {
    m.clear();
    v.clear();
    for (const auto& [name, p] : params.named) {
      m.emplace_back(p.numel(), T(0));
      v.emplace_back(p.numel(), T(0));
    }
    t = 0;
  }
};

// standard bias-corrected Adam over whatever grads are populated (missing
// grads count as zero)
template <typename T>
void adam_update(ModelParams<T>& params, AdamState<T>& adam) {
  if (adam.m.size() != params.named.size())
    raise(ErrorKind::Shape, "adam state not initialized for these params");
  ++adam.t;
  T bias1 = T(1) - static_cast<T>(std::pow(adam.beta1, double(adam.t)));
  T bias2 = T(1) - static_cast<T>(std::pow(adam.beta2, double(adam.t)));
  for (std::size_t i = 0; i < params.named.size(); ++i) {
    auto& p = params.named[i].second;
    p.ensure_grad();
    if (static_cast<i64>(adam.m[i].size()) != p.numel())
      raise(ErrorKind::Shape,
            "adam moment shape mismatch for " + params.named[i].first);
    kernels::adam_step(p.data(), p.grad().data(), adam.m[i].data(),
                       adam.v[i].data(), p.numel(), static_cast<T>(adam.lr),
                       static_cast<T>(adam.beta1), static_cast<T>(adam.beta2),
                       static_cast<T>(adam.eps), bias1, bias2);
  }
}

template <typename T>
double grad_norm(const ModelParams<T>& params) {
  double total = 0.0;
  for (const auto& [name, p] : params.named)
    if (p.has_grad())
      total += static_cast<double>(
          kernels::sum_squares(p.grad().data(), p.numel()));
  return std::sqrt(total);
}

template <typename T>
void scale_grads(ModelParams<T>& params, double factor) {
  for (auto& [name, p] : params.named) {
    if (!p.has_grad()) continue;
    for (auto& g : p.grad()) g = static_cast<T>(g * factor);
  }
}

// ---- combined step ----

struct TaskWeights {
  double rlm = 1.0;
  double vasm = 1.0;
  double clm = 1.0;
};

struct StepReport {
  double rlm = std::numeric_limits<double>::quiet_NaN();
  double vasm = std::numeric_limits<double>::quiet_NaN();
  double clm = std::numeric_limits<double>::quiet_NaN();
  double total = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;
  bool applied = false;
  std::string abort_reason;
};

// One combined optimizer step: weighted sum of per-task batch-mean losses,
// one backward pass, gradient clipping, one Adam update, tape reset. A
// non-finite loss aborts the step without touching the parameters.
template <typename T>
StepReport train_step(ModelParams<T>& params, AdamState<T>& adam,
                      Tape<T>& tape,
                      const std::vector<SequenceBatch>& rlm_batches,
                      const std::vector<SequenceBatch>& vasm_batches,
                      const std::vector<SequenceBatch>& clm_batches,
                      const TaskWeights& weights, double clip_norm,
                      Rng& dropout_rng) {
  if (rlm_batches.empty() && vasm_batches.empty() && clm_batches.empty())
    raise(ErrorKind::Usage, "train_step with no active task");
  StepReport report;
  params.zero_grads();

  auto batch_mean = [&](const std::vector<SequenceBatch>& batches,
                        auto&& per_sample) -> Tensor<T> {
    Tensor<T> acc;
    for (const auto& b : batches) {
      Tensor<T> one = per_sample(b);
      acc = acc.defined() ? tape.add(acc, one) : one;
    }
    return tape.scale(acc, static_cast<T>(1.0 / double(batches.size())));
  };

  try {
    Tensor<T> total;
    auto mix = [&](Tensor<T> loss, double weight, double* slot) {
      *slot = static_cast<double>(loss.item());
      Tensor<T> weighted = tape.scale(loss, static_cast<T>(weight));
      total = total.defined() ? tape.add(total, weighted) : weighted;
    };
    if (!rlm_batches.empty())
      mix(batch_mean(rlm_batches,
                     [&](const SequenceBatch& b) {
                       auto out =
                           forward(tape, b, params, RunMode::Train, &dropout_rng);
                       return rlm_loss(tape, out.lm_logits, b);
                     }),
          weights.rlm, &report.rlm);
    if (!vasm_batches.empty())
      mix(batch_mean(vasm_batches,
                     [&](const SequenceBatch& b) {
                       auto out =
                           forward(tape, b, params, RunMode::Train, &dropout_rng);
                       return vasm_loss(tape, out.feature_preds, b);
                     }),
          weights.vasm, &report.vasm);
    if (!clm_batches.empty())
      mix(batch_mean(clm_batches,
                     [&](const SequenceBatch& b) {
                       auto out =
                           forward(tape, b, params, RunMode::Train, &dropout_rng);
                       return clm_loss(tape, out.lm_logits, b);
                     }),
          weights.clm, &report.clm);

    report.total = static_cast<double>(total.item());
    if (!std::isfinite(report.total)) {
      report.abort_reason = "non-finite total loss";
      tape.reset();
      return report;
    }
    tape.backward(total);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Numerical) throw;
    report.abort_reason = e.what();
    tape.reset();
    return report;
  }

  report.grad_norm = grad_norm(params);
  if (!std::isfinite(report.grad_norm)) {
    report.abort_reason = "non-finite gradient";
    params.zero_grads();
    tape.reset();
    return report;
  }
  if (clip_norm > 0.0 && report.grad_norm > clip_norm)
    scale_grads(params, clip_norm / report.grad_norm);
  adam_update(params, adam);
  tape.reset();
  report.applied = true;
  return report;
}

// ---- deterministic shuffled sample streams ----

namespace trainer_detail {
constexpr std::uint64_t kStreamData = 0x44415441;
constexpr std::uint64_t kStreamDrop = 0x44524f50;
constexpr std::uint64_t kStreamTask = 0x5441534b;
}  // namespace trainer_detail

// Cycles a fixed item list in per-epoch shuffled order; (epoch, cursor)
// fully determine the remaining sequence, which is what makes resumed runs
// bit-reproducible.
class SampleStream {
 public:
  SampleStream() = default;
  SampleStream(std::vector<std::int64_t> items, std::uint64_t seed,
               std::uint64_t stream_id)
      : items_(std::move(items)), seed_(seed), id_(stream_id) {
    reshuffle();
  }

  bool empty() const { return items_.empty(); }

  std::int64_t next() {
    if (items_.empty()) raise(ErrorKind::Usage, "draw from empty stream");
    if (state_.cursor >= order_.size()) {
      ++state_.epoch;
      state_.cursor = 0;
      reshuffle();
    }
    return order_[state_.cursor++];
  }

  StreamState state() const { return state_; }
  void restore(const StreamState& s) {
    state_ = s;
    reshuffle();
  }

 private:
  void reshuffle() {
    order_ = items_;
    Rng rng(seed_stream(seed_, trainer_detail::kStreamData, id_, state_.epoch));
    rng.shuffle(order_.begin(), order_.end());
  }

  std::vector<std::int64_t> items_;
  std::vector<std::int64_t> order_;
  std::uint64_t seed_ = 0;
  std::uint64_t id_ = 0;
  StreamState state_;
};

// ---- training loop ----

struct TrainerConfig {
  bool rlm = true, vasm = true, clm = true;
  TaskWeights weights;
  double lr = 3e-4;
  double clip_norm = 1.0;
  i64 batch_size = 16;
  i64 steps = 500;
  i64 checkpoint_every = 0;  // 0: only the final checkpoint
  i64 eval_every = 0;        // 0: no periodic validation
  int max_history = 3;
  bool include_video = true;
  bool include_caption = true;
  bool sample_tasks = false;  // one sampled task per step instead of the sum
  std::uint64_t seed = 0;
  std::string checkpoint_dir;
  std::string log_path;
};

template <typename T>
class Trainer {
 public:
  Trainer(ModelParams<T> params, const Vocab* vocab,
          const std::vector<DialogueSample>* train,
          const std::vector<DialogueSample>* val, TrainerConfig config)
      : params_(std::move(params)),
        vocab_(vocab),
        train_(train),
        val_(val),
        config_(std::move(config)) {
    adam_.lr = config_.lr;
    adam_.init(params_);
    build_streams();
  }

  AssemblyOptions assembly_options() const {
    AssemblyOptions opts;
    opts.max_history = config_.max_history;
    opts.include_video = config_.include_video;
    opts.include_caption = config_.include_caption;
    opts.max_positions = params_.config.max_positions;
    return opts;
  }

  ModelParams<T>& params() { return params_; }
  i64 step() const { return step_; }

  void restore(const TrainState<T>& state) {
    step_ = state.step;
    adam_.t = state.adam_t;
    adam_.m = state.adam_m;
    adam_.v = state.adam_v;
    rlm_stream_.restore(state.streams[0]);
    vasm_stream_.restore(state.streams[1]);
    clm_stream_.restore(state.streams[2]);
  }

  TrainState<T> state() const {
    TrainState<T> s;
    s.step = step_;
    s.adam_t = adam_.t;
    s.adam_m = adam_.m;
    s.adam_v = adam_.v;
    s.streams[0] = rlm_stream_.state();
    s.streams[1] = vasm_stream_.state();
    s.streams[2] = clm_stream_.state();
    return s;
  }

  StepReport run_one_step() {
    i64 step_index = step_ + 1;
    bool want_rlm = config_.rlm && !rlm_stream_.empty();
    bool want_vasm = config_.vasm && !vasm_stream_.empty();
    bool want_clm = config_.clm && !clm_stream_.empty();
    if (config_.sample_tasks) {
      std::vector<int> active;
      if (want_rlm) active.push_back(0);
      if (want_vasm) active.push_back(1);
      if (want_clm) active.push_back(2);
      Rng task_rng(seed_stream(config_.seed, trainer_detail::kStreamTask,
                               static_cast<std::uint64_t>(step_index)));
      int pick = active.empty() ? -1
                                : active[task_rng.below(active.size())];
      want_rlm = pick == 0;
      want_vasm = pick == 1;
      want_clm = pick == 2;
    }

    AssemblyOptions opts = assembly_options();
    std::vector<SequenceBatch> rlm_b, vasm_b, clm_b;
    for (i64 i = 0; want_rlm && i < config_.batch_size; ++i) {
      std::int64_t item = rlm_stream_.next();
      auto [d, turn] = decode_rlm_item(item);
      rlm_b.push_back(assemble_rlm((*train_)[d], turn, opts, *vocab_));
    }
    for (i64 i = 0; want_vasm && i < config_.batch_size; ++i) {
      auto b = assemble_vasm((*train_)[vasm_stream_.next()], opts, *vocab_);
      vasm_b.push_back(std::move(*b));  // stream holds only eligible samples
    }
    for (i64 i = 0; want_clm && i < config_.batch_size; ++i) {
      auto b = assemble_clm((*train_)[clm_stream_.next()], opts, *vocab_);
      clm_b.push_back(std::move(*b));
    }
    if (!config_.include_video)
      for (const auto* bs : {&rlm_b, &vasm_b, &clm_b})
        for (const auto& b : *bs)
          if (b.feature_slot_count() > 0)
            raise(ErrorKind::Config,
                  "text-only run assembled a video feature slot");

    Rng drop_rng(seed_stream(config_.seed, trainer_detail::kStreamDrop,
                             static_cast<std::uint64_t>(step_index)));
    StepReport report = train_step(params_, adam_, tape_, rlm_b, vasm_b,
                                   clm_b, config_.weights, config_.clip_norm,
                                   drop_rng);
    step_ = step_index;
    return report;
  }

  // runs until config.steps, writing the tab-separated log and periodic
  // checkpoints; returns the last report
  StepReport train(std::ostream* echo = nullptr) {
    std::ofstream log;
    if (!config_.log_path.empty()) {
      log.open(config_.log_path, step_ > 0 ? std::ios::app : std::ios::trunc);
      if (!log)
        raise(ErrorKind::Data, "cannot write log " + config_.log_path);
    }
    StepReport last;
    while (step_ < config_.steps) {
      last = run_one_step();
      std::string line = strprintf(
          "%lld\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f",
          static_cast<long long>(step_), last.rlm, last.vasm, last.clm,
          last.total, last.grad_norm);
      if (log.is_open()) log << line << '\n';
      if (echo) *echo << line << '\n';
      if (!last.applied) {
        std::string note = "# step aborted: " + last.abort_reason;
        if (log.is_open()) log << note << '\n';
        if (echo) *echo << note << '\n';
      }
      if (config_.eval_every > 0 && step_ % config_.eval_every == 0 && val_) {
        double vl = validation_loss();
        std::string note = strprintf("# val step=%lld loss=%.6f",
                                     static_cast<long long>(step_), vl);
        if (log.is_open()) log << note << '\n';
        if (echo) *echo << note << '\n';
      }
      if (!config_.checkpoint_dir.empty() && config_.checkpoint_every > 0 &&
          step_ % config_.checkpoint_every == 0)
        save_checkpoint();
    }
    if (!config_.checkpoint_dir.empty()) save_checkpoint();
    return last;
  }

  void save_checkpoint() const {
    namespace fs = std::filesystem;
    fs::create_directories(config_.checkpoint_dir);
    save_model((fs::path(config_.checkpoint_dir) / "model.mmdf").string(),
               params_);
    save_state((fs::path(config_.checkpoint_dir) / "state.mmts").string(),
               params_, state());
  }

  // combined eval-mode loss over up to 64 validation samples
  double validation_loss() {
    if (!val_ || val_->empty()) return std::numeric_limits<double>::quiet_NaN();
    AssemblyOptions opts = assembly_options();
    Tape<T> tape;
    double total = 0.0;
    i64 count = 0;
    for (std::size_t d = 0; d < val_->size() && count < 64; ++d) {
      const auto& s = (*val_)[d];
      for (std::size_t turn = 1; turn <= s.turns.size() && count < 64;
           ++turn) {
        auto b = assemble_rlm(s, static_cast<int>(turn), opts, *vocab_);
        auto out = forward(tape, b, params_, RunMode::Eval);
        total += static_cast<double>(rlm_loss(tape, out.lm_logits, b).item());
        tape.reset();
        ++count;
      }
    }
    return count ? total / double(count) : 0.0;
  }

 private:
  void build_streams() {
    AssemblyOptions opts = assembly_options();
    std::vector<std::int64_t> rlm_items, vasm_items, clm_items;
    for (std::size_t d = 0; d < train_->size(); ++d) {
      const auto& s = (*train_)[d];
      for (std::size_t t = 1; t <= s.turns.size(); ++t)
        rlm_items.push_back(encode_rlm_item(d, t));
      if (s.features.t >= 2) vasm_items.push_back(static_cast<i64>(d));
      if (!s.caption.empty()) clm_items.push_back(static_cast<i64>(d));
    }
    (void)opts;
    rlm_stream_ = SampleStream(std::move(rlm_items), config_.seed, 0);
    vasm_stream_ = SampleStream(std::move(vasm_items), config_.seed, 1);
    clm_stream_ = SampleStream(std::move(clm_items), config_.seed, 2);
  }

  static std::int64_t encode_rlm_item(std::size_t d, std::size_t turn) {
    return static_cast<std::int64_t>(d) * 1024 + static_cast<std::int64_t>(turn);
  }
  static std::pair<std::size_t, int> decode_rlm_item(std::int64_t item) {
    return {static_cast<std::size_t>(item / 1024),
            static_cast<int>(item % 1024)};
  }

  ModelParams<T> params_;
  AdamState<T> adam_;
  Tape<T> tape_;
  const Vocab* vocab_;
  const std::vector<DialogueSample>* train_;
  const std::vector<DialogueSample>* val_;
  TrainerConfig config_;
  SampleStream rlm_stream_, vasm_stream_, clm_stream_;
  i64 step_ = 0;
};

// ---- evaluation helpers ----

// eval-mode RLM loss averaged over every (dialogue, turn) pair
template <typename T>
double rlm_eval_loss(ModelParams<T>& params,
                     const std::vector<DialogueSample>& samples,
                     const AssemblyOptions& opts, const Vocab& vocab) {
  Tape<T> tape;
  double total = 0.0;
  i64 count = 0;
  for (const auto& s : samples) {
    for (std::size_t turn = 1; turn <= s.turns.size(); ++turn) {
      auto b = assemble_rlm(s, static_cast<int>(turn), opts, vocab);
      auto out = forward(tape, b, params, RunMode::Eval);
      total += static_cast<double>(rlm_loss(tape, out.lm_logits, b).item());
      tape.reset();
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

// teacher-forced next-token accuracy over RLM masked positions
template <typename T>
double token_accuracy(ModelParams<T>& params,
                      const std::vector<DialogueSample>& samples,
                      const AssemblyOptions& opts, const Vocab& vocab) {
  Tape<T> tape;
  i64 hits = 0, total = 0;
  for (const auto& s : samples) {
    for (std::size_t turn = 1; turn <= s.turns.size(); ++turn) {
      auto b = assemble_rlm(s, static_cast<int>(turn), opts, vocab);
      auto out = forward(tape, b, params, RunMode::Eval);
      const i64 v = out.lm_logits.cols();
      for (i64 p = 0; p < b.length(); ++p) {
        if (!b.lm_mask[p]) continue;
        const T* row = out.lm_logits.data() + p * v;
        i64 best = 0;
        for (i64 j = 1; j < v; ++j)
          if (row[j] > row[best]) best = j;
        hits += (best == b.lm_targets[p]) ? 1 : 0;
        ++total;
      }
      tape.reset();
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

// mean squared next-feature error over VASM positions (position-weighted)
template <typename T>
double vasm_mse(ModelParams<T>& params,
                const std::vector<DialogueSample>& samples,
                const AssemblyOptions& opts, const Vocab& vocab) {
  Tape<T> tape;
  double total = 0.0;
  i64 count = 0;
  for (const auto& s : samples) {
    auto b = assemble_vasm(s, opts, vocab);
    if (!b) continue;
    auto out = forward(tape, *b, params, RunMode::Eval);
    const i64 f = b->feature_dim;
    for (i64 p = 0; p < b->length(); ++p) {
      if (!b->feature_mask[p]) continue;
      const float* tgt = b->feature_row(b->feature_targets[p]);
      const T* pred = out.feature_preds.data() + p * f;
      double err = 0.0;
      for (i64 j = 0; j < f; ++j) {
        double d = static_cast<double>(pred[j]) - static_cast<double>(tgt[j]);
        err += d * d;
      }
      total += err;
      ++count;
    }
    tape.reset();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace mmd
