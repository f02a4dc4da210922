#pragma once

// Model checkpoint (MMDF): magic, format version, serialized ModelConfig,
// then each named tensor as (name length, name bytes, rank, dims, float32
// little-endian values). The training-state sidecar (MMTS) additionally
// carries native-precision parameters, Adam moments, the step counter and
// data-stream cursors so a resumed run continues step-for-step.

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mmd/model.hpp"

namespace mmd {

namespace ckpt_detail {

constexpr char kModelMagic[4] = {'M', 'M', 'D', 'F'};
constexpr std::uint32_t kModelVersion = 1;
constexpr char kStateMagic[4] = {'M', 'M', 'T', 'S'};
constexpr std::uint32_t kStateVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) raise(ErrorKind::Checkpoint, "truncated checkpoint " + path);
  return v;
}

inline void put_string(std::ofstream& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string take_string(std::ifstream& in, const std::string& path) {
  auto n = take<std::uint32_t>(in, path);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) raise(ErrorKind::Checkpoint, "truncated checkpoint " + path);
  return s;
}

inline void put_config(std::ofstream& out, const ModelConfig& c) {
  put(out, c.n_layers);
  put(out, c.hidden);
  put(out, c.n_heads);
  put(out, c.vocab_size);
  put(out, c.max_positions);
  put(out, c.d_v);
  put(out, c.d_a);
  put(out, c.dropout_rate);
}

inline ModelConfig take_config(std::ifstream& in, const std::string& path) {
  ModelConfig c;
  c.n_layers = take<i64>(in, path);
  c.hidden = take<i64>(in, path);
  c.n_heads = take<i64>(in, path);
  c.vocab_size = take<i64>(in, path);
  c.max_positions = take<i64>(in, path);
  c.d_v = take<i64>(in, path);
  c.d_a = take<i64>(in, path);
  c.dropout_rate = take<double>(in, path);
  return c;
}

inline void check_magic(std::ifstream& in, const std::string& path,
                        const char expect[4], std::uint32_t version) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, expect, 4) != 0)
    raise(ErrorKind::Checkpoint, "bad magic in " + path);
  auto v = take<std::uint32_t>(in, path);
  if (v != version)
    raise(ErrorKind::Checkpoint,
          strprintf("unsupported format version %u in %s", v, path.c_str()));
}

}  // namespace ckpt_detail

template <typename T>
void save_model(const std::string& path, const ModelParams<T>& params) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Checkpoint, "cannot write checkpoint " + path);
  out.write(kModelMagic, 4);
  put(out, kModelVersion);
  put_config(out, params.config);
  put(out, static_cast<std::uint32_t>(params.named.size()));
  for (const auto& [name, t] : params.named) {
    put_string(out, name);
    put(out, static_cast<std::uint32_t>(t.shape().size()));
    for (i64 d : t.shape()) put(out, static_cast<std::uint64_t>(d));
    for (i64 i = 0; i < t.numel(); ++i)
      put(out, static_cast<float>(t.at(i)));
  }
  if (!out) raise(ErrorKind::Checkpoint, "short write to " + path);
}

template <typename T>
std::pair<ModelConfig, ModelParams<T>> load_model(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Checkpoint, "cannot read checkpoint " + path);
  check_magic(in, path, kModelMagic, kModelVersion);
  ModelConfig config = take_config(in, path);
  config.validate();
  ModelParams<T> params = init_params<T>(config, 0);
  auto count = take<std::uint32_t>(in, path);
  if (count != params.named.size())
    raise(ErrorKind::Checkpoint,
          strprintf("checkpoint %s has %u tensors, config implies %zu",
                    path.c_str(), count, params.named.size()));
  for (auto& [name, t] : params.named) {
    std::string got = take_string(in, path);
    if (got != name)
      raise(ErrorKind::Checkpoint,
            strprintf("checkpoint %s: expected tensor %s, found %s",
                      path.c_str(), name.c_str(), got.c_str()));
    auto rank = take<std::uint32_t>(in, path);
    if (rank != t.shape().size())
      raise(ErrorKind::Checkpoint, "rank mismatch for tensor " + name);
    for (i64 d : t.shape()) {
      auto dim = take<std::uint64_t>(in, path);
      if (dim != static_cast<std::uint64_t>(d))
        raise(ErrorKind::Checkpoint, "dim mismatch for tensor " + name);
    }
    for (i64 i = 0; i < t.numel(); ++i)
      t.at(i) = static_cast<T>(take<float>(in, path));
  }
  return {config, std::move(params)};
}

struct StreamState {
  std::uint64_t epoch = 0;
  std::uint64_t cursor = 0;
};

template <typename T>
struct TrainState {
  i64 step = 0;
  i64 adam_t = 0;
  StreamState streams[3];  // rlm, vasm, clm
  std::vector<std::vector<T>> adam_m, adam_v;  // aligned with params.named
};

template <typename T>
void save_state(const std::string& path, const ModelParams<T>& params,
                const TrainState<T>& state) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Checkpoint, "cannot write state " + path);
  out.write(kStateMagic, 4);
  put(out, kStateVersion);
  put(out, static_cast<std::uint8_t>(sizeof(T)));
  put_config(out, params.config);
  put(out, state.step);
  put(out, state.adam_t);
  for (const auto& s : state.streams) {
    put(out, s.epoch);
    put(out, s.cursor);
  }
  put(out, static_cast<std::uint32_t>(params.named.size()));
  for (std::size_t i = 0; i < params.named.size(); ++i) {
    const auto& t = params.named[i].second;
    put_string(out, params.named[i].first);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
    out.write(reinterpret_cast<const char*>(state.adam_m[i].data()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
    out.write(reinterpret_cast<const char*>(state.adam_v[i].data()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
  }
  if (!out) raise(ErrorKind::Checkpoint, "short write to " + path);
}

template <typename T>
std::pair<ModelParams<T>, TrainState<T>> load_state(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Checkpoint, "cannot read state " + path);
  check_magic(in, path, kStateMagic, kStateVersion);
  auto scalar = take<std::uint8_t>(in, path);
  if (scalar != sizeof(T))
    raise(ErrorKind::Checkpoint,
          strprintf("state %s was written at %u-byte precision, run uses %zu",
                    path.c_str(), scalar, sizeof(T)));
  ModelConfig config = take_config(in, path);
  config.validate();
  ModelParams<T> params = init_params<T>(config, 0);
  TrainState<T> state;
  state.step = take<i64>(in, path);
  state.adam_t = take<i64>(in, path);
  for (auto& s : state.streams) {
    s.epoch = take<std::uint64_t>(in, path);
    s.cursor = take<std::uint64_t>(in, path);
  }
  auto count = take<std::uint32_t>(in, path);
  if (count != params.named.size())
    raise(ErrorKind::Checkpoint, "tensor count mismatch in state " + path);
  state.adam_m.resize(count);
  state.adam_v.resize(count);
  for (std::size_t i = 0; i < params.named.size(); ++i) {
    auto& t = params.named[i].second;
    std::string got = take_string(in, path);
    if (got != params.named[i].first)
      raise(ErrorKind::Checkpoint, "tensor order mismatch in state " + path);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
    state.adam_m[i].resize(t.numel());
    state.adam_v[i].resize(t.numel());
    in.read(reinterpret_cast<char*>(state.adam_m[i].data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
    in.read(reinterpret_cast<char*>(state.adam_v[i].data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!in) raise(ErrorKind::Checkpoint, "truncated state " + path);
  }
  return {std::move(params), std::move(state)};
}

}  // namespace mmd
