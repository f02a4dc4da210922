#pragma once

// Tape-based reverse-mode differentiation over the fixed op set the model
// needs: matmul, add, scale, GELU, softmax (optionally prefix-masked),
// layer_norm, embedding lookup, concatenate, slice, transpose,
// cross-entropy and squared-error reductions, plus dropout.
//
// One tape is confined to one worker. Recording an op appends a backward
// closure; backward() replays the closures in reverse. Tensors not produced
// by a live tape are plain immutable values.

#include <cstdint>
#include <functional>
#include <vector>

#include "mmd/common.hpp"
#include "mmd/kernels.hpp"
#include "mmd/tensor.hpp"

namespace mmd {

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
    ++epoch_;
  }

  // Populates grads of every tensor reachable from loss that either
  // requires grad or was produced on this tape. Accumulates into existing
  // grads (additive across separate backward calls).
  void backward(Tensor<T> loss) {
    if (loss.numel() != 1)
      raise(ErrorKind::Shape,
            "backward needs a scalar loss, got " + shape_str(loss.shape()));
    if (loss.raw()->tape != this || loss.raw()->tape_epoch != epoch_)
      raise(ErrorKind::Usage, "backward on a loss detached from this tape");
    if (backward_done_)
      raise(ErrorKind::Usage, "backward called twice without tape reset");
    backward_done_ = true;
    loss.ensure_grad();
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  // ---- ops ----

  Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
      raise(ErrorKind::Shape,
            strprintf("matmul shape mismatch: %s x %s",
                      shape_str(a.shape()).c_str(),
                      shape_str(b.shape()).c_str()));
    i64 m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    kernels::matmul_nn(a.data(), b.data(), out.data(), m, k, n);
    record(out, {a, b}, [a, b, out, m, k, n]() mutable {
      if (grad_flows(a))
        kernels::matmul_nt(out.grad().data(), b.data(), a.grad().data(), m, n,
                           k, true);
      if (grad_flows(b))
        kernels::matmul_tn(a.data(), out.grad().data(), b.grad().data(), k, m,
                           n, true);
    });
    return out;
  }

  Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    if (a.shape() != b.shape())
      raise(ErrorKind::Shape,
            strprintf("add shape mismatch: %s vs %s",
                      shape_str(a.shape()).c_str(),
                      shape_str(b.shape()).c_str()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const i64 n = a.numel();
    for (i64 i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
    record(out, {a, b}, [a, b, out, n]() mutable {
      if (grad_flows(a)) kernels::axpy(a.grad().data(), out.grad().data(), T(1), n);
      if (grad_flows(b)) kernels::axpy(b.grad().data(), out.grad().data(), T(1), n);
    });
    return out;
  }

  // a[R x C] + bias[C] broadcast over rows
  Tensor<T> add_bias(Tensor<T> a, Tensor<T> bias) {
    if (a.rank() != 2 || bias.numel() != a.dim(1))
      raise(ErrorKind::Shape,
            strprintf("add_bias shape mismatch: %s + %s",
                      shape_str(a.shape()).c_str(),
                      shape_str(bias.shape()).c_str()));
    i64 r = a.dim(0), c = a.dim(1);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < r; ++i)
      for (i64 j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) + bias.at(j);
    record(out, {a, bias}, [a, bias, out, r, c]() mutable {
      if (grad_flows(a))
        kernels::axpy(a.grad().data(), out.grad().data(), T(1), r * c);
      if (grad_flows(bias)) {
        auto& bg = bias.grad();
        for (i64 i = 0; i < r; ++i)
          for (i64 j = 0; j < c; ++j) bg[j] += out.grad()[i * c + j];
      }
    });
    return out;
  }

  Tensor<T> scale(Tensor<T> a, T alpha) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const i64 n = a.numel();
    for (i64 i = 0; i < n; ++i) out.at(i) = alpha * a.at(i);
    record(out, {a}, [a, out, alpha, n]() mutable {
      if (grad_flows(a))
        kernels::axpy(a.grad().data(), out.grad().data(), alpha, n);
    });
    return out;
  }

  Tensor<T> gelu(Tensor<T> a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    kernels::gelu_forward(a.data(), out.data(), a.numel());
    record(out, {a}, [a, out]() mutable {
      if (grad_flows(a))
        kernels::gelu_backward(a.data(), out.grad().data(), a.grad().data(),
                               a.numel());
    });
    return out;
  }

  // Row softmax; with `prefix`, row r is a distribution over its first
  // prefix[r] columns and zero beyond (causal attention mask).
  Tensor<T> softmax(Tensor<T> a, std::vector<i64> prefix = {}) {
    if (a.rank() != 2)
      raise(ErrorKind::Shape, "softmax expects a matrix, got " +
                                  shape_str(a.shape()));
    i64 r = a.dim(0), c = a.dim(1);
    if (!prefix.empty()) {
      if (static_cast<i64>(prefix.size()) != r)
        raise(ErrorKind::Shape, "softmax prefix length mismatch");
      for (i64 p : prefix)
        if (p < 1 || p > c)
          raise(ErrorKind::Shape, "softmax prefix out of range");
    }
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    kernels::softmax_rows(a.data(), out.data(), r, c,
                          prefix.empty() ? nullptr : prefix.data());
    record(out, {a}, [a, out, r, c, prefix = std::move(prefix)]() mutable {
      if (grad_flows(a))
        kernels::softmax_backward_rows(out.data(), out.grad().data(),
                                       a.grad().data(), r, c,
                                       prefix.empty() ? nullptr : prefix.data());
    });
    return out;
  }

  Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gain, Tensor<T> bias, T eps) {
    i64 c = x.rank() == 2 ? x.dim(1) : x.numel();
    i64 r = x.rank() == 2 ? x.dim(0) : 1;
    if (c == 0) raise(ErrorKind::Shape, "layer_norm over zero-width rows");
    if (gain.numel() != c || bias.numel() != c)
      raise(ErrorKind::Shape,
            strprintf("layer_norm gain/bias %s/%s do not match width %lld",
                      shape_str(gain.shape()).c_str(),
                      shape_str(bias.shape()).c_str(),
                      static_cast<long long>(c)));
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto mean = std::make_shared<std::vector<T>>(r);
    auto rstd = std::make_shared<std::vector<T>>(r);
    kernels::layer_norm_forward(x.data(), gain.data(), bias.data(), out.data(),
                                mean->data(), rstd->data(), r, c, eps);
    record(out, {x, gain, bias}, [x, gain, bias, out, mean, rstd, r, c]() mutable {
      if (grad_flows(x))
        kernels::layer_norm_backward_dx(x.data(), gain.data(), mean->data(),
                                        rstd->data(), out.grad().data(),
                                        x.grad().data(), r, c);
      if (grad_flows(gain) || grad_flows(bias)) {
        gain.ensure_grad();
        bias.ensure_grad();
        kernels::layer_norm_backward_params(x.data(), mean->data(),
                                            rstd->data(), out.grad().data(),
                                            gain.grad().data(),
                                            bias.grad().data(), r, c);
      }
    });
    return out;
  }

  Tensor<T> embedding(Tensor<T> table, std::vector<std::int32_t> ids) {
    if (table.rank() != 2)
      raise(ErrorKind::Shape, "embedding table must be a matrix");
    i64 v = table.dim(0), h = table.dim(1);
    for (auto id : ids)
      if (id < 0 || id >= v)
        raise(ErrorKind::Index,
              strprintf("embedding id %d outside table of %lld rows", id,
                        static_cast<long long>(v)));
    i64 r = static_cast<i64>(ids.size());
    Tensor<T> out = Tensor<T>::zeros({r, h});
    kernels::embedding_gather(table.data(), ids.data(), out.data(), r, h);
    record(out, {table}, [table, out, ids = std::move(ids), r, h]() mutable {
      if (grad_flows(table))
        kernels::embedding_scatter_add(table.grad().data(), ids.data(),
                                       out.grad().data(), r, h);
    });
    return out;
  }

  Tensor<T> concat_rows(std::vector<Tensor<T>> parts) {
    if (parts.empty()) raise(ErrorKind::Shape, "concat of zero tensors");
    i64 c = parts[0].cols(), r = 0;
    for (auto& p : parts) {
      if (p.rank() != 2 || p.cols() != c)
        raise(ErrorKind::Shape, "concat_rows width mismatch");
      r += p.rows();
    }
    Tensor<T> out = Tensor<T>::zeros({r, c});
    i64 row = 0;
    for (auto& p : parts) {
      std::copy(p.data(), p.data() + p.numel(), out.data() + row * c);
      row += p.rows();
    }
    record(out, refs(parts), [parts, out, c]() mutable {
      i64 row = 0;
      for (auto& p : parts) {
        if (grad_flows(p))
          kernels::axpy(p.grad().data(), out.grad().data() + row * c, T(1),
                        p.numel());
        row += p.rows();
      }
    });
    return out;
  }

  Tensor<T> slice_rows(Tensor<T> a, i64 r0, i64 r1) {
    if (a.rank() != 2 || r0 < 0 || r1 > a.dim(0) || r0 >= r1)
      raise(ErrorKind::Shape,
            strprintf("slice_rows [%lld,%lld) of %s",
                      static_cast<long long>(r0), static_cast<long long>(r1),
                      shape_str(a.shape()).c_str()));
    i64 c = a.dim(1), r = r1 - r0;
    Tensor<T> out = Tensor<T>::zeros({r, c});
    std::copy(a.data() + r0 * c, a.data() + r1 * c, out.data());
    record(out, {a}, [a, out, r0, c]() mutable {
      if (grad_flows(a))
        kernels::axpy(a.grad().data() + r0 * c, out.grad().data(), T(1),
                      out.numel());
    });
    return out;
  }

  Tensor<T> slice_cols(Tensor<T> a, i64 c0, i64 c1) {
    if (a.rank() != 2 || c0 < 0 || c1 > a.dim(1) || c0 >= c1)
      raise(ErrorKind::Shape,
            strprintf("slice_cols [%lld,%lld) of %s",
                      static_cast<long long>(c0), static_cast<long long>(c1),
                      shape_str(a.shape()).c_str()));
    i64 r = a.dim(0), ac = a.dim(1), c = c1 - c0;
    Tensor<T> out = Tensor<T>::zeros({r, c});
    for (i64 i = 0; i < r; ++i)
      std::copy(a.data() + i * ac + c0, a.data() + i * ac + c1,
                out.data() + i * c);
    record(out, {a}, [a, out, c0, r, ac, c]() mutable {
      if (!grad_flows(a)) return;
      auto& ag = a.grad();
      for (i64 i = 0; i < r; ++i)
        for (i64 j = 0; j < c; ++j)
          ag[i * ac + c0 + j] += out.grad()[i * c + j];
    });
    return out;
  }

  Tensor<T> concat_cols(std::vector<Tensor<T>> parts) {
    if (parts.empty()) raise(ErrorKind::Shape, "concat of zero tensors");
    i64 r = parts[0].rows(), c = 0;
    for (auto& p : parts) {
      if (p.rank() != 2 || p.rows() != r)
        raise(ErrorKind::Shape, "concat_cols height mismatch");
      c += p.cols();
    }
    Tensor<T> out = Tensor<T>::zeros({r, c});
    i64 col = 0;
    for (auto& p : parts) {
      for (i64 i = 0; i < r; ++i)
        std::copy(p.data() + i * p.cols(), p.data() + (i + 1) * p.cols(),
                  out.data() + i * c + col);
      col += p.cols();
    }
    record(out, refs(parts), [parts, out, r, c]() mutable {
      i64 col = 0;
      for (auto& p : parts) {
        i64 pc = p.cols();
        if (grad_flows(p)) {
          auto& pg = p.grad();
          for (i64 i = 0; i < r; ++i)
            for (i64 j = 0; j < pc; ++j)
              pg[i * pc + j] += out.grad()[i * c + col + j];
        }
        col += pc;
      }
    });
    return out;
  }

  Tensor<T> transpose(Tensor<T> a) {
    if (a.rank() != 2)
      raise(ErrorKind::Shape, "transpose expects a matrix");
    i64 r = a.dim(0), c = a.dim(1);
    Tensor<T> out = Tensor<T>::zeros({c, r});
    for (i64 i = 0; i < r; ++i)
      for (i64 j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
    record(out, {a}, [a, out, r, c]() mutable {
      if (!grad_flows(a)) return;
      auto& ag = a.grad();
      for (i64 i = 0; i < r; ++i)
        for (i64 j = 0; j < c; ++j) ag[i * c + j] += out.grad()[j * r + i];
    });
    return out;
  }

  // Mean over masked-in rows of -log softmax(logits[i])[target[i]].
  Tensor<T> cross_entropy(Tensor<T> logits, std::vector<std::int32_t> targets,
                          std::vector<bool> mask) {
    if (logits.rank() != 2)
      raise(ErrorKind::Shape, "cross_entropy expects [L x V] logits");
    i64 l = logits.dim(0), v = logits.dim(1);
    if (static_cast<i64>(targets.size()) != l ||
        static_cast<i64>(mask.size()) != l)
      raise(ErrorKind::Shape, "cross_entropy targets/mask length mismatch");
    i64 m = 0;
    for (i64 i = 0; i < l; ++i) {
      if (!mask[i]) continue;
      ++m;
      if (targets[i] < 0 || targets[i] >= v)
        raise(ErrorKind::Index,
              strprintf("cross_entropy target %d outside vocab of %lld",
                        targets[i], static_cast<long long>(v)));
    }
    if (m == 0)
      raise(ErrorKind::Usage, "cross_entropy with all-false mask");
    // keep softmax rows for the backward rule
    auto probs = std::make_shared<std::vector<T>>(l * v);
    T loss = T(0);
    for (i64 i = 0; i < l; ++i) {
      if (!mask[i]) continue;
      const T* row = logits.data() + i * v;
      T mx = row[0];
      for (i64 j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      T sum = T(0);
      T* prow = probs->data() + i * v;
      for (i64 j = 0; j < v; ++j) {
        prow[j] = std::exp(row[j] - mx);
        sum += prow[j];
      }
      T inv = T(1) / sum;
      for (i64 j = 0; j < v; ++j) prow[j] *= inv;
      loss -= std::log(prow[targets[i]]);
    }
    loss /= T(m);
    Tensor<T> out = Tensor<T>::scalar(loss);
    record(out, {logits},
           [logits, out, probs, targets = std::move(targets),
            mask = std::move(mask), l, v, m]() mutable {
             if (!grad_flows(logits)) return;
             T up = out.grad()[0] / T(m);
             auto& lg = logits.grad();
             for (i64 i = 0; i < l; ++i) {
               if (!mask[i]) continue;
               const T* prow = probs->data() + i * v;
               for (i64 j = 0; j < v; ++j) lg[i * v + j] += up * prow[j];
               lg[i * v + targets[i]] -= up;
             }
           });
    return out;
  }

  // Mean over masked-in rows of the squared Euclidean distance between
  // pred row and target row.
  Tensor<T> squared_error(Tensor<T> preds, Tensor<T> targets,
                          std::vector<bool> mask) {
    if (preds.rank() != 2 || preds.shape() != targets.shape())
      raise(ErrorKind::Shape,
            strprintf("squared_error shape mismatch: %s vs %s",
                      shape_str(preds.shape()).c_str(),
                      shape_str(targets.shape()).c_str()));
    i64 l = preds.dim(0), c = preds.dim(1);
    if (static_cast<i64>(mask.size()) != l)
      raise(ErrorKind::Shape, "squared_error mask length mismatch");
    i64 m = 0;
    for (i64 i = 0; i < l; ++i) m += mask[i] ? 1 : 0;
    if (m == 0) raise(ErrorKind::Usage, "squared_error with all-false mask");
    T loss = T(0);
    for (i64 i = 0; i < l; ++i) {
      if (!mask[i]) continue;
      for (i64 j = 0; j < c; ++j) {
        T d = preds.at(i, j) - targets.at(i, j);
        loss += d * d;
      }
    }
    loss /= T(m);
    Tensor<T> out = Tensor<T>::scalar(loss);
    record(out, {preds, targets},
           [preds, targets, out, mask = std::move(mask), l, c, m]() mutable {
             T up = out.grad()[0] * T(2) / T(m);
             for (i64 i = 0; i < l; ++i) {
               if (!mask[i]) continue;
               for (i64 j = 0; j < c; ++j) {
                 T d = preds.at(i, j) - targets.at(i, j);
                 if (grad_flows(preds)) preds.grad()[i * c + j] += up * d;
                 if (grad_flows(targets)) targets.grad()[i * c + j] -= up * d;
               }
             }
           });
    return out;
  }

  Tensor<T> sum_all(Tensor<T> a) {
    Tensor<T> out = Tensor<T>::scalar(kernels::sum(a.data(), a.numel()));
    record(out, {a}, [a, out]() mutable {
      if (grad_flows(a))
        for (i64 i = 0; i < a.numel(); ++i) a.grad()[i] += out.grad()[0];
    });
    return out;
  }

  // Inverted dropout; identity when rate == 0.
  Tensor<T> dropout(Tensor<T> a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) raise(ErrorKind::Config, "dropout rate must be < 1");
    const i64 n = a.numel();
    auto keep = std::make_shared<std::vector<char>>(n);
    T inv = T(1.0 / (1.0 - rate));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (i64 i = 0; i < n; ++i) {
      bool k = rng.uniform() >= rate;
      (*keep)[i] = k;
      out.at(i) = k ? a.at(i) * inv : T(0);
    }
    record(out, {a}, [a, out, keep, inv, n]() mutable {
      if (!grad_flows(a)) return;
      auto& ag = a.grad();
      for (i64 i = 0; i < n; ++i)
        if ((*keep)[i]) ag[i] += out.grad()[i] * inv;
    });
    return out;
  }

 private:
  using Node = std::function<void()>;

  // A tensor participates in backward if it is a parameter-like leaf or an
  // intermediate produced by some tape (its grad buffer then carries the
  // chain further down).
  static bool grad_flows(Tensor<T>& t) {
    if (!t.requires_grad() && t.raw()->tape == nullptr) return false;
    t.ensure_grad();
    return true;
  }

  static std::vector<Tensor<T>> refs(const std::vector<Tensor<T>>& v) {
    return v;
  }

  void record(Tensor<T>& out, std::initializer_list<Tensor<T>> inputs,
              Node node) {
    bool needed = false;
    for (auto& in : inputs)
      if (in.requires_grad() || in.raw()->tape != nullptr) needed = true;
    finish_record(out, needed, std::move(node));
  }

  void record(Tensor<T>& out, const std::vector<Tensor<T>>& inputs,
              Node node) {
    bool needed = false;
    for (auto& in : inputs)
      if (in.requires_grad() || in.raw()->tape != nullptr) needed = true;
    finish_record(out, needed, std::move(node));
  }

  void finish_record(Tensor<T>& out, bool needed, Node node) {
    if (!needed) return;  // constant subgraph, nothing to differentiate
    out.raw()->tape = this;
    out.raw()->tape_epoch = epoch_;
    nodes_.push_back(std::move(node));
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::uint64_t epoch_ = 0;
};

}  // namespace mmd
