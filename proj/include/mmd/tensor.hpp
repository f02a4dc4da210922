#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "mmd/common.hpp"

namespace mmd {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

inline i64 shape_numel(const Shape& s) {
  i64 n = 1;
  for (i64 d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  // producer bookkeeping, used to reject backward on stale/detached tensors
  const void* tape = nullptr;
  std::uint64_t tape_epoch = 0;
};

// Value-semantics handle over shared dense storage. Copies alias.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->data.assign(shape_numel(t.d_->shape), T(0));
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<T> values,
                          bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<i64>(values.size()))
      raise(ErrorKind::Shape,
            strprintf("tensor data length %zu does not match shape %s",
                      values.size(), shape_str(shape).c_str()));
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->data = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  i64 numel() const { return static_cast<i64>(d_->data.size()); }
  i64 rank() const { return static_cast<i64>(d_->shape.size()); }
  i64 dim(int i) const { return d_->shape[i]; }

  // 2-D accessors; most of the model lives in matrices
  i64 rows() const { return d_->shape.size() == 2 ? d_->shape[0] : 1; }
  i64 cols() const {
    return d_->shape.size() == 2 ? d_->shape[1] : numel();
  }

  T* data() { return d_->data.data(); }
  const T* data() const { return d_->data.data(); }
  std::vector<T>& values() { return d_->data; }
  const std::vector<T>& values() const { return d_->data; }

  T& at(i64 i) { return d_->data[i]; }
  T at(i64 i) const { return d_->data[i]; }
  T& at(i64 r, i64 c) { return d_->data[r * cols() + c]; }
  T at(i64 r, i64 c) const { return d_->data[r * cols() + c]; }

  T item() const {
    if (numel() != 1)
      raise(ErrorKind::Shape, "item() on non-scalar tensor " +
                                  shape_str(d_->shape));
    return d_->data[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<T>& grad() {
    ensure_grad();
    return d_->grad;
  }
  const std::vector<T>& grad() const { return d_->grad; }
  void ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->data.size(), T(0));
  }
  void zero_grad() {
    if (!d_->grad.empty()) d_->grad.assign(d_->data.size(), T(0));
  }

  TensorData<T>* raw() { return d_.get(); }
  const TensorData<T>* raw() const { return d_.get(); }
  std::shared_ptr<TensorData<T>> ptr() const { return d_; }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.values())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace mmd
