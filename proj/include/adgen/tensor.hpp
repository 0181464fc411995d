#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adgen/rng.hpp"

namespace adgen {

using Index = std::int64_t;
using Shape = std::vector<Index>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Raised when a forward op produces NaN/Inf; the trainer aborts the step and
// dumps diagnostics instead of continuing silently.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index e : s) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= e;
  }
  return n;
}

template <typename S>
using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Dense row-major tensor with an optional gradient slot. Value-semantic
// handle over shared storage; ops treat written tensors as immutable and
// accumulate gradients through the tape.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : st_(std::make_shared<Storage>()) {
    st_->shape = std::move(shape);
    st_->data.assign(static_cast<size_t>(shape_numel(st_->shape)), S(0));
    if (requires_grad) set_requires_grad(true);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    t.array() = value;
    return t;
  }

  static Tensor scalar(S value) { return full({1}, value); }

  static Tensor from(Shape shape, std::initializer_list<S> values) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(values.size()) != t.numel())
      throw ShapeError("initializer size does not match shape " + shape_str(t.shape()));
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor from(Shape shape, const std::vector<S>& values) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(values.size()) != t.numel())
      throw ShapeError("value count does not match shape " + shape_str(t.shape()));
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor randn(Shape shape, S stddev, RngStream& rng) {
    Tensor t(std::move(shape));
    S* p = t.data();
    const Index n = t.numel();
    for (Index i = 0; i < n; ++i) p[i] = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return st_->shape; }
  Index rank() const { return static_cast<Index>(st_->shape.size()); }
  Index size(Index dim) const { return st_->shape[static_cast<size_t>(dim)]; }
  Index numel() const { return static_cast<Index>(st_->data.size()); }

  S* data() { return st_->data.data(); }
  const S* data() const { return st_->data.data(); }
  S& operator[](Index i) { return st_->data[static_cast<size_t>(i)]; }
  const S& operator[](Index i) const { return st_->data[static_cast<size_t>(i)]; }

  bool requires_grad() const { return st_ && st_->requires_grad; }

  void set_requires_grad(bool on) {
    st_->requires_grad = on;
    if (on && st_->grad.size() != st_->data.size())
      st_->grad.assign(st_->data.size(), S(0));
  }

  bool has_grad() const { return st_ && !st_->grad.empty(); }
  S* grad() { return st_->grad.data(); }
  const S* grad() const { return st_->grad.data(); }

  void zero_grad() {
    if (has_grad()) grad_array().setZero();
  }

  ArrayMap<S> array() { return ArrayMap<S>(data(), numel()); }
  ConstArrayMap<S> array() const { return ConstArrayMap<S>(data(), numel()); }
  ArrayMap<S> grad_array() { return ArrayMap<S>(grad(), numel()); }
  ConstArrayMap<S> grad_array() const { return ConstArrayMap<S>(grad(), numel()); }

  // Rank-2 views. For higher ranks, rows = numel / last extent.
  MatMap<S> matrix() { return MatMap<S>(data(), rows_(), cols_()); }
  ConstMatMap<S> matrix() const { return ConstMatMap<S>(data(), rows_(), cols_()); }
  MatMap<S> grad_matrix() { return MatMap<S>(grad(), rows_(), cols_()); }

  bool same_shape(const Tensor& other) const { return shape() == other.shape(); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape());
    const Index n = numel();
    for (Index i = 0; i < n; ++i) out[i] = static_cast<T>((*this)[i]);
    return out;
  }

  // Deep copy of values; gradient slot starts fresh.
  Tensor clone() const {
    Tensor t(shape());
    t.array() = array();
    return t;
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;
    bool requires_grad = false;
  };

  Index rows_() const {
    if (rank() < 1) throw ShapeError("matrix view of rank-0 tensor");
    return numel() / cols_();
  }
  Index cols_() const { return st_->shape.back(); }

  std::shared_ptr<Storage> st_;
};

template <typename S>
inline void check_finite(const Tensor<S>& t, const char* op) {
  if (!t.array().isFinite().all())
    throw NonFiniteError(std::string(op) + " produced a non-finite value, shape " +
                         shape_str(t.shape()));
}

// Reverse-mode tape. Ops push backward closures in forward order; backward()
// seeds the root gradient and replays them in reverse.
template <typename S>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  size_t size() const { return nodes_.size(); }

  void backward(Tensor<S>& root) {
    if (root.numel() != 1) throw ShapeError("backward root must be a scalar");
    if (!root.requires_grad()) throw ValueError("backward root does not track gradients");
    root.grad()[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

// Marks the output as tracked and ensures a zeroed gradient buffer when any
// input tracks gradients under an active tape.
template <typename S>
inline bool track_output(Tape<S>* tape, Tensor<S>& out, bool any_input_grad) {
  if (tape == nullptr || !any_input_grad) return false;
  out.set_requires_grad(true);
  return true;
}

}  // namespace adgen
