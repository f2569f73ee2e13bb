#ifndef CTXNMT_TENSOR_H_
#define CTXNMT_TENSOR_H_

// Dense tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap handle to a shared node holding a shape, a flat
// row-major value buffer and (lazily) a gradient buffer of the same shape.
// Operations executed while a Tape is active on the current thread record a
// backward closure whenever one of their inputs requires a gradient. With no
// active tape the same operations run as plain forward computations, which is
// how inference works.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctxnmt {

#ifdef CTXNMT_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;

  Real* grad_data() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
    return grad.data();
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor scalar(Real v) { return Tensor(Shape{1}, std::vector<Real>{v}); }
  // A leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<Real> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
  // Product of all trailing extents.
  std::size_t cols() const;

  std::span<const Real> values() const { return node_->value; }
  std::span<Real> mutable_values() { return node_->value; }
  const Real* data() const { return node_->value.data(); }
  Real* mutable_data() { return node_->value.data(); }
  Real at(std::size_t i) const { return node_->value[i]; }
  Real at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  Real item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return {node_->grad_data(), node_->value.size()}; }
  void zero_grad() { node_->grad.clear(); }

  // Deep copy of values; the copy is a fresh leaf.
  Tensor clone() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of the operations executed while it was active. Entries are
// appended in execution order, which is a topological order of the graph, so
// backward() simply replays them in reverse.
class Tape {
 public:
  using Backward = std::function<void(detail::Node& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<detail::Node> out, Backward fn);
  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<detail::Node> out;
    Backward fn;
  };
  std::vector<Entry> entries_;
};

// Makes `tape` the active tape of this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Suspends recording (e.g. for evaluation passes inside a training scope).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace ctxnmt

#endif  // CTXNMT_TENSOR_H_
