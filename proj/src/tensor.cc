#include "ctxnmt/tensor.h"

#include <numeric>
#include <sstream>

namespace ctxnmt {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<std::size_t>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, Real fill) : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(shape_size(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<Real> values) : node_(std::make_shared<detail::Node>()) {
  if (shape_size(shape) != values.size())
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::parameter(Shape shape, std::vector<Real> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

std::size_t Tensor::cols() const {
  const Shape& s = node_->shape;
  std::size_t c = 1;
  for (std::size_t i = 1; i < s.size(); ++i) c *= s[i];
  return c;
}

Real Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

Tensor Tensor::clone() const {
  Tensor t(shape(), node_->value);
  t.set_requires_grad(requires_grad());
  return t;
}

void Tape::record(std::shared_ptr<detail::Node> out, Backward fn) {
  entries_.push_back({std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw DimensionError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  loss.node()->grad_data()[0] += Real(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    // Nodes that received no gradient do not contribute.
    if (it->out->grad.empty()) continue;
    it->fn(*it->out);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

}  // namespace ctxnmt
