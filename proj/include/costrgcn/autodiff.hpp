#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "costrgcn/tensor.hpp"

namespace costrgcn {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradients of a scalar loss with respect to every grad-enabled leaf.
class Gradients {
 public:
  const Tensor& operator[](const Var& leaf) const;
  bool contains(const Var& leaf) const { return by_id_.count(leaf.id()) != 0; }
  std::size_t size() const { return by_id_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> by_id_;
};

// Define-by-run record of primitive applications. Nodes are appended in
// evaluation order, so reverse order is a valid topological order for backward.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool grad_enabled() const { return grad_enabled_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  // Runs reverse accumulation from a scalar loss. The tape cannot be reused afterwards.
  Gradients backward(const Var& loss);

  // Primitive-author interface.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Upstream gradient of node `id`; valid inside its backward function.
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  // Gradient accumulator of node `id`, zero-initialized on first use.
  Tensor& grad_accum(std::size_t id);

 private:
  struct Node {
    const char* op = "leaf";
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

// Primitive catalog. Binary elementwise ops accept a second operand whose shape
// equals a trailing suffix of the first operand's shape (broadcast over leading axes).
Var matmul(const Var& a, const Var& b);
// Batched matmul: [B,m,k] x [B,k,n], or x [B,n,k] transposed when transpose_b.
Var bmm(const Var& a, const Var& b, bool transpose_b = false);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var abs(const Var& a);
Var softmax(const Var& a, int axis = -1);
// Softmax over the last axis restricted to entries where mask is nonzero. The
// mask's shape must be a trailing suffix of a's shape.
Var masked_softmax(const Var& a, const Tensor& mask);
Var layer_norm(const Var& a, int axis = -1, double eps = 1e-5);
Var mean(const Var& a, int axis);
Var sum(const Var& a);
Var concat(std::span<const Var> parts, int axis);
Var transpose(const Var& a);
Var permute(const Var& a, const std::vector<std::size_t>& perm);
Var reshape(const Var& a, Shape shape);
Var linear(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& b);
// Inverted dropout. Identity when !train or p == 0.
Var dropout(const Var& a, double p, bool train, std::uint64_t seed);
// Mean over rows of -log softmax(logits)[label]. logits: [N, C].
Var cross_entropy(const Var& logits, std::span<const int> labels);

// Plain-tensor permutation used by both the tape and inference paths.
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);

// Compares tape gradients against central differences. Returns the largest
// |analytic - numeric| / max(1, |analytic|, |numeric|) over all coordinates.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;
double grad_check(const ScalarFn& f, const std::vector<Tensor>& points, double eps = 1e-6);
double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& point,
                  double eps = 1e-6);

}  // namespace costrgcn
