#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

using NodeId = std::size_t;

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  NodeId id() const noexcept { return id_; }
  Tape& tape() const noexcept { return *tape_; }
  bool requires_grad() const;

 private:
  Tape* tape_;
  NodeId id_;
};

// Receives the upstream gradient and the node's own output value, and returns one gradient
// per recorded input, in order. An empty optional means "no contribution".
using BackwardFn =
    std::function<std::vector<std::optional<Tensor>>(const Tensor& grad_out, const Tensor& output)>;

// Result of a backward pass: gradient of the loss with respect to every node that lies on a
// path to a grad-enabled leaf.
class Gradients {
 public:
  explicit Gradients(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}

  const Tensor* find(NodeId id) const;
  // Gradient of v, or zeros of v's shape when v does not influence the loss.
  Tensor of(const Var& v) const;

 private:
  std::vector<std::optional<Tensor>> grads_;
};

// Append-only record of one forward pass. Built fresh for every pass and confined to one
// thread. Node storage is a deque so references handed to backward closures stay valid.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Grad-enabled input.
  Var leaf(Tensor value);
  // Input that never receives a gradient.
  Var constant(Tensor value);

  // Records the output of a primitive. The backward rule is dropped when no input
  // requires a gradient.
  Var record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Each node is visited once, in reverse recording order,
  // and gradients from multiple consumers are summed.
  Gradients backward(const Var& loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------------------
// Primitives. All record a gradient rule when any input requires one.
// ---------------------------------------------------------------------------------------

// [m x k] x [k x n] -> [m x n]
Var matmul(const Var& a, const Var& b);
// x[m x k] W[k x n] + b[n] broadcast over rows.
Var affine(const Var& x, const Var& weight, const Var& bias);
Var transpose(const Var& a);

enum class UnaryOp { kTanh, kRelu, kSoftplus, kExp, kLog };
enum class BinaryOp { kAdd, kSub, kMul };

Var apply(UnaryOp op, const Var& a);
Var apply(BinaryOp op, const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var tanh(const Var& a);
Var relu(const Var& a);
// log(1 + e^x), evaluated without overflow.
Var softplus(const Var& a);
Var exp(const Var& a);
// Throws std::domain_error when any entry is <= 0.
Var log(const Var& a);

// Sum of all entries -> scalar.
Var sum(const Var& a);
Var mean(const Var& a);
// [m x n] -> [m x 1]
Var row_sum(const Var& a);

// Picks entries by flat index -> [k x 1].
Var gather(const Var& a, std::vector<std::size_t> flat_indices);
// Picks rows of a matrix by index (repeats allowed) -> [k x n].
Var select_rows(const Var& a, std::vector<std::size_t> rows);

// Unit-norm version of a whole vector. Degenerate input (|v| <= kNormFloor) passes
// through unchanged, with an identity gradient, and sets *degenerate when given.
Var l2_normalize(const Var& v, bool* degenerate = nullptr);

// Cosine similarity of two equal-length vectors -> scalar. Throws DegenerateInputError.
Var cosine_similarity(const Var& u, const Var& v);
// Cosine similarity of aligned rows: [m x d], [m x d] -> [m x 1].
Var row_cosine(const Var& a, const Var& b);
// All-pairs cosine similarity: [m x d], [n x d] -> [m x n].
Var cosine_matrix(const Var& a, const Var& b);

// Row-wise log-sum-exp over entries where include[r*n + c] != 0 -> [m x 1]. Uses the
// row max as a shift. Throws ContractError for a row with no included entries.
Var masked_row_logsumexp(const Var& a, std::vector<std::uint8_t> include);

}  // namespace xmodal
