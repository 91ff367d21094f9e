#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Graph is a tape: every op appends one node holding its value and an
// adjoint closure, so node order is already a topological order and
// backward() is a single reverse sweep. Graphs are plain values with no
// shared state; separate graphs can live on separate threads.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ngpt/tensor.hpp"

namespace ngpt::ad {

class Graph;

/// Handle to a node on a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  Graph* graph = nullptr;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Adjoints of the requires_grad leaves after one backward sweep.
class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  const Tensor& at(std::size_t id) const { return grads_.at(id); }

 private:
  friend class Graph;
  std::vector<Tensor> grads_;
};

class Graph {
 public:
  using Adjoint = std::function<void(const Graph&, const Tensor& dout, std::vector<Tensor>& grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Records an op result. `inputs` are node ids consumed by `adjoint`.
  Var record(Tensor value, std::vector<std::size_t> inputs, Adjoint adjoint);

  /// Exact adjoints of a scalar `loss` with respect to every requires_grad leaf.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Adjoint adjoint;
    bool is_leaf = false;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

/// Zero-initialised gradient slot for node `id`, created on first touch.
Tensor& grad_slot(const Graph& g, std::vector<Tensor>& grads, std::size_t id);

// ---- ops ----------------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double c);
/// Each row of a [m x n] multiplied componentwise by v [n].
Var mul_rows(Var a, Var v);
Var sigmoid(Var a);
Var silu(Var a);
Var sum(Var a);

/// L2-normalise slices of `v`. For a matrix, axis 1 normalises each row and
/// axis 0 each column; vectors only accept axis 0. A slice whose norm is
/// <= eps raises DegenerateInputError.
Var l2_normalize(Var v, int axis, double eps = 0.0);

/// Row n of the result is sum_{m<=n} softmax(scores[n, 0..n])_m * values[m].
Var causal_softmax_weighted_sum(Var scores, Var values);

/// Rotary position embedding of x [seq x d]; row index is the position and
/// the pair (2i, 2i+1) turns by pos * base^(-2i/d).
Var rotary(Var x, double base);

/// Mean over rows of -log softmax(logits[row])[target[row]].
Var cross_entropy(Var logits, std::span<const int> targets);

/// Rows of the result are the columns `ids` of e [d x V] (E * onehot).
Var gather_columns(Var e, std::span<const int> ids);

/// Horizontal concatenation of matrices with equal row counts.
Var concat_columns(std::span<const Var> parts);

}  // namespace ngpt::ad
