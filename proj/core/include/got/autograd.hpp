#pragma once

#include <functional>
#include <span>
#include <vector>

#include "got/tensor.hpp"

namespace got {

/// A learnable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

namespace ag {

/// Handle to a node on a Graph tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Every op appends one node holding its forward value and
/// a closure that pushes the node's gradient to its parents. A graph is
/// single-use: build, call backward() once, discard.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  /// With record=false no closures are kept and backward() is unavailable.
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor<T> value);
  /// Leaf that receives a gradient (used for input-gradient checks).
  Var leaf(Tensor<T> value);
  /// Binds a parameter; backward() adds the node gradient into p.grad.
  Var parameter(Parameter<T>& p);

  const Tensor<T>& value(Var v) const;
  const Tensor<T>& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss)=1 and runs the tape backwards. loss must hold one element.
  void backward(Var loss);

  // Op-author interface.
  Var emit(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn);
  Var emit(Tensor<T> value, std::span<const Var> parents, BackwardFn fn);
  const Tensor<T>& node_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  /// Gradient buffer for a parent, allocated on first touch; nullptr when the
  /// parent does not require a gradient.
  Tensor<T>* grad_sink(Var v);

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_;
  bool consumed_ = false;
};

// Linear algebra. Matrices are rank-2 [rows, cols]; rank-1 bias vectors broadcast over rows.
template <typename T> Var matmul(Graph<T>& g, Var a, Var b);
template <typename T> Var add_bias(Graph<T>& g, Var a, Var bias);
template <typename T> Var linear(Graph<T>& g, Var x, Var w, Var bias);
template <typename T> Var add(Graph<T>& g, Var a, Var b);
template <typename T> Var sub(Graph<T>& g, Var a, Var b);
template <typename T> Var mul(Graph<T>& g, Var a, Var b);
template <typename T> Var scale(Graph<T>& g, Var a, T s);

template <typename T> Var sigmoid(Graph<T>& g, Var a);
template <typename T> Var tanh(Graph<T>& g, Var a);
template <typename T> Var relu(Graph<T>& g, Var a);

template <typename T> Var concat_cols(Graph<T>& g, std::span<const Var> parts);
template <typename T> Var slice_cols(Graph<T>& g, Var a, int start, int count);
template <typename T> Var gather_rows(Graph<T>& g, Var a, std::span<const int> rows);
template <typename T> Var reshape(Graph<T>& g, Var a, Shape shape);

/// Row-wise softmax.
template <typename T> Var softmax(Graph<T>& g, Var logits);

template <typename T> Var sum(Graph<T>& g, Var a);
/// Sum of a elementwise-weighted by a constant tensor of the same size.
template <typename T> Var weighted_sum(Graph<T>& g, Var a, const Tensor<T>& weights);
template <typename T> Var add_scalars(Graph<T>& g, std::span<const Var> scalars);

/// 2-D convolution over an [H, W, Cin] map with weights [k*k*Cin, Cout] laid
/// out as (ky, kx, cin) rows. Zero padding.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, int kernel, int stride, int pad);

// Losses. Every loss returns a one-element tensor.

/// sum_i -ln softmax(logits_i)[targets_i] / normalizer over rows whose target >= 0.
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> targets, T normalizer);
/// Sigmoid cross-entropy against {0,1} labels; entries with weight 0 are ignored.
template <typename T>
Var sigmoid_cross_entropy(Graph<T>& g, Var logits, std::span<const T> labels, std::span<const T> weights,
                          T normalizer);
/// Smooth-L1 (beta) summed over the columns of rows with row_mask != 0, divided by normalizer.
template <typename T>
Var smooth_l1(Graph<T>& g, Var pred, const Tensor<T>& target, std::span<const T> row_mask, T normalizer,
              T beta = T(1));
/// sum_i ln(1 + exp(-y_i f_i)) / normalizer over entries with weight != 0.
template <typename T>
Var logistic_loss(Graph<T>& g, Var scores, std::span<const T> signs, std::span<const T> weights, T normalizer);

}  // namespace ag
}  // namespace got
