#include "got/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace got::ag {

namespace {

template <typename T>
void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
T stable_softplus(T x) {
  // ln(1 + e^x) without overflow for large |x|.
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  const T z = std::exp(x);
  return z / (T(1) + z);
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::leaf(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::parameter(Parameter<T>& p) {
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  return n.ref ? *n.ref : n.value;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var v) const {
  return nodes_.at(static_cast<std::size_t>(v.id)).grad;
}

template <typename T>
Var Graph<T>::emit(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
  return emit(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

template <typename T>
Var Graph<T>::emit(Tensor<T> value, std::span<const Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (Var p : parents) {
      if (nodes_[static_cast<std::size_t>(p.id)].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>* Graph<T>::grad_sink(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
  return &n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (!record_) throw std::logic_error("backward() on a non-recording graph");
  if (consumed_) throw std::logic_error("backward() called twice on one graph");
  consumed_ = true;
  if (value(loss).size() != 1) throw ShapeError("backward() needs a scalar loss");
  Tensor<T>* seed = grad_sink(loss);
  if (!seed) return;
  (*seed)[0] = T(1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      if (n.param->grad.size() != n.grad.size()) n.param->grad = Tensor<T>(n.param->value.shape());
      auto dst = n.param->grad.values();
      auto src = n.grad.values();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  require<T>(A.cols() == B.rows(), "matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor<T> out({A.rows(), B.cols()});
  out.matrix().noalias() = A.matrix() * B.matrix();
  return g.emit(std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    if (auto* ga = g.grad_sink(a)) ga->matrix().noalias() += G.matrix() * g.value(b).matrix().transpose();
    if (auto* gb = g.grad_sink(b)) gb->matrix().noalias() += g.value(a).matrix().transpose() * G.matrix();
  });
}

template <typename T>
Var add_bias(Graph<T>& g, Var a, Var bias) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(bias);
  require<T>(static_cast<int>(B.size()) == A.cols(),
             "add_bias: " + shape_str(A.shape()) + " + " + shape_str(B.shape()));
  Tensor<T> out = A;
  auto m = out.matrix();
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) += B[static_cast<std::size_t>(c)];
  return g.emit(std::move(out), {a, bias}, [a, bias](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    if (auto* ga = g.grad_sink(a)) ga->matrix() += G.matrix();
    if (auto* gb = g.grad_sink(bias)) {
      auto gm = G.matrix();
      for (int r = 0; r < gm.rows(); ++r)
        for (int c = 0; c < gm.cols(); ++c) (*gb)[static_cast<std::size_t>(c)] += gm(r, c);
    }
  });
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var bias) {
  return add_bias(g, matmul(g, x, w), bias);
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  require<T>(A.size() == B.size(), "add: " + shape_str(A.shape()) + " + " + shape_str(B.shape()));
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return g.emit(std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += G[i];
    if (auto* gb = g.grad_sink(b))
      for (std::size_t i = 0; i < G.size(); ++i) (*gb)[i] += G[i];
  });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  require<T>(A.size() == B.size(), "sub: " + shape_str(A.shape()) + " - " + shape_str(B.shape()));
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return g.emit(std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += G[i];
    if (auto* gb = g.grad_sink(b))
      for (std::size_t i = 0; i < G.size(); ++i) (*gb)[i] -= G[i];
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  require<T>(A.size() == B.size(), "mul: " + shape_str(A.shape()) + " * " + shape_str(B.shape()));
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return g.emit(std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    if (auto* ga = g.grad_sink(a)) {
      const auto& Bv = g.value(b);
      for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += G[i] * Bv[i];
    }
    if (auto* gb = g.grad_sink(b)) {
      const auto& Av = g.value(a);
      for (std::size_t i = 0; i < G.size(); ++i) (*gb)[i] += G[i] * Av[i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T s) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.values()) v *= s;
  return g.emit(std::move(out), {a}, [a, s](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += s * G[i];
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities. Backward uses the cached output.

template <typename T>
Var sigmoid(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.values()) v = stable_sigmoid(v);
  return g.emit(std::move(out), {a}, [a](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    const auto& Y = g.value(Var{self});
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += G[i] * Y[i] * (T(1) - Y[i]);
  });
}

template <typename T>
Var tanh(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.values()) v = std::tanh(v);
  return g.emit(std::move(out), {a}, [a](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    const auto& Y = g.value(Var{self});
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += G[i] * (T(1) - Y[i] * Y[i]);
  });
}

template <typename T>
Var relu(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return g.emit(std::move(out), {a}, [a](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    const auto& Y = g.value(Var{self});
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < G.size(); ++i)
        if (Y[i] > T(0)) (*ga)[i] += G[i];
  });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename T>
Var concat_cols(Graph<T>& g, std::span<const Var> parts) {
  require<T>(!parts.empty(), "concat_cols: no inputs");
  const int rows = g.value(parts[0]).rows();
  int total = 0;
  std::vector<int> offsets;
  for (Var p : parts) {
    const auto& t = g.value(p);
    require<T>(t.rows() == rows, "concat_cols: row mismatch " + shape_str(t.shape()));
    offsets.push_back(total);
    total += t.cols();
  }
  Tensor<T> out({rows, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& t = g.value(parts[k]);
    out.matrix().block(0, offsets[k], rows, t.cols()) = t.matrix();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.emit(std::move(out), parts, [ps, offsets](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (auto* gp = g.grad_sink(ps[k])) {
        gp->matrix() += G.matrix().block(0, offsets[k], gp->rows(), gp->cols());
      }
    }
  });
}

template <typename T>
Var slice_cols(Graph<T>& g, Var a, int start, int count) {
  const auto& A = g.value(a);
  require<T>(start >= 0 && count >= 0 && start + count <= A.cols(), "slice_cols out of range");
  Tensor<T> out({A.rows(), count});
  out.matrix() = A.matrix().block(0, start, A.rows(), count);
  return g.emit(std::move(out), {a}, [a, start, count](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    if (auto* ga = g.grad_sink(a)) ga->matrix().block(0, start, ga->rows(), count) += G.matrix();
  });
}

template <typename T>
Var gather_rows(Graph<T>& g, Var a, std::span<const int> rows) {
  const auto& A = g.value(a);
  Tensor<T> out({static_cast<int>(rows.size()), A.cols()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require<T>(rows[r] >= 0 && rows[r] < A.rows(), "gather_rows: index out of range");
    out.matrix().row(static_cast<int>(r)) = A.matrix().row(rows[r]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return g.emit(std::move(out), {a}, [a, idx](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    if (auto* ga = g.grad_sink(a)) {
      for (std::size_t r = 0; r < idx.size(); ++r) ga->matrix().row(idx[r]) += G.matrix().row(static_cast<int>(r));
    }
  });
}

template <typename T>
Var reshape(Graph<T>& g, Var a, Shape shape) {
  Tensor<T> out = g.value(a).reshaped(std::move(shape));
  return g.emit(std::move(out), {a}, [a](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += G[i];
  });
}

template <typename T>
Var softmax(Graph<T>& g, Var logits) {
  Tensor<T> out = g.value(logits);
  auto m = out.matrix();
  for (int r = 0; r < m.rows(); ++r) {
    const T mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
  return g.emit(std::move(out), {logits}, [logits](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    const auto& Y = g.value(Var{self});
    if (auto* ga = g.grad_sink(logits)) {
      auto gy = G.matrix();
      auto y = Y.matrix();
      for (int r = 0; r < y.rows(); ++r) {
        const T dot = gy.row(r).dot(y.row(r));
        ga->matrix().row(r).array() += y.row(r).array() * (gy.row(r).array() - dot);
      }
    }
  });
}

template <typename T>
Var sum(Graph<T>& g, Var a) {
  const auto& A = g.value(a);
  T s = T(0);
  for (T v : A.values()) s += v;
  return g.emit(Tensor<T>({1}, std::vector<T>{s}), {a}, [a](Graph<T>& g, int self) {
    const T G = g.node_grad(self)[0];
    if (auto* ga = g.grad_sink(a))
      for (auto& v : ga->values()) v += G;
  });
}

template <typename T>
Var weighted_sum(Graph<T>& g, Var a, const Tensor<T>& weights) {
  const auto& A = g.value(a);
  require<T>(A.size() == weights.size(), "weighted_sum: size mismatch");
  T s = T(0);
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * weights[i];
  return g.emit(Tensor<T>({1}, std::vector<T>{s}), {a}, [a, weights](Graph<T>& g, int self) {
    const T G = g.node_grad(self)[0];
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < weights.size(); ++i) (*ga)[i] += G * weights[i];
  });
}

template <typename T>
Var add_scalars(Graph<T>& g, std::span<const Var> scalars) {
  T s = T(0);
  for (Var v : scalars) {
    require<T>(g.value(v).size() == 1, "add_scalars: non-scalar input");
    s += g.value(v)[0];
  }
  std::vector<Var> ps(scalars.begin(), scalars.end());
  return g.emit(Tensor<T>({1}, std::vector<T>{s}), scalars, [ps](Graph<T>& g, int self) {
    const T G = g.node_grad(self)[0];
    for (Var p : ps)
      if (auto* gp = g.grad_sink(p)) (*gp)[0] += G;
  });
}

// ---------------------------------------------------------------------------
// Convolution via im2col

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, int kernel, int stride, int pad) {
  const auto& X = g.value(x);
  const auto& W = g.value(weight);
  require<T>(X.rank() == 3, "conv2d: input must be [H,W,C], got " + shape_str(X.shape()));
  const int H = X.dim(0), Wd = X.dim(1), C = X.dim(2);
  require<T>(W.rows() == kernel * kernel * C, "conv2d: weight " + shape_str(W.shape()) + " vs kernel " +
                                                  std::to_string(kernel) + " and " + std::to_string(C) +
                                                  " input channels");
  const int Cout = W.cols();
  require<T>(static_cast<int>(g.value(bias).size()) == Cout, "conv2d: bias size");
  const int Ho = (H + 2 * pad - kernel) / stride + 1;
  const int Wo = (Wd + 2 * pad - kernel) / stride + 1;
  require<T>(Ho >= 1 && Wo >= 1, "conv2d: input smaller than kernel");

  const int K = kernel * kernel * C;
  auto cols = std::make_shared<Tensor<T>>(Shape{Ho * Wo, K});
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      T* row = cols->data() + static_cast<std::size_t>(oy * Wo + ox) * K;
      for (int ky = 0; ky < kernel; ++ky) {
        const int iy = oy * stride - pad + ky;
        for (int kx = 0; kx < kernel; ++kx) {
          const int ix = ox * stride - pad + kx;
          T* dst = row + (ky * kernel + kx) * C;
          if (iy < 0 || iy >= H || ix < 0 || ix >= Wd) {
            std::fill(dst, dst + C, T(0));
          } else {
            const T* src = X.data() + (static_cast<std::size_t>(iy) * Wd + ix) * C;
            std::copy(src, src + C, dst);
          }
        }
      }
    }
  }
  Tensor<T> out({Ho, Wo, Cout});
  out.matrix().noalias() = cols->matrix() * W.matrix();
  const auto& B = g.value(bias);
  auto om = out.matrix();
  for (int r = 0; r < om.rows(); ++r)
    for (int c = 0; c < Cout; ++c) om(r, c) += B[static_cast<std::size_t>(c)];

  return g.emit(std::move(out), {x, weight, bias},
                [=](Graph<T>& g, int self) {
                  const auto& G = g.node_grad(self);
                  auto gm = G.matrix();  // [Ho*Wo, Cout]
                  if (auto* gw = g.grad_sink(weight)) gw->matrix().noalias() += cols->matrix().transpose() * gm;
                  if (auto* gb = g.grad_sink(bias)) {
                    for (int r = 0; r < gm.rows(); ++r)
                      for (int c = 0; c < gm.cols(); ++c) (*gb)[static_cast<std::size_t>(c)] += gm(r, c);
                  }
                  if (auto* gx = g.grad_sink(x)) {
                    Tensor<T> dcols({Ho * Wo, K});
                    dcols.matrix().noalias() = gm * g.value(weight).matrix().transpose();
                    for (int oy = 0; oy < Ho; ++oy) {
                      for (int ox = 0; ox < Wo; ++ox) {
                        const T* row = dcols.data() + static_cast<std::size_t>(oy * Wo + ox) * K;
                        for (int ky = 0; ky < kernel; ++ky) {
                          const int iy = oy * stride - pad + ky;
                          if (iy < 0 || iy >= H) continue;
                          for (int kx = 0; kx < kernel; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= Wd) continue;
                            const T* src = row + (ky * kernel + kx) * C;
                            T* dst = gx->data() + (static_cast<std::size_t>(iy) * Wd + ix) * C;
                            for (int c = 0; c < C; ++c) dst[c] += src[c];
                          }
                        }
                      }
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> targets, T normalizer) {
  const auto& L = g.value(logits);
  require<T>(static_cast<int>(targets.size()) == L.rows(), "softmax_cross_entropy: target count");
  auto probs = std::make_shared<Tensor<T>>(L.shape());
  auto lm = L.matrix();
  auto pm = probs->matrix();
  T loss = T(0);
  for (int r = 0; r < lm.rows(); ++r) {
    const T mx = lm.row(r).maxCoeff();
    pm.row(r) = (lm.row(r).array() - mx).exp().matrix();
    const T z = pm.row(r).sum();
    pm.row(r) /= z;
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    require<T>(t < lm.cols(), "softmax_cross_entropy: target out of range");
    loss += -(lm(r, t) - mx - std::log(z));
  }
  loss /= normalizer;
  std::vector<int> tg(targets.begin(), targets.end());
  return g.emit(Tensor<T>({1}, std::vector<T>{loss}), {logits}, [=](Graph<T>& g, int self) {
    const T G = g.node_grad(self)[0] / normalizer;
    if (auto* gl = g.grad_sink(logits)) {
      auto gm = gl->matrix();
      auto p = probs->matrix();
      for (int r = 0; r < gm.rows(); ++r) {
        const int t = tg[static_cast<std::size_t>(r)];
        if (t < 0) continue;
        gm.row(r) += G * p.row(r);
        gm(r, t) -= G;
      }
    }
  });
}

template <typename T>
Var sigmoid_cross_entropy(Graph<T>& g, Var logits, std::span<const T> labels, std::span<const T> weights,
                          T normalizer) {
  const auto& L = g.value(logits);
  require<T>(labels.size() == L.size() && weights.size() == L.size(), "sigmoid_cross_entropy: size mismatch");
  T loss = T(0);
  for (std::size_t i = 0; i < L.size(); ++i) {
    if (weights[i] == T(0)) continue;
    // -[y ln s(x) + (1-y) ln(1-s(x))] = softplus(x) - y x
    loss += weights[i] * (stable_softplus(L[i]) - labels[i] * L[i]);
  }
  loss /= normalizer;
  std::vector<T> y(labels.begin(), labels.end());
  std::vector<T> w(weights.begin(), weights.end());
  return g.emit(Tensor<T>({1}, std::vector<T>{loss}), {logits}, [=](Graph<T>& g, int self) {
    const T G = g.node_grad(self)[0] / normalizer;
    if (auto* gl = g.grad_sink(logits)) {
      const auto& Lv = g.value(logits);
      for (std::size_t i = 0; i < Lv.size(); ++i) {
        if (w[i] == T(0)) continue;
        (*gl)[i] += G * w[i] * (stable_sigmoid(Lv[i]) - y[i]);
      }
    }
  });
}

template <typename T>
Var smooth_l1(Graph<T>& g, Var pred, const Tensor<T>& target, std::span<const T> row_mask, T normalizer,
              T beta) {
  const auto& P = g.value(pred);
  require<T>(P.size() == target.size(), "smooth_l1: " + shape_str(P.shape()) + " vs " + shape_str(target.shape()));
  require<T>(static_cast<int>(row_mask.size()) == P.rows(), "smooth_l1: mask size");
  const int cols = P.cols();
  T loss = T(0);
  for (int r = 0; r < P.rows(); ++r) {
    if (row_mask[static_cast<std::size_t>(r)] == T(0)) continue;
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      const T d = std::abs(P[i] - target[i]);
      loss += d < beta ? T(0.5) * d * d / beta : d - T(0.5) * beta;
    }
  }
  loss /= normalizer;
  std::vector<T> mask(row_mask.begin(), row_mask.end());
  return g.emit(Tensor<T>({1}, std::vector<T>{loss}), {pred}, [=](Graph<T>& g, int self) {
    const T G = g.node_grad(self)[0] / normalizer;
    if (auto* gp = g.grad_sink(pred)) {
      const auto& Pv = g.value(pred);
      for (int r = 0; r < Pv.rows(); ++r) {
        if (mask[static_cast<std::size_t>(r)] == T(0)) continue;
        for (int c = 0; c < cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * cols + c;
          const T d = Pv[i] - target[i];
          const T grad = std::abs(d) < beta ? d / beta : (d > T(0) ? T(1) : T(-1));
          (*gp)[i] += G * grad;
        }
      }
    }
  });
}

template <typename T>
Var logistic_loss(Graph<T>& g, Var scores, std::span<const T> signs, std::span<const T> weights, T normalizer) {
  const auto& F = g.value(scores);
  require<T>(signs.size() == F.size() && weights.size() == F.size(), "logistic_loss: size mismatch");
  T loss = T(0);
  for (std::size_t i = 0; i < F.size(); ++i) {
    if (weights[i] == T(0)) continue;
    loss += weights[i] * stable_softplus(-signs[i] * F[i]);
  }
  loss /= normalizer;
  std::vector<T> y(signs.begin(), signs.end());
  std::vector<T> w(weights.begin(), weights.end());
  return g.emit(Tensor<T>({1}, std::vector<T>{loss}), {scores}, [=](Graph<T>& g, int self) {
    const T G = g.node_grad(self)[0] / normalizer;
    if (auto* gs = g.grad_sink(scores)) {
      const auto& Fv = g.value(scores);
      for (std::size_t i = 0; i < Fv.size(); ++i) {
        if (w[i] == T(0)) continue;
        // d/df ln(1+e^{-yf}) = -y * sigmoid(-yf)
        (*gs)[i] += G * w[i] * (-y[i] * stable_sigmoid(-y[i] * Fv[i]));
      }
    }
  });
}

// ---------------------------------------------------------------------------

#define GOT_INSTANTIATE_AG(T)                                                                              \
  template class Graph<T>;                                                                                 \
  template Var matmul<T>(Graph<T>&, Var, Var);                                                             \
  template Var add_bias<T>(Graph<T>&, Var, Var);                                                           \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                                                        \
  template Var add<T>(Graph<T>&, Var, Var);                                                                \
  template Var sub<T>(Graph<T>&, Var, Var);                                                                \
  template Var mul<T>(Graph<T>&, Var, Var);                                                                \
  template Var scale<T>(Graph<T>&, Var, T);                                                                \
  template Var sigmoid<T>(Graph<T>&, Var);                                                                 \
  template Var tanh<T>(Graph<T>&, Var);                                                                    \
  template Var relu<T>(Graph<T>&, Var);                                                                    \
  template Var concat_cols<T>(Graph<T>&, std::span<const Var>);                                            \
  template Var slice_cols<T>(Graph<T>&, Var, int, int);                                                    \
  template Var gather_rows<T>(Graph<T>&, Var, std::span<const int>);                                       \
  template Var reshape<T>(Graph<T>&, Var, Shape);                                                          \
  template Var softmax<T>(Graph<T>&, Var);                                                                 \
  template Var sum<T>(Graph<T>&, Var);                                                                     \
  template Var weighted_sum<T>(Graph<T>&, Var, const Tensor<T>&);                                          \
  template Var add_scalars<T>(Graph<T>&, std::span<const Var>);                                            \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, int, int, int);                                         \
  template Var softmax_cross_entropy<T>(Graph<T>&, Var, std::span<const int>, T);                          \
  template Var sigmoid_cross_entropy<T>(Graph<T>&, Var, std::span<const T>, std::span<const T>, T);        \
  template Var smooth_l1<T>(Graph<T>&, Var, const Tensor<T>&, std::span<const T>, T, T);                   \
  template Var logistic_loss<T>(Graph<T>&, Var, std::span<const T>, std::span<const T>, T);

GOT_INSTANTIATE_AG(float)
GOT_INSTANTIATE_AG(double)

}  // namespace got::ag
