#include "got/seqcore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace got {

namespace {
constexpr const char* kGate[4] = {"i", "f", "o", "g"};
}

template <typename T>
Tensor<T> one_hot(int index, int size) {
  if (size < 1 || index < 0 || index >= size) {
    throw std::out_of_range("one_hot: index " + std::to_string(index) + " outside [0," + std::to_string(size) + ")");
  }
  Tensor<T> v({size});
  v[static_cast<std::size_t>(index)] = T(1);
  return v;
}

template <typename T>
Tensor<T> one_hot_rows(std::span<const int> indices, int size) {
  Tensor<T> m({static_cast<int>(indices.size()), size});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int idx = indices[r];
    if (idx < 0 || idx >= size) throw std::out_of_range("one_hot_rows: index out of range");
    m.at(static_cast<int>(r), idx) = T(1);
  }
  return m;
}

template <typename T>
void add_lstm_params(ParamStore<T>& store, const LstmSpec& spec, std::mt19937_64& rng, LstmInit init) {
  for (int k = 0; k < 4; ++k) {
    auto& wx = store.add(spec.prefix + ".W_x" + kGate[k], {spec.input_dim, spec.hidden_dim});
    init_uniform(wx.value, rng, static_cast<T>(init.range));
    auto& wh = store.add(spec.prefix + ".W_h" + kGate[k], {spec.hidden_dim, spec.hidden_dim});
    init_uniform(wh.value, rng, static_cast<T>(init.range));
    auto& b = store.add(spec.prefix + ".b_" + std::string(kGate[k]), {spec.hidden_dim});
    if (k == 1) b.value.fill(static_cast<T>(init.forget_bias));
  }
}

template <typename T>
LstmWeights bind_lstm(ag::Graph<T>& g, ParamStore<T>& store, const LstmSpec& spec) {
  LstmWeights w;
  w.input_dim = spec.input_dim;
  w.hidden_dim = spec.hidden_dim;
  for (int k = 0; k < 4; ++k) {
    auto& wx = store.get(spec.prefix + ".W_x" + kGate[k]);
    auto& wh = store.get(spec.prefix + ".W_h" + kGate[k]);
    if (wx.value.shape() != Shape{spec.input_dim, spec.hidden_dim} ||
        wh.value.shape() != Shape{spec.hidden_dim, spec.hidden_dim}) {
      throw ShapeError("LSTM " + spec.prefix + ": stored weights do not match declared dims");
    }
    w.w_x[k] = g.parameter(wx);
    w.w_h[k] = g.parameter(wh);
    w.b[k] = g.parameter(store.get(spec.prefix + ".b_" + std::string(kGate[k])));
  }
  return w;
}

template <typename T>
LstmStateVar lstm_zero_state(ag::Graph<T>& g, int rows, int hidden) {
  return {g.constant(Tensor<T>({rows, hidden})), g.constant(Tensor<T>({rows, hidden}))};
}

template <typename T>
LstmStateVar lstm_step(ag::Graph<T>& g, ag::Var x, const LstmStateVar& prev, const LstmWeights& w) {
  const auto& X = g.value(x);
  const auto& H = g.value(prev.h);
  if (X.cols() != w.input_dim) {
    throw ShapeError("lstm_step: input width " + std::to_string(X.cols()) + " != " + std::to_string(w.input_dim));
  }
  if (H.cols() != w.hidden_dim || H.rows() != X.rows() || g.value(prev.c).size() != H.size()) {
    throw ShapeError("lstm_step: state shape " + shape_str(H.shape()) + " inconsistent with input " +
                     shape_str(X.shape()));
  }
  ag::Var pre[4];
  for (int k = 0; k < 4; ++k) {
    pre[k] = ag::add_bias(g, ag::add(g, ag::matmul(g, x, w.w_x[k]), ag::matmul(g, prev.h, w.w_h[k])), w.b[k]);
  }
  const ag::Var i = ag::sigmoid(g, pre[0]);
  const ag::Var f = ag::sigmoid(g, pre[1]);
  const ag::Var o = ag::sigmoid(g, pre[2]);
  const ag::Var cand = ag::tanh(g, pre[3]);
  const ag::Var c = ag::add(g, ag::mul(g, f, prev.c), ag::mul(g, i, cand));
  const ag::Var h = ag::mul(g, o, ag::tanh(g, c));
  return {h, c};
}

template <typename T>
std::vector<LstmStateVar> lstm_unroll(ag::Graph<T>& g, std::span<const ag::Var> inputs, const LstmWeights& w,
                                      const LstmStateVar* initial) {
  if (inputs.empty()) throw std::invalid_argument("lstm_unroll: empty sequence");
  const int rows = g.value(inputs[0]).rows();
  LstmStateVar state = initial ? *initial : lstm_zero_state(g, rows, w.hidden_dim);
  std::vector<LstmStateVar> out;
  out.reserve(inputs.size());
  for (ag::Var x : inputs) {
    if (g.value(x).cols() != w.input_dim || g.value(x).rows() != rows) {
      throw ShapeError("lstm_unroll: inconsistent input dims at step " + std::to_string(out.size()));
    }
    state = lstm_step(g, x, state, w);
    out.push_back(state);
  }
  return out;
}

template <typename T>
ag::Var word_logits(ag::Graph<T>& g, ag::Var z, ag::Var w_z, ag::Var b_z) {
  return ag::linear(g, z, w_z, b_z);
}

namespace {
template <typename T>
Tensor<T> as_row(const Tensor<T>& v) {
  return v.rank() == 2 ? v : v.reshaped({1, static_cast<int>(v.size())});
}
}  // namespace

template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const LstmState<T>& state, ParamStore<T>& store, const LstmSpec& spec) {
  ag::Graph<T> g(false);
  const auto w = bind_lstm(g, store, spec);
  LstmStateVar prev{g.constant(as_row(state.h)), g.constant(as_row(state.c))};
  const auto next = lstm_step(g, g.constant(as_row(x)), prev, w);
  return {g.value(next.h), g.value(next.c)};
}

template <typename T>
std::vector<LstmState<T>> lstm_unroll(std::span<const Tensor<T>> inputs, ParamStore<T>& store,
                                      const LstmSpec& spec) {
  ag::Graph<T> g(false);
  const auto w = bind_lstm(g, store, spec);
  std::vector<ag::Var> xs;
  for (const auto& x : inputs) xs.push_back(g.constant(as_row(x)));
  const auto states = lstm_unroll(g, std::span<const ag::Var>(xs), w);
  std::vector<LstmState<T>> out;
  for (const auto& s : states) out.push_back({g.value(s.h), g.value(s.c)});
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

template <typename T>
std::vector<double> predict_word(const Tensor<T>& z, const Tensor<T>& w_z, const Tensor<T>& b_z) {
  const int hidden = static_cast<int>(z.size());
  if (w_z.rows() != hidden || static_cast<int>(b_z.size()) != w_z.cols()) {
    throw ShapeError("predict_word: W_z " + shape_str(w_z.shape()) + " vs z " + shape_str(z.shape()));
  }
  std::vector<double> logits(b_z.size());
  for (int j = 0; j < w_z.cols(); ++j) {
    double s = static_cast<double>(b_z[static_cast<std::size_t>(j)]);
    for (int i = 0; i < hidden; ++i) s += static_cast<double>(z[static_cast<std::size_t>(i)]) * w_z.at(i, j);
    logits[static_cast<std::size_t>(j)] = s;
  }
  return softmax(logits);
}

#define GOT_INSTANTIATE_SEQ(T)                                                                              \
  template Tensor<T> one_hot<T>(int, int);                                                                  \
  template Tensor<T> one_hot_rows<T>(std::span<const int>, int);                                            \
  template void add_lstm_params<T>(ParamStore<T>&, const LstmSpec&, std::mt19937_64&, LstmInit);            \
  template LstmWeights bind_lstm<T>(ag::Graph<T>&, ParamStore<T>&, const LstmSpec&);                        \
  template LstmStateVar lstm_zero_state<T>(ag::Graph<T>&, int, int);                                        \
  template LstmStateVar lstm_step<T>(ag::Graph<T>&, ag::Var, const LstmStateVar&, const LstmWeights&);      \
  template std::vector<LstmStateVar> lstm_unroll<T>(ag::Graph<T>&, std::span<const ag::Var>,                \
                                                    const LstmWeights&, const LstmStateVar*);               \
  template ag::Var word_logits<T>(ag::Graph<T>&, ag::Var, ag::Var, ag::Var);                                \
  template LstmState<T> lstm_step<T>(const Tensor<T>&, const LstmState<T>&, ParamStore<T>&, const LstmSpec&); \
  template std::vector<LstmState<T>> lstm_unroll<T>(std::span<const Tensor<T>>, ParamStore<T>&,             \
                                                    const LstmSpec&);                                       \
  template std::vector<double> predict_word<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

GOT_INSTANTIATE_SEQ(float)
GOT_INSTANTIATE_SEQ(double)

}  // namespace got
