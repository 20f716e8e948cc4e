#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "got/autograd.hpp"
#include "got/params.hpp"

namespace got {

/// Binary vector with a single 1 at `index`. Throws std::out_of_range.
template <typename T = double>
Tensor<T> one_hot(int index, int size);

/// [n, size] matrix whose rows are one_hot(indices[r], size).
template <typename T>
Tensor<T> one_hot_rows(std::span<const int> indices, int size);

/// Parameter names for one LSTM layer: <prefix>.W_x{i,f,o,g} [input, hidden],
/// <prefix>.W_h{i,f,o,g} [hidden, hidden], <prefix>.b_{i,f,o,g} [hidden].
struct LstmSpec {
  std::string prefix;
  int input_dim = 0;
  int hidden_dim = 0;
};

struct LstmInit {
  double range = 0.08;
  double forget_bias = 1.0;
};

template <typename T>
void add_lstm_params(ParamStore<T>& store, const LstmSpec& spec, std::mt19937_64& rng, LstmInit init = {});

/// Graph handles for one LSTM layer; gate order is input, forget, output, candidate.
struct LstmWeights {
  ag::Var w_x[4];
  ag::Var w_h[4];
  ag::Var b[4];
  int input_dim = 0;
  int hidden_dim = 0;
};

template <typename T>
LstmWeights bind_lstm(ag::Graph<T>& g, ParamStore<T>& store, const LstmSpec& spec);

/// Batched state: h and c are [rows, hidden].
struct LstmStateVar {
  ag::Var h;
  ag::Var c;
};

template <typename T>
LstmStateVar lstm_zero_state(ag::Graph<T>& g, int rows, int hidden);

/// One application of the gate equations:
///   i,f,o = sigmoid(x Wx + h Wh + b), g = tanh(...),
///   c' = f*c + i*g, h' = o*tanh(c').
template <typename T>
LstmStateVar lstm_step(ag::Graph<T>& g, ag::Var x, const LstmStateVar& prev, const LstmWeights& w);

/// Threads state through lstm_step from `initial` (zeros when absent).
template <typename T>
std::vector<LstmStateVar> lstm_unroll(ag::Graph<T>& g, std::span<const ag::Var> inputs, const LstmWeights& w,
                                      const LstmStateVar* initial = nullptr);

/// Word logits z W_z + b_z, with W_z stored [hidden, |D|].
template <typename T>
ag::Var word_logits(ag::Graph<T>& g, ag::Var z, ag::Var w_z, ag::Var b_z);

// Value-level conveniences over a parameter store (no tape kept).

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const LstmState<T>& state, ParamStore<T>& store, const LstmSpec& spec);

template <typename T>
std::vector<LstmState<T>> lstm_unroll(std::span<const Tensor<T>> inputs, ParamStore<T>& store,
                                      const LstmSpec& spec);

/// softmax(z W_z + b_z) with max-subtraction.
template <typename T>
std::vector<double> predict_word(const Tensor<T>& z, const Tensor<T>& w_z, const Tensor<T>& b_z);

/// Softmax of a logit vector, max-subtracted.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace got
