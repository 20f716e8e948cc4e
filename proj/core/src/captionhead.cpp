#include "got/captionhead.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "got/layers.hpp"

namespace got {

namespace {

struct CaptionDims {
  int visual = 0;
  int hidden = 0;
  int vocab = 0;
};

template <typename T>
CaptionDims caption_dims(ParamStore<T>& store) {
  const auto& wz = store.get("cap.proj.W_z").value;
  return {store.get("cap.fc3.w").value.dim(1), wz.dim(0), wz.dim(1)};
}

LstmSpec roi_spec(const CaptionDims& d) { return {"cap.lstm_roi", d.visual, d.hidden}; }
LstmSpec word_spec(const CaptionDims& d) { return {"cap.lstm_word", d.hidden + d.vocab, d.hidden}; }
LstmSpec single_spec(const CaptionDims& d) { return {"cap.lstm", d.visual + d.vocab, d.hidden}; }

}  // namespace

template <typename T>
void add_reduce_params(ParamStore<T>& store, const std::string& prefix, int in_dim, const std::vector<int>& widths,
                       std::mt19937_64& rng) {
  if (widths.size() != 3) throw std::invalid_argument("reduce: expected three layer widths");
  int in = in_dim;
  for (int i = 0; i < 3; ++i) {
    add_dense(store, prefix + ".fc" + std::to_string(i + 1), in, widths[static_cast<std::size_t>(i)], rng);
    in = widths[static_cast<std::size_t>(i)];
  }
}

template <typename T>
ag::Var reduce_roi_feature(ag::Graph<T>& g, ParamStore<T>& store, const std::string& prefix, ag::Var pooled) {
  const int in = store.get(prefix + ".fc1.w").value.dim(0);
  if (g.value(pooled).cols() != in) {
    throw ShapeError(prefix + ": pooled width " + std::to_string(g.value(pooled).cols()) + " but fc1 expects " +
                     std::to_string(in));
  }
  ag::Var x = pooled;
  for (int i = 1; i <= 3; ++i) x = ag::relu(g, dense(g, store, prefix + ".fc" + std::to_string(i), x));
  return x;
}

template <typename T>
void add_caption_params(ParamStore<T>& store, const Config& cfg, int pooled_dim, int vocab_size,
                        std::mt19937_64& rng) {
  add_reduce_params(store, "cap", pooled_dim, cfg.reduce_widths, rng);
  const CaptionDims d{cfg.reduce_widths.back(), cfg.lstm_hidden, vocab_size};
  const LstmInit init{cfg.init_range, cfg.forget_bias};
  if (cfg.mode == CaptionMode::OCN2) {
    add_lstm_params(store, roi_spec(d), rng, init);
    add_lstm_params(store, word_spec(d), rng, init);
  } else {
    add_lstm_params(store, single_spec(d), rng, init);
  }
  init_uniform(store.add("cap.proj.W_z", {d.hidden, d.vocab}).value, rng, static_cast<T>(cfg.init_range));
  store.add("cap.proj.b_z", {d.vocab});
}

std::vector<int> teacher_inputs(std::span<const int> caption_ids, int eoc_index) {
  std::vector<int> in;
  in.reserve(caption_ids.size());
  if (caption_ids.empty()) return in;
  in.push_back(eoc_index);
  in.insert(in.end(), caption_ids.begin(), caption_ids.end() - 1);
  return in;
}

template <typename T>
std::vector<ag::Var> caption_forward(ag::Graph<T>& g, ParamStore<T>& store, CaptionMode mode, ag::Var visual,
                                     std::span<const int> input_ids, int n_steps) {
  const CaptionDims d = caption_dims(store);
  const int R = g.value(visual).rows();
  if (g.value(visual).cols() != d.visual) throw ShapeError("caption_forward: visual width does not match cap.fc3");
  if (n_steps < 1 || input_ids.size() != static_cast<std::size_t>(R) * n_steps) {
    throw ShapeError("caption_forward: expected " + std::to_string(R) + "x" + std::to_string(n_steps) +
                     " token ids, got " + std::to_string(input_ids.size()));
  }
  auto word_input = [&](int t) {
    std::vector<int> col(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) col[static_cast<std::size_t>(r)] = input_ids[static_cast<std::size_t>(r * n_steps + t)];
    return g.constant(one_hot_rows<T>(col, d.vocab));
  };
  const ag::Var w_z = g.parameter(store.get("cap.proj.W_z"));
  const ag::Var b_z = g.parameter(store.get("cap.proj.b_z"));

  std::vector<ag::Var> logits;
  if (mode == CaptionMode::OCN2) {
    const auto roi_w = bind_lstm(g, store, roi_spec(d));
    const auto word_w = bind_lstm(g, store, word_spec(d));
    auto roi_state = lstm_zero_state(g, R, d.hidden);
    auto word_state = lstm_zero_state(g, R, d.hidden);
    for (int t = 0; t < n_steps; ++t) {
      roi_state = lstm_step(g, visual, roi_state, roi_w);
      const ag::Var parts[2] = {roi_state.h, word_input(t)};
      word_state = lstm_step(g, ag::concat_cols<T>(g, parts), word_state, word_w);
      logits.push_back(word_logits(g, word_state.h, w_z, b_z));
    }
  } else {
    const auto w = bind_lstm(g, store, single_spec(d));
    auto state = lstm_zero_state(g, R, d.hidden);
    const ag::Var zero_visual = g.constant(Tensor<T>({R, d.visual}));
    for (int t = 0; t < n_steps; ++t) {
      const ag::Var parts[2] = {t == 0 ? visual : zero_visual, word_input(t)};
      state = lstm_step(g, ag::concat_cols<T>(g, parts), state, w);
      logits.push_back(word_logits(g, state.h, w_z, b_z));
    }
  }
  return logits;
}

// Mean negative log-likelihood of the target words under the softmax.
template <typename T>
ag::Var loss_caption(ag::Graph<T>& g, std::span<const ag::Var> step_logits, std::span<const int> target_ids) {
  const int n = static_cast<int>(step_logits.size());
  if (n == 0) throw std::invalid_argument("loss_caption: no steps");
  const int R = g.value(step_logits[0]).rows();
  if (target_ids.size() != static_cast<std::size_t>(R) * n) throw ShapeError("loss_caption: target count");
  const T norm = static_cast<T>(std::max(R * n, 1));
  std::vector<ag::Var> terms;
  std::vector<int> col(static_cast<std::size_t>(R));
  for (int t = 0; t < n; ++t) {
    for (int r = 0; r < R; ++r) col[static_cast<std::size_t>(r)] = target_ids[static_cast<std::size_t>(r * n + t)];
    terms.push_back(ag::softmax_cross_entropy(g, step_logits[static_cast<std::size_t>(t)], std::span<const int>(col), norm));
  }
  return ag::add_scalars<T>(g, terms);
}

template <typename T>
std::vector<DecodedCaption> greedy_decode(ParamStore<T>& store, CaptionMode mode, const Tensor<T>& visual,
                                          int eoc_index, int max_steps) {
  const CaptionDims d = caption_dims(store);
  const int R = visual.rows();
  if (visual.cols() != d.visual) throw ShapeError("greedy_decode: visual width does not match cap.fc3");
  std::vector<DecodedCaption> out(static_cast<std::size_t>(R));
  if (R == 0 || max_steps < 1) return out;

  ag::Graph<T> g(false);
  const ag::Var vis = g.constant(visual.reshaped({R, d.visual}));
  const ag::Var w_z = g.parameter(store.get("cap.proj.W_z"));
  const ag::Var b_z = g.parameter(store.get("cap.proj.b_z"));
  std::vector<int> prev(static_cast<std::size_t>(R), eoc_index);
  std::vector<bool> done(static_cast<std::size_t>(R), false);

  LstmWeights w1, w2;
  if (mode == CaptionMode::OCN2) {
    w1 = bind_lstm(g, store, roi_spec(d));
    w2 = bind_lstm(g, store, word_spec(d));
  } else {
    w1 = bind_lstm(g, store, single_spec(d));
  }
  auto s1 = lstm_zero_state(g, R, d.hidden);
  auto s2 = lstm_zero_state(g, R, d.hidden);
  const ag::Var zero_visual = g.constant(Tensor<T>({R, d.visual}));

  for (int t = 0; t < max_steps; ++t) {
    const ag::Var word = g.constant(one_hot_rows<T>(prev, d.vocab));
    ag::Var z;
    if (mode == CaptionMode::OCN2) {
      s1 = lstm_step(g, vis, s1, w1);
      const ag::Var parts[2] = {s1.h, word};
      s2 = lstm_step(g, ag::concat_cols<T>(g, parts), s2, w2);
      z = s2.h;
    } else {
      const ag::Var parts[2] = {t == 0 ? vis : zero_visual, word};
      s1 = lstm_step(g, ag::concat_cols<T>(g, parts), s1, w1);
      z = s1.h;
    }
    const auto& logits = g.value(word_logits(g, z, w_z, b_z));
    bool all_done = true;
    for (int r = 0; r < R; ++r) {
      auto& o = out[static_cast<std::size_t>(r)];
      if (done[static_cast<std::size_t>(r)]) continue;
      std::vector<double> row(static_cast<std::size_t>(d.vocab));
      for (int k = 0; k < d.vocab; ++k) row[static_cast<std::size_t>(k)] = static_cast<double>(logits.at(r, k));
      const auto p = softmax(row);
      const int best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      o.step_prob.push_back(p[static_cast<std::size_t>(best)]);
      if (best == eoc_index) {
        done[static_cast<std::size_t>(r)] = true;
      } else {
        o.ids.push_back(best);
        all_done = false;
      }
      prev[static_cast<std::size_t>(r)] = best;
    }
    if (all_done) break;
  }
  return out;
}

#define GOT_INSTANTIATE_CAP(T)                                                                                    \
  template void add_reduce_params<T>(ParamStore<T>&, const std::string&, int, const std::vector<int>&,           \
                                     std::mt19937_64&);                                                          \
  template ag::Var reduce_roi_feature<T>(ag::Graph<T>&, ParamStore<T>&, const std::string&, ag::Var);            \
  template void add_caption_params<T>(ParamStore<T>&, const Config&, int, int, std::mt19937_64&);                \
  template std::vector<ag::Var> caption_forward<T>(ag::Graph<T>&, ParamStore<T>&, CaptionMode, ag::Var,          \
                                                   std::span<const int>, int);                                   \
  template ag::Var loss_caption<T>(ag::Graph<T>&, std::span<const ag::Var>, std::span<const int>);               \
  template std::vector<DecodedCaption> greedy_decode<T>(ParamStore<T>&, CaptionMode, const Tensor<T>&, int, int);

GOT_INSTANTIATE_CAP(float)
GOT_INSTANTIATE_CAP(double)

}  // namespace got
