#include "got/retrievalhead.hpp"

#include <algorithm>
#include <stdexcept>

#include "got/captionhead.hpp"
#include "got/layers.hpp"

namespace got {

template <typename T>
void add_retrieval_params(ParamStore<T>& store, const Config& cfg, int pooled_dim, int vocab_size,
                          std::mt19937_64& rng) {
  add_reduce_params(store, "ret", pooled_dim, cfg.reduce_widths, rng);
  add_lstm_params(store, LstmSpec{"ret.query_lstm", vocab_size, cfg.lstm_hidden}, rng,
                  LstmInit{cfg.query_init_range, cfg.forget_bias});
  add_dense(store, "ret.fuse", cfg.reduce_widths.back() + cfg.lstm_hidden, cfg.retrieval_fc, rng);
  add_dense(store, "ret.score", cfg.retrieval_fc, 1, rng);
}

template <typename T>
ag::Var encode_query(ag::Graph<T>& g, ParamStore<T>& store, std::span<const int> token_ids, int eoc_index,
                     bool mask_padding) {
  const auto& wx = store.get("ret.query_lstm.W_xi").value;
  const LstmSpec spec{"ret.query_lstm", wx.dim(0), wx.dim(1)};
  if (token_ids.empty()) throw std::invalid_argument("encode_query: empty token sequence");
  std::size_t n = token_ids.size();
  if (mask_padding) {
    auto it = std::find(token_ids.begin(), token_ids.end(), eoc_index);
    n = std::max<std::size_t>(1, static_cast<std::size_t>(it - token_ids.begin()));
  }
  const auto w = bind_lstm(g, store, spec);
  auto state = lstm_zero_state(g, 1, spec.hidden_dim);
  for (std::size_t t = 0; t < n; ++t) {
    const int id = token_ids[t];
    state = lstm_step(g, g.constant(one_hot_rows<T>(std::span<const int>(&id, 1), spec.input_dim)), state, w);
  }
  return state.h;
}

template <typename T>
ag::Var retrieval_score(ag::Graph<T>& g, ParamStore<T>& store, ag::Var roi_features, ag::Var query) {
  const int R = g.value(roi_features).rows();
  if (g.value(query).rows() != 1) throw ShapeError("retrieval_score: expected a single query row");
  const int fuse_in = store.get("ret.fuse.w").value.dim(0);
  if (g.value(roi_features).cols() + g.value(query).cols() != fuse_in) {
    throw ShapeError("retrieval_score: RoI width + query width != " + std::to_string(fuse_in));
  }
  const std::vector<int> rows(static_cast<std::size_t>(R), 0);
  const ag::Var parts[2] = {roi_features, ag::gather_rows<T>(g, query, rows)};
  auto h = ag::relu(g, dense(g, store, "ret.fuse", ag::concat_cols<T>(g, parts)));
  return dense(g, store, "ret.score", h);
}

std::vector<RetrievalLabel> build_retrieval_labels(std::span<const LabeledRoI> rois, int query_object,
                                                   int num_objects) {
  if (query_object < 0 || query_object >= num_objects) {
    throw std::out_of_range("build_retrieval_labels: query object " + std::to_string(query_object) +
                            " outside [0," + std::to_string(num_objects) + ")");
  }
  std::vector<RetrievalLabel> out;
  out.reserve(rois.size());
  for (const auto& r : rois) {
    RetrievalLabel l;
    l.positive_roi = r.positive();
    l.relevance = r.matched_gt == query_object ? 1 : 0;
    l.sign = l.relevance ? 1 : -1;
    out.push_back(l);
  }
  return out;
}

template <typename T>
ag::Var loss_retrieval(ag::Graph<T>& g, ag::Var scores, std::span<const RetrievalLabel> labels,
                       bool include_background) {
  if (g.value(scores).size() != labels.size()) throw ShapeError("loss_retrieval: scores and labels differ in count");
  std::vector<T> signs(labels.size()), weights(labels.size());
  int n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    signs[i] = static_cast<T>(labels[i].sign);
    if (labels[i].positive_roi || include_background) {
      weights[i] = T(1);
      ++n;
    }
  }
  return ag::logistic_loss(g, scores, std::span<const T>(signs), std::span<const T>(weights),
                           static_cast<T>(std::max(n, 1)));
}

#define GOT_INSTANTIATE_RET(T)                                                                                  \
  template void add_retrieval_params<T>(ParamStore<T>&, const Config&, int, int, std::mt19937_64&);           \
  template ag::Var encode_query<T>(ag::Graph<T>&, ParamStore<T>&, std::span<const int>, int, bool);           \
  template ag::Var retrieval_score<T>(ag::Graph<T>&, ParamStore<T>&, ag::Var, ag::Var);                       \
  template ag::Var loss_retrieval<T>(ag::Graph<T>&, ag::Var, std::span<const RetrievalLabel>, bool);

GOT_INSTANTIATE_RET(float)
GOT_INSTANTIATE_RET(double)

}  // namespace got
