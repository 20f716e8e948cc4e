#pragma once

#include <random>
#include <span>
#include <vector>

#include "got/config.hpp"
#include "got/detectnet.hpp"
#include "got/params.hpp"
#include "got/seqcore.hpp"

namespace got {

/// ret.fc1..3 (RoI reduction), ret.query_lstm, ret.fuse [V + H, retrieval_fc], ret.score [retrieval_fc, 1].
template <typename T>
void add_retrieval_params(ParamStore<T>& store, const Config& cfg, int pooled_dim, int vocab_size,
                          std::mt19937_64& rng);

/// Final hidden state [1, H] of the query LSTM over one-hot tokens. With
/// mask_padding only the tokens before the first EOC are read (at least one).
template <typename T>
ag::Var encode_query(ag::Graph<T>& g, ParamStore<T>& store, std::span<const int> token_ids, int eoc_index,
                     bool mask_padding = false);

/// Raw scores f [R, 1] for RoI features [R, V] against one query [1, H]:
/// concatenation, FC + ReLU, FC to one unit.
template <typename T>
ag::Var retrieval_score(ag::Graph<T>& g, ParamStore<T>& store, ag::Var roi_features, ag::Var query);

struct RetrievalLabel {
  int relevance = 0;  // 1 iff the RoI is positive-matched to the query object
  int sign = -1;      // relevance mapped to {-1, +1} for the logistic loss
  bool positive_roi = false;
};

/// Throws std::out_of_range when query_object is not an object of the image.
std::vector<RetrievalLabel> build_retrieval_labels(std::span<const LabeledRoI> rois, int query_object,
                                                   int num_objects);

/// Mean of ln(1 + exp(-y f)) over the RoIs with a nonzero weight, y = +1 or -1.
/// With y in {0, 1} the negative term would be constant, so only the sign of
/// the relevance enters.
template <typename T>
ag::Var loss_retrieval(ag::Graph<T>& g, ag::Var scores, std::span<const RetrievalLabel> labels,
                       bool include_background = false);

}  // namespace got
