#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "got/config.hpp"
#include "got/params.hpp"
#include "got/seqcore.hpp"

namespace got {

/// Three FC+ReLU layers <prefix>.fc1..fc3 squeezing a pooled RoI feature.
template <typename T>
void add_reduce_params(ParamStore<T>& store, const std::string& prefix, int in_dim, const std::vector<int>& widths,
                       std::mt19937_64& rng);

/// [R, P*P*C] -> [R, widths.back()].
template <typename T>
ag::Var reduce_roi_feature(ag::Graph<T>& g, ParamStore<T>& store, const std::string& prefix, ag::Var pooled);

/// Caption head parameters: cap.fc1..3, then cap.lstm_roi + cap.lstm_word
/// (OCN2) or a single cap.lstm (OCN1), and the projection cap.proj.W_z [H, |D|], cap.proj.b_z.
template <typename T>
void add_caption_params(ParamStore<T>& store, const Config& cfg, int pooled_dim, int vocab_size, std::mt19937_64& rng);

/// Teacher-forcing inputs for a caption: EOC as the begin token followed by
/// the first n_steps - 1 target words. The targets are the caption ids themselves.
std::vector<int> teacher_inputs(std::span<const int> caption_ids, int eoc_index);

/// Per-step word logits [R, |D|] for R RoIs. `visual` is [R, V];
/// input_ids is row-major [R, n_steps].
///
/// OCN2: LSTM_roi runs over n_steps copies of the visual vector; step t of
/// LSTM_word reads h_t^roi concatenated with one_hot(input_t).
/// OCN1: one LSTM reading visual + one_hot(input_1) at step 1 and a zero
/// visual part afterwards.
template <typename T>
std::vector<ag::Var> caption_forward(ag::Graph<T>& g, ParamStore<T>& store, CaptionMode mode, ag::Var visual,
                                     std::span<const int> input_ids, int n_steps);

/// Negative log-likelihood of the targets averaged over RoIs and steps.
/// target_ids is row-major [R, n_steps].
template <typename T>
ag::Var loss_caption(ag::Graph<T>& g, std::span<const ag::Var> step_logits, std::span<const int> target_ids);

struct DecodedCaption {
  std::vector<int> ids;          // content words, no EOC
  std::vector<double> step_prob; // probability of each emitted token, EOC included when emitted
};

/// Greedy decoding for every row of visual [R, V]: starts from EOC, feeds the
/// argmax back in, stops at EOC or max_steps.
template <typename T>
std::vector<DecodedCaption> greedy_decode(ParamStore<T>& store, CaptionMode mode, const Tensor<T>& visual,
                                          int eoc_index, int max_steps);

}  // namespace got
