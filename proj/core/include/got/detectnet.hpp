#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

#include "got/config.hpp"
#include "got/geometry.hpp"
#include "got/params.hpp"

namespace got {

// ---------------------------------------------------------------------------
// Backbone

/// backbone.conv{i}.w [9*Cin, Cout] and backbone.conv{i}.b [Cout].
template <typename T>
void add_backbone_params(ParamStore<T>& store, const BackboneConfig& bc, std::mt19937_64& rng);

/// Spatial size of the feature map: ceil(dim / stride) per axis.
std::pair<int, int> feature_size(const BackboneConfig& bc, int height, int width);

/// [H, W, 3] image -> [h, w, C] feature map. Throws std::invalid_argument when
/// the image is smaller than one stride cell.
template <typename T>
ag::Var backbone_forward(ag::Graph<T>& g, ParamStore<T>& store, const BackboneConfig& bc, ag::Var image);

// ---------------------------------------------------------------------------
// Region proposal network

/// rpn.conv (3x3, C -> R), rpn.cls [R, A], rpn.reg [R, 4A].
template <typename T>
void add_rpn_params(ParamStore<T>& store, int in_channels, int rpn_channels, int anchors_per_cell,
                    std::mt19937_64& rng);

struct RpnOutputVar {
  ag::Var logits;  // [h*w, A]: row = cell, column = anchor within the cell
  ag::Var deltas;  // [h*w, 4A]
  int feat_h = 0;
  int feat_w = 0;
};

template <typename T>
RpnOutputVar rpn_head(ag::Graph<T>& g, ParamStore<T>& store, ag::Var feature_map, int anchors_per_cell);

struct Proposal {
  Box box;
  double objectness = 0;  // raw logit
  int anchor = -1;
};

/// Decodes every anchor, clips to the image, drops boxes narrower than
/// min_size, and sorts by objectness (descending, ties by anchor index).
std::vector<Proposal> decode_proposals(std::span<const Box> anchors, std::span<const float> logits,
                                       std::span<const float> deltas, ImageSize image, double min_size);
std::vector<Proposal> decode_proposals(std::span<const Box> anchors, std::span<const double> logits,
                                       std::span<const double> deltas, ImageSize image, double min_size);

/// Top pre_nms_top by objectness, NMS at nms_iou, then the first post_nms_top.
std::vector<Proposal> select_proposals(const std::vector<Proposal>& sorted, int pre_nms_top, double nms_iou,
                                       int post_nms_top);

/// Training targets for the RPN over all anchors.
struct AnchorTargets {
  std::vector<double> labels;   // 1 object, 0 background
  std::vector<double> weights;  // 1 when the anchor is in the sampled minibatch
  std::vector<double> reg_mask; // 1 for sampled positive anchors
  std::vector<Deltas> deltas;   // regression target per anchor (zero for unmatched)
  int num_sampled = 0;
  int num_positive = 0;
};

/// Positive: IoU >= pos_iou with some box, or the best anchor for a box.
/// Negative: max IoU < neg_iou. At most half of `batch` positives; the rest negatives.
AnchorTargets assign_anchor_targets(std::span<const Box> anchors, std::span<const Box> gt, int batch,
                                    double pos_iou, double neg_iou, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// RoI sampling

struct LabeledRoI {
  Box box;
  int label = 0;         // 0 background, k + 1 for superclass k
  int matched_gt = -1;   // ground-truth object index, -1 for background
  Deltas target{0, 0, 0, 0};

  bool positive() const { return matched_gt >= 0; }
};

struct GroundTruth {
  Box box;
  int superclass = 0;
};

struct RoiSampling {
  int n_sample = 2000;
  double pos_iou = 0.5;
  double pos_fraction = 0.25;
  bool append_gt = true;
};

/// Labels every candidate by its best-IoU ground truth and draws at most
/// n_sample of them, positives first (capped at floor(pos_fraction * n_sample),
/// at least one when any exist), then negatives. Throws std::invalid_argument
/// when there is nothing to sample.
std::vector<LabeledRoI> sample_rois(std::span<const Box> proposals, std::span<const GroundTruth> gt,
                                    const RoiSampling& opts, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Detection head

/// det.fc1 [P*P*C, F], det.fc2 [F, F], det.cls [F, K+1], det.reg [F, 4(K+1)].
template <typename T>
void add_detection_params(ParamStore<T>& store, int in_dim, int fc, int num_classes, std::mt19937_64& rng);

struct DetectionOutputVar {
  ag::Var logits;  // [R, K+1]
  ag::Var deltas;  // [R, 4(K+1)]
};

template <typename T>
DetectionOutputVar detection_head(ag::Graph<T>& g, ParamStore<T>& store, ag::Var pooled);

struct DetectionLossVar {
  ag::Var loc;
  ag::Var superclass;
  int num_positive = 0;
};

/// L_superclass: cross-entropy averaged over positive RoIs (zero when there
/// are none). L_loc: smooth-L1 on the matched-class deltas of positive RoIs,
/// divided by the number of sampled RoIs, so background rows add nothing.
/// Regression targets are divided by `target_stds` (the head predicts
/// normalised deltas; multiply by the stds before decoding).
using TargetStds = std::array<double, 4>;
template <typename T>
DetectionLossVar loss_detection(ag::Graph<T>& g, const DetectionOutputVar& out, std::span<const LabeledRoI> rois,
                                const TargetStds& target_stds = {1, 1, 1, 1});

struct RpnLossVar {
  ag::Var objectness;
  ag::Var loc;
};

template <typename T>
RpnLossVar loss_rpn(ag::Graph<T>& g, const RpnOutputVar& out, const AnchorTargets& targets);

}  // namespace got
