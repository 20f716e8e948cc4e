#include "got/detectnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "got/layers.hpp"

namespace got {

std::pair<int, int> feature_size(const BackboneConfig& bc, int height, int width) {
  int h = height, w = width;
  for (int s : bc.strides) {
    h = (h + s - 1) / s;
    w = (w + s - 1) / s;
  }
  return {h, w};
}

template <typename T>
void add_backbone_params(ParamStore<T>& store, const BackboneConfig& bc, std::mt19937_64& rng) {
  int cin = 3;
  for (std::size_t i = 0; i < bc.channels.size(); ++i) {
    const std::string name = "backbone.conv" + std::to_string(i + 1);
    add_dense(store, name, 9 * cin, bc.channels[i], rng);
    cin = bc.channels[i];
  }
}

template <typename T>
ag::Var backbone_forward(ag::Graph<T>& g, ParamStore<T>& store, const BackboneConfig& bc, ag::Var image) {
  const auto& img = g.value(image);
  if (img.rank() != 3 || img.dim(2) != 3) throw ShapeError("backbone: image must be [H,W,3], got " + shape_str(img.shape()));
  const int stride = bc.total_stride();
  if (img.dim(0) < stride || img.dim(1) < stride) {
    throw std::invalid_argument("backbone: image " + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(0)) +
                                " is smaller than one " + std::to_string(stride) + "-pixel stride cell");
  }
  ag::Var x = image;
  for (std::size_t i = 0; i < bc.channels.size(); ++i) {
    const std::string name = "backbone.conv" + std::to_string(i + 1);
    // pad 1 with a 3x3 kernel gives ceil(dim / stride) for stride 1 or 2
    x = ag::conv2d(g, x, g.parameter(store.get(name + ".w")), g.parameter(store.get(name + ".b")), 3,
                   bc.strides[i], 1);
    x = ag::relu(g, x);
  }
  return x;
}

template <typename T>
void add_rpn_params(ParamStore<T>& store, int in_channels, int rpn_channels, int anchors_per_cell,
                    std::mt19937_64& rng) {
  add_dense(store, "rpn.conv", 9 * in_channels, rpn_channels, rng);
  add_dense(store, "rpn.cls", rpn_channels, anchors_per_cell, rng, 0.01 * std::sqrt(3.0));
  add_dense(store, "rpn.reg", rpn_channels, 4 * anchors_per_cell, rng, 0.001 * std::sqrt(3.0));
}

template <typename T>
RpnOutputVar rpn_head(ag::Graph<T>& g, ParamStore<T>& store, ag::Var feature_map, int anchors_per_cell) {
  const auto& f = g.value(feature_map);
  RpnOutputVar out;
  out.feat_h = f.dim(0);
  out.feat_w = f.dim(1);
  auto h = ag::conv2d(g, feature_map, g.parameter(store.get("rpn.conv.w")), g.parameter(store.get("rpn.conv.b")), 3,
                      1, 1);
  h = ag::relu(g, h);
  const int R = g.value(h).dim(2);
  h = ag::reshape(g, h, {out.feat_h * out.feat_w, R});
  out.logits = dense(g, store, "rpn.cls", h);
  out.deltas = dense(g, store, "rpn.reg", h);
  if (g.value(out.logits).cols() != anchors_per_cell) throw ShapeError("rpn: classifier width does not match anchors");
  return out;
}

namespace {

template <typename V>
std::vector<Proposal> decode_impl(std::span<const Box> anchors, std::span<const V> logits, std::span<const V> deltas,
                                  ImageSize image, double min_size) {
  if (logits.size() != anchors.size() || deltas.size() != 4 * anchors.size()) {
    throw ShapeError("decode_proposals: " + std::to_string(anchors.size()) + " anchors vs " +
                     std::to_string(logits.size()) + " logits / " + std::to_string(deltas.size()) + " deltas");
  }
  std::vector<Proposal> out;
  out.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Deltas d{deltas[4 * i], deltas[4 * i + 1], deltas[4 * i + 2], deltas[4 * i + 3]};
    auto box = decode_deltas(anchors[i], d, image);
    if (!box || box->width() < min_size || box->height() < min_size) continue;
    out.push_back({*box, static_cast<double>(logits[i]), static_cast<int>(i)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Proposal& a, const Proposal& b) { return a.objectness > b.objectness; });
  return out;
}

}  // namespace

std::vector<Proposal> decode_proposals(std::span<const Box> anchors, std::span<const float> logits,
                                       std::span<const float> deltas, ImageSize image, double min_size) {
  return decode_impl(anchors, logits, deltas, image, min_size);
}

std::vector<Proposal> decode_proposals(std::span<const Box> anchors, std::span<const double> logits,
                                       std::span<const double> deltas, ImageSize image, double min_size) {
  return decode_impl(anchors, logits, deltas, image, min_size);
}

std::vector<Proposal> select_proposals(const std::vector<Proposal>& sorted, int pre_nms_top, double nms_iou,
                                       int post_nms_top) {
  const std::size_t n = std::min(sorted.size(), static_cast<std::size_t>(std::max(pre_nms_top, 0)));
  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(n);
  scores.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    boxes.push_back(sorted[i].box);
    scores.push_back(sorted[i].objectness);
  }
  std::vector<Proposal> out;
  for (int k : nms(boxes, scores, nms_iou)) {
    if (static_cast<int>(out.size()) >= post_nms_top) break;
    out.push_back(sorted[static_cast<std::size_t>(k)]);
  }
  return out;
}

AnchorTargets assign_anchor_targets(std::span<const Box> anchors, std::span<const Box> gt, int batch,
                                    double pos_iou, double neg_iou, std::mt19937_64& rng) {
  const std::size_t n = anchors.size();
  AnchorTargets t;
  t.labels.assign(n, 0.0);
  t.weights.assign(n, 0.0);
  t.reg_mask.assign(n, 0.0);
  t.deltas.assign(n, Deltas{0, 0, 0, 0});
  if (n == 0) return t;

  std::vector<double> best(n, 0.0);
  std::vector<int> arg(n, -1);
  std::vector<double> gt_best(gt.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double v = iou(anchors[i], gt[j]);
      if (v > best[i]) {
        best[i] = v;
        arg[i] = static_cast<int>(j);
      }
      gt_best[j] = std::max(gt_best[j], v);
    }
  }
  // -1 ignore, 0 negative, 1 positive
  std::vector<int> state(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (best[i] < neg_iou) state[i] = 0;
    if (best[i] >= pos_iou) state[i] = 1;
  }
  for (std::size_t j = 0; j < gt.size(); ++j) {
    if (gt_best[j] <= 0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (iou(anchors[i], gt[j]) == gt_best[j]) {
        state[i] = 1;
        if (arg[i] < 0 || best[i] <= gt_best[j]) arg[i] = static_cast<int>(j);
      }
    }
  }
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < n; ++i) {
    if (state[i] == 1) pos.push_back(static_cast<int>(i));
    if (state[i] == 0) neg.push_back(static_cast<int>(i));
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  pos.resize(std::min<std::size_t>(pos.size(), static_cast<std::size_t>(batch / 2)));
  neg.resize(std::min<std::size_t>(neg.size(), static_cast<std::size_t>(batch) - pos.size()));
  for (int i : pos) {
    t.labels[i] = 1.0;
    t.weights[i] = 1.0;
    t.reg_mask[i] = 1.0;
    t.deltas[i] = encode_deltas(anchors[i], gt[static_cast<std::size_t>(arg[i])]);
  }
  for (int i : neg) t.weights[i] = 1.0;
  t.num_positive = static_cast<int>(pos.size());
  t.num_sampled = static_cast<int>(pos.size() + neg.size());
  return t;
}

std::vector<LabeledRoI> sample_rois(std::span<const Box> proposals, std::span<const GroundTruth> gt,
                                    const RoiSampling& opts, std::mt19937_64& rng) {
  if (opts.n_sample < 1) throw std::invalid_argument("sample_rois: n_sample must be >= 1");
  if (!(opts.pos_iou > 0 && opts.pos_iou < 1)) throw std::invalid_argument("sample_rois: pos_iou must be in (0,1)");
  std::vector<Box> candidates(proposals.begin(), proposals.end());
  if (opts.append_gt)
    for (const auto& g : gt) candidates.push_back(g.box);
  if (candidates.empty()) throw std::invalid_argument("sample_rois: no proposals to sample from");

  std::vector<LabeledRoI> pos, neg;
  for (const Box& b : candidates) {
    LabeledRoI r;
    r.box = b;
    double best = 0.0;
    int arg = -1;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double v = iou(b, gt[j].box);
      if (v > best) {
        best = v;
        arg = static_cast<int>(j);
      }
    }
    if (arg >= 0 && best >= opts.pos_iou) {
      r.matched_gt = arg;
      r.label = gt[static_cast<std::size_t>(arg)].superclass + 1;
      r.target = encode_deltas(b, gt[static_cast<std::size_t>(arg)].box);
      pos.push_back(r);
    } else {
      neg.push_back(r);
    }
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::size_t cap = static_cast<std::size_t>(std::floor(opts.pos_fraction * opts.n_sample));
  cap = std::max<std::size_t>(cap, 1);
  pos.resize(std::min(pos.size(), cap));
  neg.resize(std::min(neg.size(), static_cast<std::size_t>(opts.n_sample) - pos.size()));
  pos.insert(pos.end(), neg.begin(), neg.end());
  return pos;
}

template <typename T>
void add_detection_params(ParamStore<T>& store, int in_dim, int fc, int num_classes, std::mt19937_64& rng) {
  add_dense(store, "det.fc1", in_dim, fc, rng);
  add_dense(store, "det.fc2", fc, fc, rng);
  add_dense(store, "det.cls", fc, num_classes + 1, rng, 0.01 * std::sqrt(3.0));
  add_dense(store, "det.reg", fc, 4 * (num_classes + 1), rng, 0.001 * std::sqrt(3.0));
}

template <typename T>
DetectionOutputVar detection_head(ag::Graph<T>& g, ParamStore<T>& store, ag::Var pooled) {
  const int in = store.get("det.fc1.w").value.dim(0);
  if (g.value(pooled).cols() != in) {
    throw ShapeError("detection_head: pooled width " + std::to_string(g.value(pooled).cols()) + " but fc1 expects " +
                     std::to_string(in));
  }
  auto h = ag::relu(g, dense(g, store, "det.fc1", pooled));
  h = ag::relu(g, dense(g, store, "det.fc2", h));
  return {dense(g, store, "det.cls", h), dense(g, store, "det.reg", h)};
}

template <typename T>
DetectionLossVar loss_detection(ag::Graph<T>& g, const DetectionOutputVar& out, std::span<const LabeledRoI> rois,
                                const TargetStds& target_stds) {
  const auto& logits = g.value(out.logits);
  const int R = logits.rows(), C = logits.cols();
  if (static_cast<std::size_t>(R) != rois.size()) throw ShapeError("loss_detection: outputs and RoIs differ in count");

  DetectionLossVar loss;
  std::vector<int> targets(rois.size(), -1);
  Tensor<T> reg_target({R * C, 4});
  std::vector<T> mask(static_cast<std::size_t>(R * C), T(0));
  for (int r = 0; r < R; ++r) {
    const auto& roi = rois[static_cast<std::size_t>(r)];
    if (!roi.positive()) continue;
    ++loss.num_positive;
    targets[static_cast<std::size_t>(r)] = roi.label;
    const int row = r * C + roi.label;
    mask[static_cast<std::size_t>(row)] = T(1);
    for (int k = 0; k < 4; ++k) reg_target.at(row, k) = static_cast<T>(roi.target[k] / target_stds[static_cast<std::size_t>(k)]);
  }
  const T npos = static_cast<T>(std::max(loss.num_positive, 1));
  loss.superclass = ag::softmax_cross_entropy(g, out.logits, std::span<const int>(targets), npos);
  auto d = ag::reshape(g, out.deltas, {R * C, 4});
  loss.loc = ag::smooth_l1(g, d, reg_target, std::span<const T>(mask), static_cast<T>(std::max(R, 1)));
  return loss;
}

template <typename T>
RpnLossVar loss_rpn(ag::Graph<T>& g, const RpnOutputVar& out, const AnchorTargets& t) {
  const std::size_t n = t.labels.size();
  if (g.value(out.logits).size() != n) throw ShapeError("loss_rpn: anchor count mismatch");
  std::vector<T> labels(n), weights(n), mask(n);
  Tensor<T> target({static_cast<int>(n), 4});
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<T>(t.labels[i]);
    weights[i] = static_cast<T>(t.weights[i]);
    mask[i] = static_cast<T>(t.reg_mask[i]);
    for (int k = 0; k < 4; ++k) target.at(static_cast<int>(i), k) = static_cast<T>(t.deltas[i][k]);
  }
  const T norm = static_cast<T>(std::max(t.num_sampled, 1));
  RpnLossVar loss;
  auto logits = ag::reshape(g, out.logits, {static_cast<int>(n)});
  loss.objectness = ag::sigmoid_cross_entropy(g, logits, std::span<const T>(labels), std::span<const T>(weights), norm);
  auto d = ag::reshape(g, out.deltas, {static_cast<int>(n), 4});
  loss.loc = ag::smooth_l1(g, d, target, std::span<const T>(mask), norm, static_cast<T>(1.0 / 9.0));
  return loss;
}

#define GOT_INSTANTIATE_DET(T)                                                                                  \
  template void add_backbone_params<T>(ParamStore<T>&, const BackboneConfig&, std::mt19937_64&);              \
  template ag::Var backbone_forward<T>(ag::Graph<T>&, ParamStore<T>&, const BackboneConfig&, ag::Var);        \
  template void add_rpn_params<T>(ParamStore<T>&, int, int, int, std::mt19937_64&);                           \
  template RpnOutputVar rpn_head<T>(ag::Graph<T>&, ParamStore<T>&, ag::Var, int);                             \
  template void add_detection_params<T>(ParamStore<T>&, int, int, int, std::mt19937_64&);                     \
  template DetectionOutputVar detection_head<T>(ag::Graph<T>&, ParamStore<T>&, ag::Var);                      \
  template DetectionLossVar loss_detection<T>(ag::Graph<T>&, const DetectionOutputVar&,                       \
                                              std::span<const LabeledRoI>, const TargetStds&);                                   \
  template RpnLossVar loss_rpn<T>(ag::Graph<T>&, const RpnOutputVar&, const AnchorTargets&);

GOT_INSTANTIATE_DET(float)
GOT_INSTANTIATE_DET(double)

}  // namespace got
