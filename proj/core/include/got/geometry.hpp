#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "got/autograd.hpp"

namespace got {

/// Axis-aligned half-open rectangle [x1, x2) x [y1, y2) in continuous pixel
/// coordinates. No "+1" conventions: width is x2 - x1.
class Box {
 public:
  double x1 = 0, y1 = 0, x2 = 1, y2 = 1;

  Box() = default;
  /// Throws std::invalid_argument for degenerate or non-finite boxes.
  Box(double x1_, double y1_, double x2_, double y2_);

  static std::optional<Box> try_make(double x1, double y1, double x2, double y2);

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return x1 + 0.5 * width(); }
  double cy() const { return y1 + 0.5 * height(); }
  std::array<double, 4> coords() const { return {x1, y1, x2, y2}; }

  bool operator==(const Box&) const = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

double iou(const Box& a, const Box& b);

/// Clip into [0, W] x [0, H]; nullopt if nothing of positive area remains.
std::optional<Box> clip_box(const Box& b, ImageSize bounds);

/// Anchor layout for the region proposal network.
struct AnchorGrid {
  double stride = 16;
  std::vector<double> scales{64, 128, 256, 512};  // side length in pixels of the ratio-1 anchor
  std::vector<double> ratios{0.5, 1.0, 2.0};     // height / width

  int per_cell() const { return static_cast<int>(scales.size() * ratios.size()); }
};

/// Row-major over cells, scale-major then ratio within a cell. Anchors are not clipped.
std::vector<Box> generate_anchors(const AnchorGrid& grid, int feat_h, int feat_w);

using Deltas = std::array<double, 4>;  // dx, dy, dw, dh

Deltas encode_deltas(const Box& anchor, const Box& gt);
Box decode_deltas(const Box& anchor, const Deltas& d);
/// Decode then clip; nullopt when the clipped box is degenerate.
std::optional<Box> decode_deltas(const Box& anchor, const Deltas& d, ImageSize bounds);

/// Greedy suppression in descending score order (ties: lower index first).
/// A box is dropped iff its IoU with an already-kept box exceeds iou_threshold.
std::vector<int> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold);

/// RoIAlign over an [H, W, C] feature map. The RoI is mapped to feature
/// coordinates by spatial_scale without rounding; every one of the P x P bins
/// averages 2 x 2 bilinear samples. Sample positions use the half-pixel
/// convention (feature cell i is centred at i + 0.5). Output is [P, P, C].
/// Throws std::invalid_argument when the RoI misses the feature map entirely.
template <typename T>
Tensor<T> roi_align(const Tensor<T>& feature_map, const Box& roi, double spatial_scale, int pooled);

namespace ag {
/// Batched RoIAlign: one row of P*P*C values per RoI; differentiable with
/// respect to the feature map.
template <typename T>
Var roi_align(Graph<T>& g, Var feature_map, std::span<const Box> rois, double spatial_scale, int pooled);
}  // namespace ag

}  // namespace got
