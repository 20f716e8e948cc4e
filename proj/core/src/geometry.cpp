#include "got/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

namespace got {

Box::Box(double x1_, double y1_, double x2_, double y2_) : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {
  if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2)) || !(x1 < x2) ||
      !(y1 < y2)) {
    throw std::invalid_argument("degenerate box (" + std::to_string(x1) + "," + std::to_string(y1) + "," +
                                std::to_string(x2) + "," + std::to_string(y2) + ")");
  }
}

std::optional<Box> Box::try_make(double x1, double y1, double x2, double y2) {
  if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2))) return std::nullopt;
  if (!(x1 < x2) || !(y1 < y2)) return std::nullopt;
  return Box(x1, y1, x2, y2);
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::optional<Box> clip_box(const Box& b, ImageSize bounds) {
  const double w = bounds.width, h = bounds.height;
  return Box::try_make(std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w),
                       std::clamp(b.y2, 0.0, h));
}

std::vector<Box> generate_anchors(const AnchorGrid& grid, int feat_h, int feat_w) {
  if (feat_h < 1 || feat_w < 1) throw std::invalid_argument("generate_anchors: empty feature map");
  std::vector<Box> out;
  out.reserve(static_cast<std::size_t>(feat_h) * feat_w * grid.per_cell());
  for (int y = 0; y < feat_h; ++y) {
    for (int x = 0; x < feat_w; ++x) {
      const double cx = (x + 0.5) * grid.stride;
      const double cy = (y + 0.5) * grid.stride;
      for (double s : grid.scales) {
        for (double r : grid.ratios) {
          const double w = s / std::sqrt(r);
          const double h = s * std::sqrt(r);
          out.emplace_back(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
        }
      }
    }
  }
  return out;
}

Deltas encode_deltas(const Box& anchor, const Box& gt) {
  return {(gt.cx() - anchor.cx()) / anchor.width(), (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

namespace {
// exp() guard so an untrained regressor cannot produce infinite boxes.
constexpr double kMaxLogScale = 4.135166556742356;  // ln(1000 / 16)
}  // namespace

Box decode_deltas(const Box& anchor, const Deltas& d) {
  const double cx = anchor.cx() + d[0] * anchor.width();
  const double cy = anchor.cy() + d[1] * anchor.height();
  const double w = anchor.width() * std::exp(std::min(d[2], kMaxLogScale));
  const double h = anchor.height() * std::exp(std::min(d[3], kMaxLogScale));
  return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
}

std::optional<Box> decode_deltas(const Box& anchor, const Deltas& d, ImageSize bounds) {
  const double cx = anchor.cx() + d[0] * anchor.width();
  const double cy = anchor.cy() + d[1] * anchor.height();
  const double w = anchor.width() * std::exp(std::min(d[2], kMaxLogScale));
  const double h = anchor.height() * std::exp(std::min(d[3], kMaxLogScale));
  auto raw = Box::try_make(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
  if (!raw) return std::nullopt;
  return clip_box(*raw, bounds);
}

std::vector<int> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: boxes/scores length mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> kept;
  for (int i : order) {
    bool keep = true;
    for (int k : kept) {
      if (iou(boxes[k], boxes[i]) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// RoIAlign

namespace {

struct Tap {
  int cell;  // y * W + x
  double weight;
};

// Bilinear taps for one sample point in feature-index space, following the
// usual RoIAlign boundary rule: points beyond one cell outside the map contribute nothing.
void bilinear_taps(double y, double x, int H, int W, double scale, std::vector<Tap>& out) {
  if (y < -1.0 || y > H || x < -1.0 || x > W) return;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y);
  int x0 = static_cast<int>(x);
  int y1, x1;
  if (y0 >= H - 1) {
    y0 = y1 = H - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= W - 1) {
    x0 = x1 = W - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  out.push_back({y0 * W + x0, scale * hy * hx});
  out.push_back({y0 * W + x1, scale * hy * lx});
  out.push_back({y1 * W + x0, scale * ly * hx});
  out.push_back({y1 * W + x1, scale * ly * lx});
}

// Per-bin tap lists for one RoI: bins[py * P + px].
std::vector<std::vector<Tap>> roi_taps(int H, int W, const Box& roi, double spatial_scale, int P) {
  if (spatial_scale <= 0) throw std::invalid_argument("roi_align: spatial_scale must be positive");
  if (P < 1) throw std::invalid_argument("roi_align: pooled size must be >= 1");
  const double fx1 = roi.x1 * spatial_scale, fy1 = roi.y1 * spatial_scale;
  const double fx2 = roi.x2 * spatial_scale, fy2 = roi.y2 * spatial_scale;
  if (fx2 <= 0 || fy2 <= 0 || fx1 >= W || fy1 >= H) {
    throw std::invalid_argument("roi_align: RoI lies entirely outside the feature map");
  }
  constexpr int kSamples = 2;
  const double start_x = fx1 - 0.5, start_y = fy1 - 0.5;
  const double bin_w = (fx2 - fx1) / P, bin_h = (fy2 - fy1) / P;
  const double w = 1.0 / (kSamples * kSamples);
  std::vector<std::vector<Tap>> bins(static_cast<std::size_t>(P * P));
  for (int py = 0; py < P; ++py) {
    for (int px = 0; px < P; ++px) {
      auto& taps = bins[static_cast<std::size_t>(py * P + px)];
      taps.reserve(4 * kSamples * kSamples);
      for (int iy = 0; iy < kSamples; ++iy) {
        const double y = start_y + py * bin_h + (iy + 0.5) * bin_h / kSamples;
        for (int ix = 0; ix < kSamples; ++ix) {
          const double x = start_x + px * bin_w + (ix + 0.5) * bin_w / kSamples;
          bilinear_taps(y, x, H, W, w, taps);
        }
      }
    }
  }
  return bins;
}

}  // namespace

template <typename T>
Tensor<T> roi_align(const Tensor<T>& feature_map, const Box& roi, double spatial_scale, int pooled) {
  if (feature_map.rank() != 3) throw ShapeError("roi_align: feature map must be [H,W,C]");
  const int H = feature_map.dim(0), W = feature_map.dim(1), C = feature_map.dim(2);
  const auto bins = roi_taps(H, W, roi, spatial_scale, pooled);
  Tensor<T> out({pooled, pooled, C});
  for (std::size_t b = 0; b < bins.size(); ++b) {
    T* dst = out.data() + b * C;
    for (const Tap& t : bins[b]) {
      const T* src = feature_map.data() + static_cast<std::size_t>(t.cell) * C;
      const T wt = static_cast<T>(t.weight);
      for (int c = 0; c < C; ++c) dst[c] += wt * src[c];
    }
  }
  return out;
}

namespace ag {

template <typename T>
Var roi_align(Graph<T>& g, Var feature_map, std::span<const Box> rois, double spatial_scale, int pooled) {
  const auto& F = g.value(feature_map);
  if (F.rank() != 3) throw ShapeError("roi_align: feature map must be [H,W,C]");
  const int H = F.dim(0), W = F.dim(1), C = F.dim(2);
  const int R = static_cast<int>(rois.size());
  const int bins_per_roi = pooled * pooled;
  auto taps = std::make_shared<std::vector<std::vector<Tap>>>();
  taps->reserve(static_cast<std::size_t>(R) * bins_per_roi);
  for (const Box& roi : rois) {
    auto bins = roi_taps(H, W, roi, spatial_scale, pooled);
    for (auto& b : bins) taps->push_back(std::move(b));
  }
  Tensor<T> out({R, bins_per_roi * C});
  for (std::size_t b = 0; b < taps->size(); ++b) {
    T* dst = out.data() + b * C;
    for (const Tap& t : (*taps)[b]) {
      const T* src = F.data() + static_cast<std::size_t>(t.cell) * C;
      const T wt = static_cast<T>(t.weight);
      for (int c = 0; c < C; ++c) dst[c] += wt * src[c];
    }
  }
  return g.emit(std::move(out), {feature_map}, [feature_map, taps, C](Graph<T>& g, int self) {
    const auto& G = g.node_grad(self);
    auto* gf = g.grad_sink(feature_map);
    if (!gf) return;
    for (std::size_t b = 0; b < taps->size(); ++b) {
      const T* src = G.data() + b * C;
      for (const Tap& t : (*taps)[b]) {
        T* dst = gf->data() + static_cast<std::size_t>(t.cell) * C;
        const T wt = static_cast<T>(t.weight);
        for (int c = 0; c < C; ++c) dst[c] += wt * src[c];
      }
    }
  });
}

template Var roi_align<float>(Graph<float>&, Var, std::span<const Box>, double, int);
template Var roi_align<double>(Graph<double>&, Var, std::span<const Box>, double, int);

}  // namespace ag

template Tensor<float> roi_align<float>(const Tensor<float>&, const Box&, double, int);
template Tensor<double> roi_align<double>(const Tensor<double>&, const Box&, double, int);

}  // namespace got
