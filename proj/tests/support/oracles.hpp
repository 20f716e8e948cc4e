#pragma once

// Slow, obviously-correct reference implementations used as test oracles.

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "got/geometry.hpp"

namespace got::testing {

// Pixel-count IoU for integer boxes: every unit cell [x, x+1) x [y, y+1) is
// inside or outside, so counting cells is exact.
inline double raster_iou(const Box& a, const Box& b) {
  std::set<std::pair<int, int>> pa, pb;
  for (int y = static_cast<int>(a.y1); y < static_cast<int>(a.y2); ++y)
    for (int x = static_cast<int>(a.x1); x < static_cast<int>(a.x2); ++x) pa.insert({x, y});
  for (int y = static_cast<int>(b.y1); y < static_cast<int>(b.y2); ++y)
    for (int x = static_cast<int>(b.x1); x < static_cast<int>(b.x2); ++x) pb.insert({x, y});
  std::size_t inter = 0;
  for (const auto& p : pa) inter += pb.count(p);
  return static_cast<double>(inter) / static_cast<double>(pa.size() + pb.size() - inter);
}

// Suppression written the slow way: repeatedly take the best remaining box and
// delete everything that overlaps it too much.
inline std::vector<int> brute_nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double thr) {
  std::vector<int> alive(boxes.size());
  std::iota(alive.begin(), alive.end(), 0);
  std::vector<int> keep;
  while (!alive.empty()) {
    auto best = alive.begin();
    for (auto it = alive.begin(); it != alive.end(); ++it)
      if (scores[static_cast<std::size_t>(*it)] > scores[static_cast<std::size_t>(*best)]) best = it;
    const int k = *best;
    keep.push_back(k);
    std::vector<int> rest;
    for (int j : alive)
      if (j != k && iou(boxes[static_cast<std::size_t>(j)], boxes[static_cast<std::size_t>(k)]) <= thr) rest.push_back(j);
    alive = rest;
  }
  return keep;
}

inline Box random_int_box(std::mt19937_64& rng, int extent) {
  std::uniform_int_distribution<int> c(0, extent - 1);
  int x1 = c(rng), x2 = c(rng), y1 = c(rng), y2 = c(rng);
  if (x1 == x2) ++x2;
  if (y1 == y2) ++y2;
  return Box(std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2));
}

}  // namespace got::testing
