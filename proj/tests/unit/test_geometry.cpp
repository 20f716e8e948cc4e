#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "got/geometry.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace got;

using testing::brute_nms;
using testing::random_int_box;
using testing::raster_iou;

TEST_SUITE("geometry") {
  TEST_CASE("box construction rejects degenerate boxes") {
    CHECK_THROWS_AS(Box(0, 0, 0, 5), std::invalid_argument);
    CHECK_THROWS_AS(Box(3, 0, 1, 5), std::invalid_argument);
    CHECK_THROWS_AS(Box(0, 0, NAN, 5), std::invalid_argument);
    CHECK_FALSE(Box::try_make(0, 0, 2, 0).has_value());
    CHECK(Box(0, 0, 4, 2).area() == 8);
  }

  TEST_CASE("iou examples") {
    CHECK(iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == doctest::Approx(1.0));
    CHECK(iou(Box(0, 0, 10, 10), Box(10, 0, 20, 10)) == 0.0);
    // half overlap: 50 / 150
    CHECK(iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) == doctest::Approx(1.0 / 3.0));
    CHECK(iou(Box(0, 0, 10, 10), Box(2, 2, 4, 4)) == doctest::Approx(4.0 / 100.0));
  }

  TEST_CASE("iou matches pixel counting on 1000 integer box pairs") {
    std::mt19937_64 rng(1);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      const Box a = random_int_box(rng, 24), b = random_int_box(rng, 24);
      worst = std::max(worst, std::abs(iou(a, b) - raster_iou(a, b)));
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("iou is symmetric and bounded") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 50);
    for (int i = 0; i < 500; ++i) {
      const double x = u(rng), y = u(rng);
      const Box a(x, y, x + 1 + u(rng), y + 1 + u(rng));
      const Box b(y, x, y + 1 + u(rng), x + 1 + u(rng));
      const double v = iou(a, b);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(v == doctest::Approx(iou(b, a)));
    }
  }

  TEST_CASE("clip_box") {
    const ImageSize s{20, 10};
    auto c = clip_box(Box(-5, -5, 25, 5), s);
    REQUIRE(c.has_value());
    CHECK(*c == Box(0, 0, 20, 5));
    CHECK_FALSE(clip_box(Box(30, 0, 40, 5), s).has_value());
  }

  TEST_CASE("anchor layout") {
    AnchorGrid grid{16, {32, 64}, {0.5, 1.0, 2.0}};
    const auto anchors = generate_anchors(grid, 2, 3);
    REQUIRE(anchors.size() == 2u * 3u * 6u);
    // first cell is centred on (8, 8); scale 32 ratio 1 is entry 1
    CHECK(anchors[1].cx() == doctest::Approx(8.0));
    CHECK(anchors[1].width() == doctest::Approx(32.0));
    CHECK(anchors[1].height() == doctest::Approx(32.0));
    // ratio is height / width and area is preserved
    CHECK(anchors[0].height() / anchors[0].width() == doctest::Approx(0.5));
    CHECK(anchors[0].area() == doctest::Approx(32.0 * 32.0));
    // second cell along x
    CHECK(anchors[6].cx() == doctest::Approx(24.0));
    // second row
    CHECK(anchors[18].cy() == doctest::Approx(24.0));
  }

  TEST_CASE("delta encode/decode round trip") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 100), s(1, 60);
    double worst = 0;
    for (int i = 0; i < 2000; ++i) {
      const double ax = u(rng), ay = u(rng), gx = u(rng), gy = u(rng);
      const Box a(ax, ay, ax + s(rng), ay + s(rng));
      const Box g(gx, gy, gx + s(rng), gy + s(rng));
      const Box back = decode_deltas(a, encode_deltas(a, g));
      for (int k = 0; k < 4; ++k) worst = std::max(worst, std::abs(back.coords()[k] - g.coords()[k]));
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("identity deltas") {
    const Box a(3, 4, 13, 24);
    const auto d = encode_deltas(a, a);
    for (double v : d) CHECK(v == doctest::Approx(0.0));
    CHECK(decode_deltas(a, Deltas{0, 0, 0, 0}) == a);
    // dx is measured in anchor widths
    CHECK(encode_deltas(a, Box(8, 4, 18, 24))[0] == doctest::Approx(0.5));
    CHECK(encode_deltas(a, Box(3, 4, 23, 24))[2] == doctest::Approx(std::log(2.0)));
  }

  TEST_CASE("nms equals the brute-force reference on 1000 random instances") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> count(0, 50);
    std::uniform_real_distribution<double> score(0, 1), thr(0.1, 0.9);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = count(rng);
      std::vector<Box> boxes;
      std::vector<double> scores;
      for (int i = 0; i < n; ++i) {
        boxes.push_back(random_int_box(rng, 40));
        // coarse scores so that ties actually happen
        scores.push_back(std::round(score(rng) * 20) / 20);
      }
      const double t = thr(rng);
      if (nms(boxes, scores, t) != brute_nms(boxes, scores, t)) ++mismatches;
    }
    CHECK(mismatches == 0);
  }

  TEST_CASE("nms keeps disjoint boxes and breaks ties by index") {
    const std::vector<Box> boxes{Box(0, 0, 10, 10), Box(1, 1, 11, 11), Box(50, 50, 60, 60)};
    const std::vector<double> scores{0.5, 0.5, 0.1};
    CHECK(nms(boxes, scores, 0.5) == std::vector<int>{0, 2});
    CHECK(nms(boxes, scores, 0.99) == std::vector<int>{0, 1, 2});
    CHECK(nms(std::vector<Box>{}, std::vector<double>{}, 0.5).empty());
  }

  TEST_CASE("roi_align on a linear map equals the map at bin centres") {
    // Bilinear interpolation reproduces a linear function exactly, and the
    // 2x2 samples of a bin average to its centre.
    const int H = 10, W = 12, C = 2;
    Tensor<double> fm({H, W, C});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        fm[static_cast<std::size_t>((y * W + x) * C)] = 1.0 + 2.0 * x + 3.0 * y;
        fm[static_cast<std::size_t>((y * W + x) * C + 1)] = -x + 0.5 * y;
      }
    const double scale = 0.5;
    const Box roi(4.4, 6.2, 17.0, 15.8);  // feature coordinates [2.2, 8.5] x [3.1, 7.9]
    const int P = 3;
    const auto out = roi_align(fm, roi, scale, P);
    const double bw = (roi.width() * scale) / P, bh = (roi.height() * scale) / P;
    for (int py = 0; py < P; ++py)
      for (int px = 0; px < P; ++px) {
        const double u = roi.x1 * scale + (px + 0.5) * bw - 0.5;
        const double v = roi.y1 * scale + (py + 0.5) * bh - 0.5;
        CHECK(out[static_cast<std::size_t>((py * P + px) * C)] == doctest::Approx(1.0 + 2.0 * u + 3.0 * v).epsilon(1e-12));
        CHECK(out[static_cast<std::size_t>((py * P + px) * C + 1)] == doctest::Approx(-u + 0.5 * v).epsilon(1e-12));
      }
  }

  TEST_CASE("roi_align of a constant map is constant inside the map") {
    Tensor<float> fm({6, 6, 1}, 2.5f);
    const auto out = roi_align(fm, Box(1, 1, 5, 5), 1.0, 4);
    for (float v : out.values()) CHECK(v == doctest::Approx(2.5));
  }

  TEST_CASE("roi_align rejects RoIs off the map") {
    Tensor<float> fm({4, 4, 1}, 1.0f);
    CHECK_THROWS_AS(roi_align(fm, Box(10, 10, 12, 12), 1.0, 2), std::invalid_argument);
  }

  TEST_CASE("batched roi_align matches the single-RoI kernel and its gradient checks") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor<double> fm({5, 6, 3});
    for (auto& v : fm.values()) v = u(rng);
    const std::vector<Box> rois{Box(0.5, 0.5, 9.0, 7.5), Box(3, 2, 11.5, 9.5), Box(-2, -1, 4, 3)};
    {
      ag::Graph<double> g(false);
      const auto out = g.value(ag::roi_align(g, g.constant(fm), rois, 0.5, 2));
      for (std::size_t r = 0; r < rois.size(); ++r) {
        const auto single = roi_align(fm, rois[r], 0.5, 2);
        for (std::size_t i = 0; i < single.size(); ++i) CHECK(out[r * single.size() + i] == doctest::Approx(single[i]));
      }
    }
    Tensor<double> w({3, 2 * 2 * 3});
    for (auto& v : w.values()) v = u(rng);
    const auto gc = testing::check_input(fm, [&](ag::Graph<double>& g, ag::Var x) {
      return ag::weighted_sum(g, ag::roi_align(g, x, rois, 0.5, 2), w);
    }, 90);
    CHECK(gc.max_rel < 1e-4);
  }
}
