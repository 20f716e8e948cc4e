#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "got/detectnet.hpp"
#include "gradcheck.hpp"

using namespace got;

namespace {

Tensor<double> rand_t(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

BackboneConfig tiny_backbone() { return BackboneConfig{"test", {4, 5}, {2, 2}}; }

}  // namespace

TEST_SUITE("detectnet") {
  TEST_CASE("backbone feature size and shape") {
    const auto bc = tiny_backbone();
    CHECK(feature_size(bc, 16, 12) == std::pair<int, int>{4, 3});
    CHECK(feature_size(bc, 17, 12) == std::pair<int, int>{5, 3});
    ParamStore<double> s;
    std::mt19937_64 rng(0);
    add_backbone_params(s, bc, rng);
    CHECK(s.get("backbone.conv1.w").value.shape() == Shape{27, 4});
    CHECK(s.get("backbone.conv2.w").value.shape() == Shape{36, 5});
    ag::Graph<double> g(false);
    const auto out = g.value(backbone_forward(g, s, bc, g.constant(Tensor<double>({16, 12, 3}, 0.5))));
    CHECK(out.shape() == Shape{4, 3, 5});
    ag::Graph<double> g2(false);
    CHECK_THROWS_AS(backbone_forward(g2, s, bc, g2.constant(Tensor<double>({3, 3, 3}))), std::invalid_argument);
  }

  TEST_CASE("gradient check: backbone_forward") {
    const auto bc = tiny_backbone();
    ParamStore<double> s;
    std::mt19937_64 rng(1);
    add_backbone_params(s, bc, rng);
    for (auto& [n, p] : s.all())
      if (n.ends_with(".b")) init_uniform(p.value, rng, 0.2);
    const auto img = rand_t({8, 8, 3}, rng, 0, 1);
    const auto probe = rand_t({2, 2, 5}, rng);
    auto build = [&](ag::Graph<double>& g, ag::Var x) { return ag::weighted_sum(g, backbone_forward(g, s, bc, x), probe); };
    const auto gp = testing::check_params(s, [&](ag::Graph<double>& g) { return build(g, g.constant(img)); }, 25);
    CHECK_MESSAGE(gp.max_rel < 1e-4, gp.worst);
    const auto gi = testing::check_input(img, build, 60);
    CHECK_MESSAGE(gi.max_rel < 1e-4, gi.worst);
  }

  TEST_CASE("detection head output widths for four superclasses") {
    ParamStore<double> s;
    std::mt19937_64 rng(2);
    add_detection_params(s, 12, 8, 4, rng);
    ag::Graph<double> g(false);
    const auto out = detection_head(g, s, g.constant(Tensor<double>({3, 12}, 0.1)));
    CHECK(g.value(out.logits).shape() == Shape{3, 5});
    CHECK(g.value(out.deltas).shape() == Shape{3, 20});
  }

  TEST_CASE("loss_detection: uniform predictions and perfect predictions") {
    std::vector<LabeledRoI> rois(3);
    rois[0].matched_gt = 0;
    rois[0].label = 2;
    rois[1].matched_gt = 1;
    rois[1].label = 4;
    rois[2].label = 0;  // background
    ag::Graph<double> g(false);
    DetectionOutputVar out{g.constant(Tensor<double>({3, 5})), g.constant(Tensor<double>({3, 20}))};
    const auto loss = loss_detection(g, out, rois);
    CHECK(loss.num_positive == 2);
    CHECK(g.value(loss.superclass)[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(g.value(loss.loc)[0] == 0.0);

    Tensor<double> peaked({3, 5}, -50.0);
    peaked.at(0, 2) = 50.0;
    peaked.at(1, 4) = 50.0;
    DetectionOutputVar good{g.constant(peaked), g.constant(Tensor<double>({3, 20}))};
    CHECK(g.value(loss_detection(g, good, rois).superclass)[0] == doctest::Approx(0.0));
  }

  TEST_CASE("loss_detection: regression only on the matched class and scaled by the target stds") {
    std::vector<LabeledRoI> rois(2);
    rois[0].matched_gt = 0;
    rois[0].label = 1;
    rois[0].target = {0.1, -0.1, 0.2, 0.0};
    ag::Graph<double> g(false);
    Tensor<double> deltas({2, 8});
    deltas.at(1, 4) = 100;  // background row, ignored
    deltas.at(0, 0) = 5;    // background class of a positive RoI, ignored
    DetectionOutputVar out{g.constant(Tensor<double>({2, 2})), g.constant(deltas)};
    const TargetStds stds{0.1, 0.1, 0.2, 0.2};
    const auto loss = loss_detection(g, out, rois, stds);
    // normalised targets 1, -1, 1, 0; zero prediction; smooth-L1 (beta 1) = 0.5 + 0.5 + 0.5; over 2 RoIs
    CHECK(g.value(loss.loc)[0] == doctest::Approx(1.5 / 2.0));
  }

  TEST_CASE("gradient check: detection head and its losses") {
    ParamStore<double> s;
    std::mt19937_64 rng(3);
    add_detection_params(s, 10, 6, 2, rng);
    for (auto& [n, p] : s.all()) init_uniform(p.value, rng, 0.5);
    const auto pooled = rand_t({4, 10}, rng);
    std::vector<LabeledRoI> rois(4);
    rois[0].matched_gt = 0;
    rois[0].label = 1;
    rois[0].target = {0.1, 0.05, -0.2, 0.3};
    rois[2].matched_gt = 1;
    rois[2].label = 2;
    rois[2].target = {-0.3, 0.2, 0.1, 0.0};
    auto build = [&](ag::Graph<double>& g, ag::Var x) {
      const auto out = detection_head(g, s, x);
      const auto l = loss_detection(g, out, rois, TargetStds{0.1, 0.1, 0.2, 0.2});
      const ag::Var parts[2] = {l.loc, l.superclass};
      return ag::add_scalars<double>(g, parts);
    };
    const auto gp = testing::check_params(s, [&](ag::Graph<double>& g) { return build(g, g.constant(pooled)); }, 25);
    CHECK_MESSAGE(gp.max_rel < 1e-4, gp.worst);
    const auto gi = testing::check_input(pooled, build);
    CHECK(gi.max_rel < 1e-4);
  }

  TEST_CASE("gradient check: rpn head and loss") {
    ParamStore<double> s;
    std::mt19937_64 rng(4);
    add_rpn_params(s, 3, 4, 2, rng);
    for (auto& [n, p] : s.all()) init_uniform(p.value, rng, 0.5);
    const auto fm = rand_t({3, 3, 3}, rng);
    AnchorGrid grid{8, {8, 16}, {1.0}};
    const auto anchors = generate_anchors(grid, 3, 3);
    const std::vector<Box> gt{Box(2, 2, 12, 12), Box(10, 6, 24, 22)};
    std::mt19937_64 r2(5);
    const auto targets = assign_anchor_targets(anchors, gt, 8, 0.5, 0.2, r2);
    auto build = [&](ag::Graph<double>& g, ag::Var x) {
      const auto l = loss_rpn(g, rpn_head(g, s, x, 2), targets);
      const ag::Var parts[2] = {l.objectness, l.loc};
      return ag::add_scalars<double>(g, parts);
    };
    const auto gp = testing::check_params(s, [&](ag::Graph<double>& g) { return build(g, g.constant(fm)); }, 25);
    CHECK_MESSAGE(gp.max_rel < 1e-4, gp.worst);
  }

  TEST_CASE("anchor targets: every object gets its best anchor and the batch is capped") {
    AnchorGrid grid{8, {8, 16, 24}, {0.5, 1.0, 2.0}};
    const auto anchors = generate_anchors(grid, 6, 6);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 30), side(4, 18);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Box> gt;
      for (int k = 0; k < 3; ++k) {
        const double x = u(rng), y = u(rng);
        gt.push_back(Box(x, y, x + side(rng), y + side(rng)));
      }
      const int batch = 32;
      const auto t = assign_anchor_targets(anchors, gt, batch, 0.7, 0.3, rng);
      CHECK(t.num_sampled <= batch);
      CHECK(t.num_positive <= batch / 2);
      CHECK(t.num_positive >= 1);
      int sampled = 0;
      for (std::size_t i = 0; i < anchors.size(); ++i) {
        sampled += t.weights[i] != 0;
        if (t.labels[i] == 1) {
          CHECK(t.weights[i] == 1);
          CHECK(t.reg_mask[i] == 1);
        }
        if (t.weights[i] != 0 && t.labels[i] == 0) {
          double best = 0;
          for (const auto& b : gt) best = std::max(best, iou(anchors[i], b));
          CHECK(best < 0.3);
        }
      }
      CHECK(sampled == t.num_sampled);
    }
  }

  TEST_CASE("sample_rois: labels, caps and ordering") {
    const std::vector<GroundTruth> gt{{Box(0, 0, 10, 10), 1}, {Box(20, 20, 30, 30), 3}};
    std::vector<Box> props{Box(0, 0, 10, 11), Box(1, 1, 11, 11), Box(40, 40, 50, 50), Box(21, 20, 30, 31),
                           Box(0, 20, 5, 25), Box(5, 5, 20, 20)};
    std::mt19937_64 rng(7);
    const RoiSampling opts{5, 0.5, 0.5, true};
    const auto rois = sample_rois(props, gt, opts, rng);
    CHECK(rois.size() <= 5u);
    int npos = 0;
    bool seen_negative = false;
    for (const auto& r : rois) {
      double best = 0;
      int arg = -1;
      for (std::size_t j = 0; j < gt.size(); ++j)
        if (iou(r.box, gt[j].box) > best) {
          best = iou(r.box, gt[j].box);
          arg = static_cast<int>(j);
        }
      if (r.positive()) {
        CHECK_FALSE(seen_negative);  // positives come first
        CHECK(best >= 0.5);
        CHECK(r.matched_gt == arg);
        CHECK(r.label == gt[static_cast<std::size_t>(arg)].superclass + 1);
        ++npos;
      } else {
        seen_negative = true;
        CHECK(best < 0.5);
        CHECK(r.label == 0);
      }
    }
    CHECK(npos == 2);  // floor(0.5 * 5)
    CHECK_THROWS_AS(sample_rois(std::vector<Box>{}, std::vector<GroundTruth>{}, opts, rng), std::invalid_argument);
  }

  TEST_CASE("sample_rois keeps at least one positive even with a tiny fraction") {
    const std::vector<GroundTruth> gt{{Box(0, 0, 10, 10), 0}};
    std::mt19937_64 rng(8);
    const auto rois = sample_rois(std::vector<Box>{Box(30, 30, 40, 40)}, gt, RoiSampling{4, 0.5, 0.1, true}, rng);
    REQUIRE_FALSE(rois.empty());
    CHECK(rois.front().positive());
  }

  TEST_CASE("proposals are clipped, filtered and sorted") {
    const std::vector<Box> anchors{Box(-5, -5, 5, 5), Box(10, 10, 20, 20), Box(30, 30, 30.5, 30.5)};
    const std::vector<double> logits{0.5, 2.0, 9.0};
    const std::vector<double> deltas(12, 0.0);
    const auto props = decode_proposals(anchors, logits, deltas, ImageSize{32, 32}, 1.0);
    REQUIRE(props.size() == 2u);  // the half-pixel box is dropped
    CHECK(props[0].anchor == 1);
    CHECK(props[1].box == Box(0, 0, 5, 5));
    const auto kept = select_proposals(props, 10, 0.7, 1);
    CHECK(kept.size() == 1u);
  }
}
