#include <cmath>
#include <random>

#include "doctest.h"
#include "got/autograd.hpp"
#include "gradcheck.hpp"

using namespace got;

namespace {

Tensor<double> rand_t(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("matmul and bias forward") {
    ag::Graph<double> g(false);
    const auto a = g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    const auto b = g.constant(Tensor<double>({2, 1}, {5, 6}));
    const auto& c = g.value(ag::add_bias(g, ag::matmul(g, a, b), g.constant(Tensor<double>::vector({1}))));
    CHECK(c[0] == 18);
    CHECK(c[1] == 40);
  }

  TEST_CASE("shape errors are reported") {
    ag::Graph<double> g(false);
    const auto a = g.constant(Tensor<double>({2, 3}));
    CHECK_THROWS_AS(ag::matmul(g, a, a), ShapeError);
    CHECK_THROWS_AS(ag::add(g, a, g.constant(Tensor<double>({3, 3}))), ShapeError);
  }

  TEST_CASE("a non-recording graph refuses backward") {
    ag::Graph<double> g(false);
    const auto a = g.constant(Tensor<double>({1}, {1.0}));
    CHECK_THROWS(g.backward(a));
  }

  TEST_CASE("gradients accumulate into shared parameters") {
    Parameter<double> p(Tensor<double>({1}, {3.0}));
    ag::Graph<double> g;
    const auto x = g.parameter(p);
    g.backward(ag::sum(g, ag::mul(g, x, x)));  // d/dx x^2 = 2x
    CHECK(p.grad[0] == doctest::Approx(6.0));
  }

  TEST_CASE("gradient check: elementwise, linear algebra and reshaping ops") {
    std::mt19937_64 rng(1);
    const auto x = rand_t({3, 4}, rng);
    const auto w = rand_t({4, 5}, rng), b = rand_t({5}, rng), y = rand_t({3, 5}, rng), mix = rand_t({3, 9}, rng);
    const std::vector<int> rows{2, 0, 2};
    const auto gc = testing::check_input(x, [&](ag::Graph<double>& g, ag::Var in) {
      const auto l = ag::linear(g, in, g.constant(w), g.constant(b));
      const auto a = ag::tanh(g, l), s = ag::sigmoid(g, l), r = ag::relu(g, ag::sub(g, l, g.constant(y)));
      const auto prod = ag::add(g, ag::mul(g, a, s), ag::scale(g, r, 0.7));
      const ag::Var parts[2] = {prod, ag::slice_cols(g, in, 0, 4)};
      const auto cat = ag::concat_cols<double>(g, parts);
      const auto picked = ag::gather_rows<double>(g, cat, rows);
      const auto sm = ag::softmax(g, ag::reshape(g, picked, {3, 9}));
      return ag::weighted_sum(g, sm, mix);
    });
    CHECK_MESSAGE(gc.max_rel < 1e-4, gc.worst);
  }

  TEST_CASE("gradient check: conv2d") {
    std::mt19937_64 rng(2);
    ParamStore<double> s;
    s.add("w", {3 * 3 * 2, 3}).value = rand_t({18, 3}, rng);
    s.add("b", {3}).value = rand_t({3}, rng);
    const auto img = rand_t({5, 6, 2}, rng);
    for (int stride : {1, 2}) {
      const auto probe = rand_t({stride == 1 ? 5 : 3, stride == 1 ? 6 : 3, 3}, rng);
      auto build = [&](ag::Graph<double>& g, ag::Var in) {
        return ag::weighted_sum(
            g, ag::conv2d(g, in, g.parameter(s.get("w")), g.parameter(s.get("b")), 3, stride, 1), probe);
      };
      const auto gp = testing::check_params(s, [&](ag::Graph<double>& g) { return build(g, g.constant(img)); }, 30);
      CHECK_MESSAGE(gp.max_rel < 1e-4, gp.worst);
      const auto gi = testing::check_input(img, build, 60);
      CHECK(gi.max_rel < 1e-4);
    }
  }

  TEST_CASE("gradient check: the four losses") {
    std::mt19937_64 rng(3);
    const auto logits = rand_t({4, 3}, rng, -3, 3);
    const std::vector<int> targets{0, -1, 2, 1};
    const std::vector<double> labels{1, 0, 1, 0, 0, 1, 1, 0, 1, 0, 0, 1};
    const std::vector<double> weights{1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0};
    const auto reg_target = rand_t({4, 3}, rng, -0.3, 0.3);
    const std::vector<double> mask{1, 0, 1, 1};
    const std::vector<double> signs{1, -1, -1, 1};
    const std::vector<double> w4{1, 1, 0, 1};
    auto check = [&](const testing::InputLossBuilder& f) {
      const auto gc = testing::check_input(logits, f);
      CHECK_MESSAGE(gc.max_rel < 1e-4, gc.worst);
    };
    check([&](ag::Graph<double>& g, ag::Var x) {
      return ag::softmax_cross_entropy(g, x, std::span<const int>(targets), 3.0);
    });
    check([&](ag::Graph<double>& g, ag::Var x) {
      return ag::sigmoid_cross_entropy(g, x, std::span<const double>(labels), std::span<const double>(weights), 10.0);
    });
    check([&](ag::Graph<double>& g, ag::Var x) {
      return ag::smooth_l1(g, x, reg_target, std::span<const double>(mask), 4.0, 1.0 / 9.0);
    });
    check([&](ag::Graph<double>& g, ag::Var x) {
      return ag::logistic_loss(g, ag::slice_cols(g, x, 0, 1), std::span<const double>(signs),
                               std::span<const double>(w4), 3.0);
    });
  }

  TEST_CASE("loss values") {
    ag::Graph<double> g(false);
    // uniform logits over 5 classes
    const auto z = g.constant(Tensor<double>({2, 5}));
    const std::vector<int> t{1, 4};
    CHECK(g.value(ag::softmax_cross_entropy(g, z, std::span<const int>(t), 2.0))[0] ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
    // smooth-L1 switches from quadratic to linear at beta
    const auto p = g.constant(Tensor<double>({1, 2}, {0.05, 2.0}));
    const std::vector<double> m{1};
    const double beta = 0.1;
    const double expect = 0.5 * 0.05 * 0.05 / beta + (2.0 - 0.5 * beta);
    CHECK(g.value(ag::smooth_l1(g, p, Tensor<double>({1, 2}), std::span<const double>(m), 1.0, beta))[0] ==
          doctest::Approx(expect));
    // logistic loss at extreme scores stays finite
    const auto f = g.constant(Tensor<double>({2}, {800.0, -800.0}));
    const std::vector<double> y{-1, -1}, w{1, 1};
    const double v = g.value(ag::logistic_loss(g, f, std::span<const double>(y), std::span<const double>(w), 1.0))[0];
    CHECK(v == doctest::Approx(800.0));
  }
}
