#include <benchmark/benchmark.h>

#include <random>

#include "got/detectnet.hpp"
#include "got/seqcore.hpp"
#include "got/trainer.hpp"

using namespace got;

namespace {

void BM_nms(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 200), side(4, 40), s(0, 1);
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (int i = 0; i < state.range(0); ++i) {
    const double x = u(rng), y = u(rng);
    boxes.emplace_back(x, y, x + side(rng), y + side(rng));
    scores.push_back(s(rng));
  }
  for (auto _ : state) benchmark::DoNotOptimize(nms(boxes, scores, 0.7));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_nms)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

void BM_roi_align(benchmark::State& state) {
  std::mt19937_64 rng(2);
  Tensor<float> fm({16, 16, 8});
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : fm.values()) v = u(rng);
  std::vector<Box> rois;
  for (int i = 0; i < state.range(0); ++i) rois.emplace_back(i % 50, i % 30, i % 50 + 40, i % 30 + 60);
  for (auto _ : state) {
    ag::Graph<float> g(false);
    benchmark::DoNotOptimize(g.value(ag::roi_align(g, g.constant(fm), rois, 1.0 / 8, 7)).data());
  }
}
BENCHMARK(BM_roi_align)->Arg(16)->Arg(64)->Arg(256);

void BM_lstm_step(benchmark::State& state) {
  const int hidden = static_cast<int>(state.range(0));
  std::mt19937_64 rng(3);
  const LstmSpec spec{"l", hidden, hidden};
  ParamStore<float> store;
  add_lstm_params(store, spec, rng, LstmInit{0.08, 1.0});
  const Tensor<float> x({32, hidden}, 0.1f);
  for (auto _ : state) {
    ag::Graph<float> g(false);
    const auto w = bind_lstm(g, store, spec);
    benchmark::DoNotOptimize(g.value(lstm_step(g, g.constant(x), lstm_zero_state(g, 32, hidden), w).h).data());
  }
}
BENCHMARK(BM_lstm_step)->Arg(16)->Arg(64)->Arg(512);

void BM_train_step(benchmark::State& state) {
  const auto ds = generate_synthetic_corpus(4, 5, 64);
  auto cfg = Config::preset("toy");
  cfg.task = state.range(0) ? Task::Retrieval : Task::Caption;
  Trainer t(create_model(cfg, build_vocabulary(ds.all_captions(), 1), ds.superclasses), ds);
  for (auto _ : state) benchmark::DoNotOptimize(t.step().total);
}
BENCHMARK(BM_train_step)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
