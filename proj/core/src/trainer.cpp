#include "got/trainer.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>

#include "got/checkpoint.hpp"

namespace got {

double LossBreakdown::at(const std::string& name) const {
  for (const auto& [k, v] : items)
    if (k == name) return v;
  throw std::out_of_range("no loss item named " + name);
}

MomentumState make_momentum_state(const ParamStore<float>& params) {
  MomentumState s;
  for (const auto& [name, p] : params.all()) s.velocity.add(name, p.value.shape());
  return s;
}

double sgd_update(ParamStore<float>& params, MomentumState& state, const SgdOptions& opts) {
  const double norm = params.grad_norm();
  const double clip = opts.clip_norm > 0 && norm > opts.clip_norm ? opts.clip_norm / norm : 1.0;
  for (auto& [name, p] : params.all()) {
    auto& v = state.velocity.get(name).value;
    if (v.size() != p.value.size()) throw ShapeError("sgd_update: velocity for " + name + " has the wrong shape");
    if (p.grad.size() != p.value.size()) p.zero_grad();
    float* th = p.value.data();
    const float* gr = p.grad.data();
    float* vel = v.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double step = clip * gr[i] + opts.weight_decay * th[i];
      vel[i] = static_cast<float>(opts.momentum * vel[i] - opts.learning_rate * step);
      th[i] += vel[i];
    }
  }
  return norm;
}

double learning_rate_at(const Config& cfg, long iteration) {
  if (cfg.lr_step_every <= 0) return cfg.learning_rate;
  return cfg.learning_rate * std::pow(cfg.lr_step_gamma, static_cast<double>(iteration / cfg.lr_step_every));
}

namespace {

std::string dump(const Model& model, long iteration, const LossTerms<float>& terms, const ag::Graph<float>& g) {
  std::ostringstream os;
  os << "non-finite loss at iteration " << iteration << ":";
  for (const auto& [name, v] : terms.items) os << " " << name << "=" << g.value(v)[0];
  os << "; grad norms:";
  for (const auto& [name, p] : model.params.all()) {
    double s = 0;
    for (float x : p.grad.values()) s += static_cast<double>(x) * x;
    os << " " << name << "=" << std::sqrt(s);
  }
  return os.str();
}

}  // namespace

LossBreakdown train_step(Model& model, MomentumState& state, const TrainExample& example, std::mt19937_64& rng,
                         long iteration) {
  const Config& cfg = model.config;
  model.params.zero_grad();
  ag::Graph<float> g;
  const auto choice = draw_choice(example, cfg.task, rng);
  const auto terms = build_losses(g, model.params, cfg, example, choice, rng, model.vocab.eoc_index());

  LossBreakdown out;
  out.iteration = iteration;
  out.num_rois = terms.num_rois;
  out.num_positive = terms.num_positive;
  for (const auto& [name, v] : terms.items) out.items.emplace_back(name, static_cast<double>(g.value(v)[0]));
  out.total = static_cast<double>(g.value(terms.total)[0]);
  if (!std::isfinite(out.total)) throw NonFiniteLossError(dump(model, iteration, terms, g));

  g.backward(terms.total);
  const SgdOptions opts{learning_rate_at(cfg, iteration), cfg.momentum, cfg.weight_decay, cfg.grad_clip_norm};
  out.grad_norm = sgd_update(model.params, state, opts);
  if (!std::isfinite(out.grad_norm)) throw NonFiniteLossError(dump(model, iteration, terms, g));
  assert(model.params.all_finite());
  return out;
}

Trainer::Trainer(Model model, const Dataset& train_set)
    : model_(std::move(model)), state_(make_momentum_state(model_.params)), rng_(model_.config.seed ^ 0x9e3779b97f4a7c15ULL) {
  if (train_set.images.empty()) throw std::invalid_argument("trainer: empty training set");
  if (train_set.superclasses != model_.superclasses) {
    throw std::invalid_argument("trainer: dataset superclasses do not match the model's");
  }
  const std::string vocab_tensor = model_.config.task == Task::Caption ? "cap.proj.W_z" : "ret.query_lstm.W_xi";
  const auto& t = model_.params.get(vocab_tensor).value;
  const int model_vocab = model_.config.task == Task::Caption ? t.dim(1) : t.dim(0);
  if (model_vocab != model_.vocab.size()) {
    throw std::invalid_argument("trainer: vocabulary has " + std::to_string(model_.vocab.size()) +
                                " words but the model tensors expect " + std::to_string(model_vocab));
  }
  for (const auto& img : train_set.images) {
    if (img.objects.empty()) continue;
    examples_.push_back(make_example(img, model_.vocab, model_.config));
  }
  if (examples_.empty()) throw std::invalid_argument("trainer: no training image has annotated objects");
  order_.resize(examples_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

LossBreakdown Trainer::step() {
  if (cursor_ == order_.size()) {
    cursor_ = 0;
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  const auto& ex = examples_[order_[cursor_++]];
  auto out = train_step(model_, state_, ex, rng_, iteration_);
  ++iteration_;
  out.iteration = iteration_;
  history_.push_back(out.total);
  return out;
}

void Trainer::run(long last, const std::function<void(const LossBreakdown&)>& on_step) {
  while (iteration_ < last) {
    const auto b = step();
    if (on_step) on_step(b);
  }
}

TrainRun train(const Dataset& train_set, const Config& cfg, const TrainOptions& options) {
  cfg.validate();
  auto vocab = build_vocabulary(train_set.all_captions(), options.vocab_min_count);
  Trainer trainer(create_model(cfg, std::move(vocab), train_set.superclasses), train_set);
  TrainRun run;
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);
  auto tail = [&] {
    const auto& h = trainer.loss_history();
    const std::size_t n = std::min<std::size_t>(h.size(), 100);
    return std::vector<double>(h.end() - static_cast<std::ptrdiff_t>(n), h.end());
  };
  auto save = [&](const std::string& name) {
    const auto path = options.checkpoint_dir / name;
    save_checkpoint(path, trainer.model(), trainer.iteration(), tail(), &trainer.momentum());
    run.checkpoints.push_back(path);
  };
  while (trainer.iteration() < cfg.iterations) {
    const auto b = trainer.step();
    if (options.on_step) options.on_step(b);
    if (!options.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0 &&
        trainer.iteration() < cfg.iterations) {
      save("iter_" + std::to_string(trainer.iteration()) + ".ckpt");
    }
  }
  if (!options.checkpoint_dir.empty()) save("final.ckpt");
  run.loss_history = trainer.loss_history();
  run.model = std::move(trainer.model());
  return run;
}

}  // namespace got
