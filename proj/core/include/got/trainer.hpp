#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "got/model.hpp"

namespace got {

/// Raised when the objective stops being finite; what() carries the dump.
class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossBreakdown {
  long iteration = 0;
  std::vector<std::pair<std::string, double>> items;
  double total = 0;
  double grad_norm = 0;
  int num_rois = 0;
  int num_positive = 0;

  /// Value of a named item; throws std::out_of_range when absent.
  double at(const std::string& name) const;
};

/// Per-parameter velocity, same names and shapes as the parameters.
struct MomentumState {
  ParamStore<float> velocity;
};

MomentumState make_momentum_state(const ParamStore<float>& params);

struct SgdOptions {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double clip_norm = 0;  // global gradient-norm clip, 0 disables
};

/// v <- mu v - lr (grad + wd theta); theta <- theta + v, with the loss
/// gradient clipped first. Returns the (pre-clip) gradient norm.
double sgd_update(ParamStore<float>& params, MomentumState& state, const SgdOptions& opts);

/// Learning rate at a given (0-based) iteration under the step schedule.
double learning_rate_at(const Config& cfg, long iteration);

/// Forward, backward and one parameter update on a single image.
LossBreakdown train_step(Model& model, MomentumState& state, const TrainExample& example, std::mt19937_64& rng,
                         long iteration);

/// Seeded single-writer loop over a fixed set of training images. Images are
/// visited in a fresh seeded shuffle every epoch.
class Trainer {
 public:
  /// Throws std::invalid_argument when the dataset does not fit the model
  /// (superclass names, vocabulary coverage, missing pixels).
  Trainer(Model model, const Dataset& train_set);

  LossBreakdown step();
  /// Runs until `iteration() == last`, calling on_step after every step.
  void run(long last, const std::function<void(const LossBreakdown&)>& on_step = {});

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  MomentumState& momentum() { return state_; }
  long iteration() const { return iteration_; }
  const std::vector<double>& loss_history() const { return history_; }

 private:
  Model model_;
  MomentumState state_;
  std::vector<TrainExample> examples_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
  long iteration_ = 0;
  std::vector<double> history_;
};

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
  int vocab_min_count = 2;
  std::function<void(const LossBreakdown&)> on_step;
};

struct TrainRun {
  Model model;
  std::vector<double> loss_history;
  std::vector<std::filesystem::path> checkpoints;
};

/// Builds the vocabulary from the training captions, initialises a model and
/// trains it for cfg.iterations steps, checkpointing every
/// cfg.checkpoint_every steps and at the end.
TrainRun train(const Dataset& train_set, const Config& cfg, const TrainOptions& options = {});

}  // namespace got
