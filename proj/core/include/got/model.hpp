#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "got/config.hpp"
#include "got/datasets.hpp"
#include "got/detectnet.hpp"
#include "got/params.hpp"

namespace got {

/// Everything inference needs: configuration, dictionary, class names and the
/// learnable tensors.
struct Model {
  Config config;
  Vocabulary vocab;
  std::vector<std::string> superclasses;
  ParamStore<float> params;

  int num_classes() const { return static_cast<int>(superclasses.size()); }
};

int pooled_dim(const Config& cfg);

/// Seeded initialisation of backbone, RPN, detection head and the task head.
template <typename T>
void init_params(ParamStore<T>& store, const Config& cfg, int vocab_size, int num_classes);

Model create_model(const Config& cfg, Vocabulary vocab, std::vector<std::string> superclasses);

/// Image resized per config plus the factor mapping original to network pixels.
struct PreparedImage {
  Image pixels;
  double scale = 1.0;
  ImageSize original;
  ImageSize network;
};

PreparedImage prepare_image(const Image& image, const Config& cfg);
Box scale_box(const Box& b, double s);

/// One training image with ground truth in network coordinates and every
/// reference caption of every object already tokenized.
struct TrainExample {
  std::string image_id;
  PreparedImage image;
  std::vector<GroundTruth> objects;
  std::vector<std::vector<std::vector<int>>> captions;  // [object][caption] -> n_steps ids
};

TrainExample make_example(const AnnotatedImage& image, const Vocabulary& vocab, const Config& cfg);

/// Per-iteration choices drawn from the RNG, exposed so a forward pass can be
/// replayed exactly (gradient checks evaluate the same sample many times).
struct SampleChoice {
  std::vector<int> caption_of_object;  // which caption each object contributes
  int query_object = -1;
  int query_caption = -1;
};

SampleChoice draw_choice(const TrainExample& ex, Task task, std::mt19937_64& rng);

template <typename T>
struct LossTerms {
  std::vector<std::pair<std::string, ag::Var>> items;
  ag::Var total;
  int num_rois = 0;
  int num_positive = 0;
};

/// Builds the complete multi-task objective for one image on `g`: RPN terms,
/// L_loc, L_superclass and L_caption or L_retrieval.
template <typename T>
LossTerms<T> build_losses(ag::Graph<T>& g, ParamStore<T>& store, const Config& cfg, const TrainExample& ex,
                          const SampleChoice& choice, std::mt19937_64& rng, int eoc_index);

}  // namespace got
