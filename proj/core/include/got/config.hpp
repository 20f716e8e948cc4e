#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "got/geometry.hpp"

namespace got {

enum class Task { Caption, Retrieval };
enum class CaptionMode { OCN1, OCN2 };

std::string to_string(Task t);
std::string to_string(CaptionMode m);
Task parse_task(const std::string& s);
CaptionMode parse_caption_mode(const std::string& s);

/// Convolutional backbone layout. Every layer is a 3x3 convolution with ReLU.
struct BackboneConfig {
  std::string name;
  std::vector<int> channels;  // output channels per layer
  std::vector<int> strides;   // stride per layer

  int out_channels() const { return channels.empty() ? 3 : channels.back(); }
  int total_stride() const;

  /// "toy-8ch-s8" or "small-32ch-s16". Throws std::invalid_argument otherwise.
  static BackboneConfig preset(const std::string& name);
};

/// Everything needed to build, train and run a model. Flat so it maps 1:1
/// onto the key=value config file.
struct Config {
  // task
  Task task = Task::Caption;
  CaptionMode mode = CaptionMode::OCN2;
  std::string width_preset = "paper";

  // architecture
  std::string backbone = "small-32ch-s16";
  std::vector<double> anchor_scales{64, 128, 256, 512};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  int rpn_channels = 512;
  int pooled_size = 7;
  int detection_fc = 4096;
  std::vector<int> reduce_widths{4096, 2048, 512};
  int lstm_hidden = 512;
  int retrieval_fc = 256;
  int n_steps = 6;
  // RoI regression targets are divided by these before the loss
  std::vector<double> bbox_target_stds{0.1, 0.1, 0.2, 0.2};
  double init_range = 0.08;
  // The query encoder starts with a larger range: with one-hot inputs a small
  // range leaves the query too weak to break the symmetry between RoIs.
  double query_init_range = 0.08;
  double forget_bias = 1.0;

  // image preprocessing (0 disables resizing)
  int resize_shorter = 600;
  int resize_longer_max = 1000;

  // optimisation
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  long iterations = 200000;
  double grad_clip_norm = 10.0;  // 0 disables
  long lr_step_every = 0;        // 0 disables step decay
  double lr_step_gamma = 0.1;
  long checkpoint_every = 1000;
  std::uint64_t seed = 1;

  // region sampling
  int n_sample_rois = 2000;
  double pos_iou = 0.5;
  double pos_fraction = 0.25;
  bool append_gt_rois = true;
  int rpn_batch = 256;
  double rpn_pos_iou = 0.7;
  double rpn_neg_iou = 0.3;
  int rpn_pre_nms_top = 2000;
  int rpn_post_nms_train = 2000;
  double rpn_nms = 0.7;
  double min_box_size = 1.0;

  // inference
  int top_proposals = 300;
  double nms_threshold = 0.3;
  double score_threshold = 0.5;

  // retrieval
  bool mask_query_padding = false;
  bool retrieval_background = false;  // also score background RoIs in the retrieval loss

  BackboneConfig backbone_config() const { return BackboneConfig::preset(backbone); }
  AnchorGrid anchor_grid() const;

  /// Applies one key=value pair; throws std::invalid_argument on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::array<double, 4> target_stds() const {
    return {bbox_target_stds[0], bbox_target_stds[1], bbox_target_stds[2], bbox_target_stds[3]};
  }
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  void validate() const;

  /// Full widths ("paper") or desk-scale widths ("toy"). Resets every
  /// architecture, sampling and schedule field the preset covers.
  static Config preset(const std::string& name);
  static Config from_map(const std::map<std::string, std::string>& kv);
};

/// Parses a key=value file ('#' comments, blank lines ignored) on top of `base`.
Config load_config(const std::filesystem::path& path, Config base = Config::preset("paper"));
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace got
