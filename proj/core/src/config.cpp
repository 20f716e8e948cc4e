#include "got/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace got {

std::string to_string(Task t) { return t == Task::Caption ? "caption" : "retrieval"; }
std::string to_string(CaptionMode m) { return m == CaptionMode::OCN1 ? "OCN1" : "OCN2"; }

Task parse_task(const std::string& s) {
  if (s == "caption") return Task::Caption;
  if (s == "retrieval") return Task::Retrieval;
  throw std::invalid_argument("unknown task '" + s + "' (expected caption|retrieval)");
}

CaptionMode parse_caption_mode(const std::string& s) {
  if (s == "OCN1" || s == "ocn1") return CaptionMode::OCN1;
  if (s == "OCN2" || s == "ocn2") return CaptionMode::OCN2;
  throw std::invalid_argument("unknown caption mode '" + s + "' (expected OCN1|OCN2)");
}

int BackboneConfig::total_stride() const {
  int s = 1;
  for (int v : strides) s *= v;
  return s;
}

BackboneConfig BackboneConfig::preset(const std::string& name) {
  if (name == "toy-8ch-s8") return {name, {8, 8, 8}, {2, 2, 2}};
  if (name == "toy-16ch-s8") return {name, {16, 16, 16}, {2, 2, 2}};
  if (name == "small-32ch-s16") return {name, {16, 32, 32, 32}, {2, 2, 2, 2}};
  throw std::invalid_argument("unknown backbone preset '" + name + "'");
}

AnchorGrid Config::anchor_grid() const {
  AnchorGrid g;
  g.stride = backbone_config().total_stride();
  g.scales = anchor_scales;
  g.ratios = anchor_ratios;
  return g;
}

Config Config::preset(const std::string& name) {
  Config c;
  if (name == "paper") {
    return c;
  }
  if (name == "toy") {
    c.width_preset = "toy";
    c.backbone = "toy-8ch-s8";
    c.anchor_scales = {11, 15, 20, 26};
    c.rpn_channels = 16;
    c.detection_fc = 64;
    c.reduce_widths = {64, 32, 16};
    c.lstm_hidden = 16;
    c.retrieval_fc = 16;
    c.resize_shorter = 0;
    c.resize_longer_max = 0;
    c.learning_rate = 0.01;
    c.iterations = 2000;
    c.grad_clip_norm = 0.0;
    c.checkpoint_every = 500;
    c.n_sample_rois = 64;
    c.rpn_batch = 64;
    c.rpn_pre_nms_top = 2000;
    c.rpn_post_nms_train = 300;
    c.init_range = 0.3;
    c.query_init_range = 0.6;
    return c;
  }
  throw std::invalid_argument("unknown width preset '" + name + "' (expected paper|toy)");
}

namespace {

template <typename V>
V parse_number(const std::string& key, const std::string& s) {
  V v{};
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || ptr != e) throw std::invalid_argument("config: bad value '" + s + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw std::invalid_argument("config: bad boolean '" + s + "' for " + key);
}

template <typename V>
std::vector<V> parse_list(const std::string& key, const std::string& s) {
  std::vector<V> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(' ');
    const auto b = item.find_last_not_of(' ');
    if (a == std::string::npos) continue;
    out.push_back(parse_number<V>(key, item.substr(a, b - a + 1)));
  }
  if (out.empty()) throw std::invalid_argument("config: empty list for " + key);
  return out;
}

template <typename V>
std::string join(const std::vector<V>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void Config::set(const std::string& key, const std::string& v) {
  static const std::map<std::string, std::function<void(Config&, const std::string&, const std::string&)>> setters{
      {"task", [](Config& c, auto&, auto& s) { c.task = parse_task(s); }},
      {"mode", [](Config& c, auto&, auto& s) { c.mode = parse_caption_mode(s); }},
      {"width_preset", [](Config& c, auto&, auto& s) { c.width_preset = s; }},
      {"backbone", [](Config& c, auto&, auto& s) { (void)BackboneConfig::preset(s); c.backbone = s; }},
      {"anchor_scales", [](Config& c, auto& k, auto& s) { c.anchor_scales = parse_list<double>(k, s); }},
      {"anchor_ratios", [](Config& c, auto& k, auto& s) { c.anchor_ratios = parse_list<double>(k, s); }},
      {"bbox_target_stds", [](Config& c, auto& k, auto& s) { c.bbox_target_stds = parse_list<double>(k, s); }},
      {"rpn_channels", [](Config& c, auto& k, auto& s) { c.rpn_channels = parse_number<int>(k, s); }},
      {"pooled_size", [](Config& c, auto& k, auto& s) { c.pooled_size = parse_number<int>(k, s); }},
      {"detection_fc", [](Config& c, auto& k, auto& s) { c.detection_fc = parse_number<int>(k, s); }},
      {"reduce_widths", [](Config& c, auto& k, auto& s) { c.reduce_widths = parse_list<int>(k, s); }},
      {"lstm_hidden", [](Config& c, auto& k, auto& s) { c.lstm_hidden = parse_number<int>(k, s); }},
      {"retrieval_fc", [](Config& c, auto& k, auto& s) { c.retrieval_fc = parse_number<int>(k, s); }},
      {"n_steps", [](Config& c, auto& k, auto& s) { c.n_steps = parse_number<int>(k, s); }},
      {"init_range", [](Config& c, auto& k, auto& s) { c.init_range = parse_number<double>(k, s); }},
      {"query_init_range", [](Config& c, auto& k, auto& s) { c.query_init_range = parse_number<double>(k, s); }},
      {"forget_bias", [](Config& c, auto& k, auto& s) { c.forget_bias = parse_number<double>(k, s); }},
      {"resize_shorter", [](Config& c, auto& k, auto& s) { c.resize_shorter = parse_number<int>(k, s); }},
      {"resize_longer_max", [](Config& c, auto& k, auto& s) { c.resize_longer_max = parse_number<int>(k, s); }},
      {"learning_rate", [](Config& c, auto& k, auto& s) { c.learning_rate = parse_number<double>(k, s); }},
      {"momentum", [](Config& c, auto& k, auto& s) { c.momentum = parse_number<double>(k, s); }},
      {"weight_decay", [](Config& c, auto& k, auto& s) { c.weight_decay = parse_number<double>(k, s); }},
      {"iterations", [](Config& c, auto& k, auto& s) { c.iterations = parse_number<long>(k, s); }},
      {"grad_clip_norm", [](Config& c, auto& k, auto& s) { c.grad_clip_norm = parse_number<double>(k, s); }},
      {"lr_step_every", [](Config& c, auto& k, auto& s) { c.lr_step_every = parse_number<long>(k, s); }},
      {"lr_step_gamma", [](Config& c, auto& k, auto& s) { c.lr_step_gamma = parse_number<double>(k, s); }},
      {"checkpoint_every", [](Config& c, auto& k, auto& s) { c.checkpoint_every = parse_number<long>(k, s); }},
      {"seed", [](Config& c, auto& k, auto& s) { c.seed = parse_number<std::uint64_t>(k, s); }},
      {"n_sample_rois", [](Config& c, auto& k, auto& s) { c.n_sample_rois = parse_number<int>(k, s); }},
      {"pos_iou", [](Config& c, auto& k, auto& s) { c.pos_iou = parse_number<double>(k, s); }},
      {"pos_fraction", [](Config& c, auto& k, auto& s) { c.pos_fraction = parse_number<double>(k, s); }},
      {"append_gt_rois", [](Config& c, auto& k, auto& s) { c.append_gt_rois = parse_bool(k, s); }},
      {"rpn_batch", [](Config& c, auto& k, auto& s) { c.rpn_batch = parse_number<int>(k, s); }},
      {"rpn_pos_iou", [](Config& c, auto& k, auto& s) { c.rpn_pos_iou = parse_number<double>(k, s); }},
      {"rpn_neg_iou", [](Config& c, auto& k, auto& s) { c.rpn_neg_iou = parse_number<double>(k, s); }},
      {"rpn_pre_nms_top", [](Config& c, auto& k, auto& s) { c.rpn_pre_nms_top = parse_number<int>(k, s); }},
      {"rpn_post_nms_train", [](Config& c, auto& k, auto& s) { c.rpn_post_nms_train = parse_number<int>(k, s); }},
      {"rpn_nms", [](Config& c, auto& k, auto& s) { c.rpn_nms = parse_number<double>(k, s); }},
      {"min_box_size", [](Config& c, auto& k, auto& s) { c.min_box_size = parse_number<double>(k, s); }},
      {"top_proposals", [](Config& c, auto& k, auto& s) { c.top_proposals = parse_number<int>(k, s); }},
      {"nms_threshold", [](Config& c, auto& k, auto& s) { c.nms_threshold = parse_number<double>(k, s); }},
      {"score_threshold", [](Config& c, auto& k, auto& s) { c.score_threshold = parse_number<double>(k, s); }},
      {"mask_query_padding", [](Config& c, auto& k, auto& s) { c.mask_query_padding = parse_bool(k, s); }},
      {"retrieval_background", [](Config& c, auto& k, auto& s) { c.retrieval_background = parse_bool(k, s); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second(*this, key, v);
}

std::map<std::string, std::string> Config::to_map() const {
  return {
      {"task", to_string(task)},
      {"mode", to_string(mode)},
      {"width_preset", width_preset},
      {"backbone", backbone},
      {"anchor_scales", join(anchor_scales)},
      {"anchor_ratios", join(anchor_ratios)},
      {"bbox_target_stds", join(bbox_target_stds)},
      {"rpn_channels", std::to_string(rpn_channels)},
      {"pooled_size", std::to_string(pooled_size)},
      {"detection_fc", std::to_string(detection_fc)},
      {"reduce_widths", join(reduce_widths)},
      {"lstm_hidden", std::to_string(lstm_hidden)},
      {"retrieval_fc", std::to_string(retrieval_fc)},
      {"n_steps", std::to_string(n_steps)},
      {"init_range", num(init_range)},
      {"query_init_range", num(query_init_range)},
      {"forget_bias", num(forget_bias)},
      {"resize_shorter", std::to_string(resize_shorter)},
      {"resize_longer_max", std::to_string(resize_longer_max)},
      {"learning_rate", num(learning_rate)},
      {"momentum", num(momentum)},
      {"weight_decay", num(weight_decay)},
      {"iterations", std::to_string(iterations)},
      {"grad_clip_norm", num(grad_clip_norm)},
      {"lr_step_every", std::to_string(lr_step_every)},
      {"lr_step_gamma", num(lr_step_gamma)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"seed", std::to_string(seed)},
      {"n_sample_rois", std::to_string(n_sample_rois)},
      {"pos_iou", num(pos_iou)},
      {"pos_fraction", num(pos_fraction)},
      {"append_gt_rois", append_gt_rois ? "true" : "false"},
      {"rpn_batch", std::to_string(rpn_batch)},
      {"rpn_pos_iou", num(rpn_pos_iou)},
      {"rpn_neg_iou", num(rpn_neg_iou)},
      {"rpn_pre_nms_top", std::to_string(rpn_pre_nms_top)},
      {"rpn_post_nms_train", std::to_string(rpn_post_nms_train)},
      {"rpn_nms", num(rpn_nms)},
      {"min_box_size", num(min_box_size)},
      {"top_proposals", std::to_string(top_proposals)},
      {"nms_threshold", num(nms_threshold)},
      {"score_threshold", num(score_threshold)},
      {"mask_query_padding", mask_query_padding ? "true" : "false"},
      {"retrieval_background", retrieval_background ? "true" : "false"},
  };
}

std::string Config::to_text() const {
  std::string s;
  for (const auto& [k, v] : to_map()) s += k + "=" + v + "\n";
  return s;
}

void Config::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  need(learning_rate >= 0, "learning_rate must be >= 0");
  need(momentum >= 0 && momentum < 1, "momentum must be in [0,1)");
  need(weight_decay >= 0, "weight_decay must be >= 0");
  need(iterations >= 1, "iterations must be >= 1");
  need(n_steps >= 1, "n_steps must be >= 1");
  need(init_range >= 0 && query_init_range >= 0, "init ranges must be >= 0");
  need(pos_iou > 0 && pos_iou < 1, "pos_iou must be in (0,1)");
  need(n_sample_rois >= 1, "n_sample_rois must be >= 1");
  need(anchor_scales.size() * anchor_ratios.size() >= 1, "anchor set is empty");
  need(bbox_target_stds.size() == 4 &&
           std::all_of(bbox_target_stds.begin(), bbox_target_stds.end(), [](double v) { return v > 0; }),
       "bbox_target_stds needs four positive values");
  need(reduce_widths.size() == 3, "reduce_widths needs exactly three widths");
  need(pooled_size >= 1 && lstm_hidden >= 1 && detection_fc >= 1 && retrieval_fc >= 1, "layer widths must be >= 1");
  (void)backbone_config();
}

Config Config::from_map(const std::map<std::string, std::string>& kv) {
  auto it = kv.find("width_preset");
  Config c = preset(it == kv.end() ? "paper" : it->second);
  for (const auto& [k, v] : kv)
    if (k != "width_preset") c.set(k, v);
  return c;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(n) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

Config load_config(const std::filesystem::path& path, Config base) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto kv = parse_key_values(ss.str());
  auto it = kv.find("width_preset");
  if (it != kv.end()) base = Config::preset(it->second);
  for (const auto& [k, v] : kv)
    if (k != "width_preset") base.set(k, v);
  base.validate();
  return base;
}

}  // namespace got
