#include "got/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "got/captionhead.hpp"
#include "got/retrievalhead.hpp"

namespace got {

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Inference only reads the parameters; binding them to a non-recording graph
// needs the mutable reference type but never writes through it.
ParamStore<float>& read_only(const Model& m) { return const_cast<ParamStore<float>&>(m.params); }

struct Front {
  PreparedImage image;
  ag::Var feat;
  std::vector<Proposal> proposals;  // network coordinates
};

Front run_front(ag::Graph<float>& g, const Model& model, const Image& input, double second_nms) {
  const Config& cfg = model.config;
  const auto bc = cfg.backbone_config();
  const auto grid = cfg.anchor_grid();
  auto& params = read_only(model);
  Front f;
  f.image = prepare_image(input, cfg);
  f.feat = backbone_forward(g, params, bc, g.constant(f.image.pixels));
  const auto rpn = rpn_head(g, params, f.feat, grid.per_cell());
  const auto anchors = generate_anchors(grid, rpn.feat_h, rpn.feat_w);
  const auto sorted = decode_proposals(anchors, g.value(rpn.logits).values(), g.value(rpn.deltas).values(),
                                       f.image.network, cfg.min_box_size);
  f.proposals = select_proposals(sorted, cfg.rpn_pre_nms_top, cfg.rpn_nms, cfg.top_proposals);
  if (second_nms > 0) f.proposals = select_proposals(f.proposals, cfg.top_proposals, second_nms, cfg.top_proposals);
  if (f.proposals.empty()) {
    // Every decoded box was degenerate; the whole image stands in as the only candidate.
    f.proposals.push_back({Box(0, 0, f.image.network.width, f.image.network.height), 0.0, -1});
  }
  return f;
}

struct HeadOutput {
  std::vector<int> superclass;
  std::vector<double> class_prob;
  std::vector<Box> refined;  // network coordinates
};

HeadOutput run_detection_head(ag::Graph<float>& g, const Model& model, ag::Var pooled,
                              const std::vector<Proposal>& proposals, ImageSize bounds) {
  auto& params = read_only(model);
  const auto det = detection_head(g, params, pooled);
  const auto& logits = g.value(det.logits);
  const auto& deltas = g.value(det.deltas);
  const int C = logits.cols();
  HeadOutput out;
  for (int r = 0; r < logits.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) row[static_cast<std::size_t>(c)] = logits.at(r, c);
    const auto p = softmax(row);
    int best = 1;
    for (int c = 2; c < C; ++c)
      if (p[static_cast<std::size_t>(c)] > p[static_cast<std::size_t>(best)]) best = c;
    out.superclass.push_back(best - 1);
    out.class_prob.push_back(p[static_cast<std::size_t>(best)]);
    const auto sd = model.config.target_stds();
    const Deltas d{deltas.at(r, 4 * best) * sd[0], deltas.at(r, 4 * best + 1) * sd[1], deltas.at(r, 4 * best + 2) * sd[2],
                   deltas.at(r, 4 * best + 3) * sd[3]};
    const Box& prop = proposals[static_cast<std::size_t>(r)].box;
    out.refined.push_back(decode_deltas(prop, d, bounds).value_or(prop));
  }
  return out;
}

Box to_original(const Box& b, const PreparedImage& img) {
  const Box s = img.scale == 1.0 ? b : scale_box(b, 1.0 / img.scale);
  return clip_box(s, img.original).value_or(s);
}

ag::Var pool(ag::Graph<float>& g, const Model& model, ag::Var feat, const std::vector<Box>& boxes) {
  const auto bc = model.config.backbone_config();
  return ag::roi_align(g, feat, boxes, 1.0 / bc.total_stride(), model.config.pooled_size);
}

struct Kept {
  std::vector<int> index;  // rows of the head output, in NMS order
  std::vector<double> score;
  bool fallback = false;
};

// Detection score, NMS over refined boxes, then the score threshold with the
// single best box as a fallback so something is always returned.
Kept filter_detections(const Config& cfg, const std::vector<Proposal>& proposals, const HeadOutput& head) {
  std::vector<double> scores;
  for (std::size_t i = 0; i < proposals.size(); ++i)
    scores.push_back(sigmoid(proposals[i].objectness) * head.class_prob[i]);
  const auto kept = nms(head.refined, scores, cfg.nms_threshold);
  Kept out;
  for (int k : kept)
    if (scores[static_cast<std::size_t>(k)] > cfg.score_threshold) out.index.push_back(k);
  if (out.index.empty()) {
    out.index.push_back(kept.front());
    out.fallback = true;
  }
  for (int k : out.index) out.score.push_back(scores[static_cast<std::size_t>(k)]);
  return out;
}

}  // namespace

int argmax_first(const std::vector<double>& scores) {
  int best = -1;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (best < 0 || scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

DetectionResult detect_and_caption(const Model& model, const Image& image) {
  const Config& cfg = model.config;
  if (cfg.task != Task::Caption) throw std::invalid_argument("detect_and_caption: model was not trained for captioning");
  if (model.params.size() == 0) throw std::invalid_argument("detect_and_caption: model has no parameters");
  ag::Graph<float> g(false);
  const Front f = run_front(g, model, image, 0.0);
  std::vector<Box> boxes;
  for (const auto& p : f.proposals) boxes.push_back(p.box);
  const auto head = run_detection_head(g, model, pool(g, model, f.feat, boxes), f.proposals, f.image.network);

  const Kept kept = filter_detections(cfg, f.proposals, head);
  const std::vector<int>& chosen = kept.index;
  DetectionResult result;
  result.fallback = kept.fallback;

  std::vector<Box> final_boxes;
  for (int k : chosen) final_boxes.push_back(head.refined[static_cast<std::size_t>(k)]);
  auto& params = read_only(model);
  const auto visual = reduce_roi_feature(g, params, "cap", pool(g, model, f.feat, final_boxes));
  const auto captions = greedy_decode(params, cfg.mode, g.value(visual), model.vocab.eoc_index(), cfg.n_steps);

  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto k = static_cast<std::size_t>(chosen[i]);
    result.objects.push_back({to_original(final_boxes[i], f.image), head.superclass[k], kept.score[i], captions[i].ids});
  }
  return result;
}

RetrievalResult retrieve(const Model& model, const Image& image, const Words& query) {
  const Config& cfg = model.config;
  if (cfg.task != Task::Retrieval) throw std::invalid_argument("retrieve: model was not trained for retrieval");
  if (query.empty()) throw std::invalid_argument("retrieve: empty query");
  RetrievalResult result;
  const auto tokens = encode_caption(query, model.vocab, cfg.n_steps);
  result.all_unknown = std::none_of(query.begin(), query.end(), [&](const std::string& w) { return model.vocab.contains(w); });

  ag::Graph<float> g(false);
  const Front f = run_front(g, model, image, 0.0);
  std::vector<Box> boxes;
  for (const auto& p : f.proposals) boxes.push_back(p.box);
  const auto head = run_detection_head(g, model, pool(g, model, f.feat, boxes), f.proposals, f.image.network);
  const Kept kept = filter_detections(cfg, f.proposals, head);

  // The query is scored against the detected objects, re-pooled at their refined boxes.
  std::vector<Box> final_boxes;
  for (int k : kept.index) final_boxes.push_back(head.refined[static_cast<std::size_t>(k)]);
  auto& params = read_only(model);
  const ag::Var q = encode_query(g, params, tokens.ids, model.vocab.eoc_index(), cfg.mask_query_padding);
  const ag::Var feats = reduce_roi_feature(g, params, "ret", pool(g, model, f.feat, final_boxes));
  const auto& raw = g.value(retrieval_score(g, params, feats, q));

  std::vector<double> f_values;
  for (std::size_t i = 0; i < final_boxes.size(); ++i) {
    const double r = raw[i];
    f_values.push_back(r);
    const auto k = static_cast<std::size_t>(kept.index[i]);
    result.candidates.push_back({to_original(final_boxes[i], f.image), head.superclass[k], kept.score[i], r, sigmoid(r)});
  }
  result.chosen = argmax_first(f_values);
  return result;
}

}  // namespace got
