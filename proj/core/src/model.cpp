#include "got/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "got/captionhead.hpp"
#include "got/retrievalhead.hpp"

namespace got {

int pooled_dim(const Config& cfg) {
  return cfg.pooled_size * cfg.pooled_size * cfg.backbone_config().out_channels();
}

template <typename T>
void init_params(ParamStore<T>& store, const Config& cfg, int vocab_size, int num_classes) {
  std::mt19937_64 rng(cfg.seed);
  const auto bc = cfg.backbone_config();
  add_backbone_params(store, bc, rng);
  add_rpn_params(store, bc.out_channels(), cfg.rpn_channels, cfg.anchor_grid().per_cell(), rng);
  add_detection_params(store, pooled_dim(cfg), cfg.detection_fc, num_classes, rng);
  if (cfg.task == Task::Caption) {
    add_caption_params(store, cfg, pooled_dim(cfg), vocab_size, rng);
  } else {
    add_retrieval_params(store, cfg, pooled_dim(cfg), vocab_size, rng);
  }
}

Model create_model(const Config& cfg, Vocabulary vocab, std::vector<std::string> superclasses) {
  cfg.validate();
  if (superclasses.empty()) throw std::invalid_argument("create_model: no superclasses");
  Model m{cfg, std::move(vocab), std::move(superclasses), {}};
  init_params(m.params, m.config, m.vocab.size(), m.num_classes());
  return m;
}

PreparedImage prepare_image(const Image& image, const Config& cfg) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("prepare_image: expected [H,W,3]");
  PreparedImage p;
  const int h = image.dim(0), w = image.dim(1);
  p.original = {w, h};
  p.scale = resize_scale(h, w, cfg.resize_shorter, cfg.resize_longer_max);
  if (p.scale == 1.0) {
    p.pixels = image;
    p.network = p.original;
  } else {
    const int nh = std::max(1, static_cast<int>(std::lround(h * p.scale)));
    const int nw = std::max(1, static_cast<int>(std::lround(w * p.scale)));
    p.pixels = resize_bilinear(image, nh, nw);
    p.network = {nw, nh};
  }
  return p;
}

Box scale_box(const Box& b, double s) { return Box(b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s); }

TrainExample make_example(const AnnotatedImage& image, const Vocabulary& vocab, const Config& cfg) {
  if (image.pixels.empty()) throw std::invalid_argument("make_example: image " + image.image_id + " has no pixels");
  TrainExample ex;
  ex.image_id = image.image_id;
  ex.image = prepare_image(image.pixels, cfg);
  for (const auto& o : image.objects) {
    ex.objects.push_back({scale_box(o.box, ex.image.scale), o.superclass_id});
    std::vector<std::vector<int>> caps;
    for (const auto& c : o.captions) caps.push_back(encode_caption(tokenize(c), vocab, cfg.n_steps).ids);
    ex.captions.push_back(std::move(caps));
  }
  return ex;
}

SampleChoice draw_choice(const TrainExample& ex, Task task, std::mt19937_64& rng) {
  SampleChoice c;
  for (const auto& caps : ex.captions) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(caps.size()) - 1);
    c.caption_of_object.push_back(pick(rng));
  }
  if (task == Task::Retrieval && !ex.objects.empty()) {
    std::uniform_int_distribution<int> obj(0, static_cast<int>(ex.objects.size()) - 1);
    c.query_object = obj(rng);
    const auto& caps = ex.captions[static_cast<std::size_t>(c.query_object)];
    std::uniform_int_distribution<int> cap(0, static_cast<int>(caps.size()) - 1);
    c.query_caption = cap(rng);
  }
  return c;
}

template <typename T>
LossTerms<T> build_losses(ag::Graph<T>& g, ParamStore<T>& store, const Config& cfg, const TrainExample& ex,
                          const SampleChoice& choice, std::mt19937_64& rng, int eoc_index) {
  const auto bc = cfg.backbone_config();
  const auto grid = cfg.anchor_grid();
  LossTerms<T> out;

  Tensor<T> pixels;
  if constexpr (std::is_same_v<T, float>) {
    pixels = ex.image.pixels;
  } else {
    pixels = ex.image.pixels.template cast<T>();
  }
  const ag::Var image = g.constant(std::move(pixels));
  const ag::Var feat = backbone_forward(g, store, bc, image);
  const auto rpn = rpn_head(g, store, feat, grid.per_cell());
  const auto anchors = generate_anchors(grid, rpn.feat_h, rpn.feat_w);

  std::vector<Box> gt_boxes;
  for (const auto& o : ex.objects) gt_boxes.push_back(o.box);
  const auto targets = assign_anchor_targets(anchors, gt_boxes, cfg.rpn_batch, cfg.rpn_pos_iou, cfg.rpn_neg_iou, rng);
  const auto rpn_loss = loss_rpn(g, rpn, targets);
  out.items.emplace_back("rpn_objectness", rpn_loss.objectness);
  out.items.emplace_back("rpn_loc", rpn_loss.loc);

  // Proposals are treated as constants: no gradient flows through box coordinates.
  const auto sorted = decode_proposals(anchors, g.value(rpn.logits).values(), g.value(rpn.deltas).values(),
                                       ex.image.network, cfg.min_box_size);
  const auto proposals = select_proposals(sorted, cfg.rpn_pre_nms_top, cfg.rpn_nms, cfg.rpn_post_nms_train);
  std::vector<Box> boxes;
  boxes.reserve(proposals.size());
  for (const auto& p : proposals) boxes.push_back(p.box);
  const RoiSampling sampling{cfg.n_sample_rois, cfg.pos_iou, cfg.pos_fraction, cfg.append_gt_rois};
  const auto rois = sample_rois(boxes, ex.objects, sampling, rng);
  out.num_rois = static_cast<int>(rois.size());

  std::vector<Box> roi_boxes;
  std::vector<int> pos_rows;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    roi_boxes.push_back(rois[i].box);
    if (rois[i].positive()) pos_rows.push_back(static_cast<int>(i));
  }
  out.num_positive = static_cast<int>(pos_rows.size());
  const ag::Var pooled = ag::roi_align(g, feat, roi_boxes, 1.0 / bc.total_stride(), cfg.pooled_size);
  const auto det = detection_head(g, store, pooled);
  const auto det_loss = loss_detection(g, det, rois, cfg.target_stds());
  out.items.emplace_back("loc", det_loss.loc);
  out.items.emplace_back("superclass", det_loss.superclass);

  if (cfg.task == Task::Caption) {
    ag::Var cap_loss;
    if (pos_rows.empty()) {
      cap_loss = g.constant(Tensor<T>({1}));
    } else {
      const ag::Var pos_pooled = ag::gather_rows<T>(g, pooled, pos_rows);
      const ag::Var visual = reduce_roi_feature(g, store, "cap", pos_pooled);
      std::vector<int> inputs, targets_ids;
      for (int r : pos_rows) {
        const int obj = rois[static_cast<std::size_t>(r)].matched_gt;
        const auto& ids = ex.captions[static_cast<std::size_t>(obj)]
                                     [static_cast<std::size_t>(choice.caption_of_object[static_cast<std::size_t>(obj)])];
        const auto in = teacher_inputs(ids, eoc_index);
        inputs.insert(inputs.end(), in.begin(), in.end());
        targets_ids.insert(targets_ids.end(), ids.begin(), ids.end());
      }
      const auto logits = caption_forward(g, store, cfg.mode, visual, inputs, cfg.n_steps);
      cap_loss = loss_caption<T>(g, logits, targets_ids);
    }
    out.items.emplace_back("caption", cap_loss);
  } else {
    if (choice.query_object < 0) throw std::invalid_argument("build_losses: retrieval sample has no query object");
    const auto labels_all = build_retrieval_labels(rois, choice.query_object, static_cast<int>(ex.objects.size()));
    // Only the rows that carry loss weight are scored.
    std::vector<int> rows;
    std::vector<RetrievalLabel> labels;
    for (std::size_t i = 0; i < rois.size(); ++i) {
      if (labels_all[i].positive_roi || cfg.retrieval_background) {
        rows.push_back(static_cast<int>(i));
        labels.push_back(labels_all[i]);
      }
    }
    ag::Var ret_loss;
    if (rows.empty()) {
      ret_loss = g.constant(Tensor<T>({1}));
    } else {
      const auto& qids = ex.captions[static_cast<std::size_t>(choice.query_object)]
                                    [static_cast<std::size_t>(choice.query_caption)];
      const ag::Var query = encode_query(g, store, qids, eoc_index, cfg.mask_query_padding);
      const ag::Var feats = reduce_roi_feature(g, store, "ret", ag::gather_rows<T>(g, pooled, rows));
      const ag::Var scores = retrieval_score(g, store, feats, query);
      ret_loss = loss_retrieval(g, scores, labels, cfg.retrieval_background);
    }
    out.items.emplace_back("retrieval", ret_loss);
  }

  std::vector<ag::Var> terms;
  for (const auto& [name, v] : out.items) terms.push_back(v);
  out.total = ag::add_scalars<T>(g, terms);
  return out;
}

template void init_params<float>(ParamStore<float>&, const Config&, int, int);
template void init_params<double>(ParamStore<double>&, const Config&, int, int);
template LossTerms<float> build_losses<float>(ag::Graph<float>&, ParamStore<float>&, const Config&,
                                              const TrainExample&, const SampleChoice&, std::mt19937_64&, int);
template LossTerms<double> build_losses<double>(ag::Graph<double>&, ParamStore<double>&, const Config&,
                                                const TrainExample&, const SampleChoice&, std::mt19937_64&, int);

}  // namespace got
