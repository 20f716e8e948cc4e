#include "got/evaluate.hpp"

#include <stdexcept>

namespace got {

namespace {

void require_pixels(const Dataset& split, const char* what) {
  if (split.images.empty()) throw std::invalid_argument(std::string(what) + ": empty split");
  for (const auto& img : split.images)
    if (img.pixels.empty()) throw std::invalid_argument(std::string(what) + ": image " + img.image_id + " has no pixels");
}

}  // namespace

MetricReport evaluate_captioning(const Dataset& split, const Model& model) {
  require_pixels(split, "evaluate_captioning");
  std::vector<CaptionPair> corpus;
  std::size_t matched = 0;
  for (const auto& img : split.images) {
    const auto det = detect_and_caption(model, img.pixels);
    for (const auto& obj : det.objects) {
      CaptionPair pair;
      pair.candidate = decode_caption(obj.caption, model.vocab);
      double best = 0.0;
      int arg = -1;
      for (std::size_t j = 0; j < img.objects.size(); ++j) {
        const double v = iou(obj.box, img.objects[j].box);
        if (v > best) {
          best = v;
          arg = static_cast<int>(j);
        }
      }
      if (arg >= 0 && best >= 0.5) {
        ++matched;
        for (const auto& c : img.objects[static_cast<std::size_t>(arg)].captions) pair.references.push_back(tokenize(c));
      }
      corpus.push_back(std::move(pair));
    }
  }
  MetricReport r = caption_report(corpus);
  r.counts["images"] = static_cast<double>(split.images.size());
  r.counts["boxes"] = static_cast<double>(corpus.size());
  r.counts["matched_boxes"] = static_cast<double>(matched);
  r.counts["match_rate"] = corpus.empty() ? 0.0 : static_cast<double>(matched) / corpus.size();
  return r;
}

MetricReport evaluate_retrieval(const Dataset& split, const Model& model) {
  require_pixels(split, "evaluate_retrieval");
  std::vector<std::pair<Box, Box>> results;
  for (const auto& img : split.images) {
    for (const auto& obj : img.objects) {
      for (const auto& c : obj.captions) {
        const auto res = retrieve(model, img.pixels, tokenize(c));
        results.emplace_back(res.best().box, obj.box);
      }
    }
  }
  MetricReport r;
  r.metrics["R@1"] = r_at_1(results);
  r.counts["images"] = static_cast<double>(split.images.size());
  r.counts["queries"] = static_cast<double>(results.size());
  return r;
}

}  // namespace got
