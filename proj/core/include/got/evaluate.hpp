#pragma once

#include "got/datasets.hpp"
#include "got/inference.hpp"
#include "got/metrics.hpp"
#include "got/model.hpp"

namespace got {

/// Runs detect_and_caption on every image, matches each kept box to its
/// best-IoU ground-truth object (IoU >= 0.5) and scores its caption against
/// that object's references. Unmatched boxes are scored against an empty
/// reference set. Throws std::invalid_argument for an empty split.
MetricReport evaluate_captioning(const Dataset& split, const Model& model);

/// Every caption of every object is one query; R@1 over all queries.
MetricReport evaluate_retrieval(const Dataset& split, const Model& model);

}  // namespace got
