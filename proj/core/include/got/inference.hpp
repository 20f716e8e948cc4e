#pragma once

#include <string>
#include <vector>

#include "got/datasets.hpp"
#include "got/model.hpp"

namespace got {

struct Detection {
  Box box;              // original image pixels
  int superclass = 0;   // 0..K-1
  double score = 0;     // objectness probability x class probability
  std::vector<int> caption;
};

struct DetectionResult {
  std::vector<Detection> objects;
  bool fallback = false;  // nothing cleared the score threshold
};

/// Top proposals -> detection head -> class-specific refinement -> NMS ->
/// keep score > threshold, else the single best box; every kept box is
/// captioned greedily. Throws std::invalid_argument for a non-caption model.
DetectionResult detect_and_caption(const Model& model, const Image& image);

struct RetrievalCandidate {
  Box box;               // original image pixels
  int superclass = 0;
  double detection = 0;  // objectness probability x class probability
  double raw = 0;        // f(x)
  double score = 0;      // sigmoid(f)
};

struct RetrievalResult {
  int chosen = -1;  // index into candidates
  std::vector<RetrievalCandidate> candidates;
  bool all_unknown = false;  // every query word mapped to UNK

  const RetrievalCandidate& best() const { return candidates.at(static_cast<std::size_t>(chosen)); }
};

/// Runs the detection pipeline of detect_and_caption, scores every detected
/// object against the encoded query and picks the argmax (ties: lower index). Throws std::invalid_argument for an empty query or a
/// non-retrieval model.
RetrievalResult retrieve(const Model& model, const Image& image, const Words& query);

/// Index of the largest score, lowest index among ties; -1 when empty.
int argmax_first(const std::vector<double>& scores);

}  // namespace got
