#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "got/datasets.hpp"
#include "got/geometry.hpp"

namespace got {

/// One scored caption and its reference set. An empty reference set is
/// allowed and earns zero credit.
struct CaptionPair {
  Words candidate;
  std::vector<Words> references;
};

// The caption metrics follow the COCO caption evaluation code: corpus-level
// BLEU with the "closest" reference length, per-pair ROUGE-L (beta 1.2)
// averaged over pairs, and CIDEr-D (sigma 6, x10) with document frequencies
// taken from the evaluated references. All throw std::invalid_argument on an
// empty corpus.

/// Bleu_1 .. Bleu_4.
std::array<double, 4> bleu(const std::vector<CaptionPair>& corpus);
double bleu_n(const std::vector<CaptionPair>& corpus, int n);
double rouge_l(const std::vector<CaptionPair>& corpus);
double cider(const std::vector<CaptionPair>& corpus);

/// Length of the longest common subsequence.
std::size_t lcs_length(const Words& a, const Words& b);

/// Fraction of (chosen, ground truth) pairs with IoU >= 0.5.
double r_at_1(const std::vector<std::pair<Box, Box>>& results);

struct MetricReport {
  std::map<std::string, double> metrics;  // "Bleu_1".."Bleu_4", "ROUGE_L", "CIDEr" and/or "R@1"
  std::map<std::string, double> counts;   // corpus sizes and match bookkeeping

  std::string to_json() const;
  /// Aligned two-column plain-text table.
  std::string to_table() const;
};

/// All six caption columns for a corpus.
MetricReport caption_report(const std::vector<CaptionPair>& corpus);

}  // namespace got
