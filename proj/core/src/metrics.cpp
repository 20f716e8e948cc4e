#include "got/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace got {

namespace {

using NgramCounts = std::map<std::string, int>;

// n-grams of orders 1..n keyed by their words joined with a unit separator.
NgramCounts ngram_counts(const Words& w, int n) {
  NgramCounts counts;
  for (int k = 1; k <= n; ++k) {
    for (int i = 0; i + k <= static_cast<int>(w.size()); ++i) {
      std::string key = w[static_cast<std::size_t>(i)];
      for (int j = 1; j < k; ++j) key += '\x1f' + w[static_cast<std::size_t>(i + j)];
      ++counts[key];
    }
  }
  return counts;
}

int ngram_order(const std::string& key) { return 1 + static_cast<int>(std::count(key.begin(), key.end(), '\x1f')); }

void require_corpus(const std::vector<CaptionPair>& corpus, const char* what) {
  if (corpus.empty()) throw std::invalid_argument(std::string(what) + ": empty corpus");
}

}  // namespace

std::array<double, 4> bleu(const std::vector<CaptionPair>& corpus) {
  require_corpus(corpus, "bleu");
  constexpr int N = 4;
  constexpr double tiny = 1e-15, small = 1e-9;
  double testlen = 0, reflen = 0;
  std::array<double, N> guess{}, correct{};
  for (const auto& pair : corpus) {
    const int tl = static_cast<int>(pair.candidate.size());
    testlen += tl;
    // closest reference length, shorter one on ties
    int best = -1;
    NgramCounts maxref;
    for (const auto& ref : pair.references) {
      const int rl = static_cast<int>(ref.size());
      if (best < 0 || std::abs(rl - tl) < std::abs(best - tl) || (std::abs(rl - tl) == std::abs(best - tl) && rl < best))
        best = rl;
      for (const auto& [g, c] : ngram_counts(ref, N)) maxref[g] = std::max(maxref[g], c);
    }
    reflen += std::max(best, 0);
    for (int k = 0; k < N; ++k) guess[static_cast<std::size_t>(k)] += std::max(0, tl - k);
    for (const auto& [g, c] : ngram_counts(pair.candidate, N)) {
      auto it = maxref.find(g);
      if (it != maxref.end()) correct[static_cast<std::size_t>(ngram_order(g) - 1)] += std::min(c, it->second);
    }
  }
  std::array<double, N> out{};
  double prod = 1.0;
  for (int k = 0; k < N; ++k) {
    const double c = correct[static_cast<std::size_t>(k)], g = guess[static_cast<std::size_t>(k)];
    // A fully matched order is exactly 1; the smoothing constants only matter otherwise.
    prod *= (c == g && g > 0) ? 1.0 : (c + tiny) / (g + small);
    out[static_cast<std::size_t>(k)] = std::pow(prod, 1.0 / (k + 1));
  }
  if (testlen < reflen) {
    const double ratio = (testlen + tiny) / (reflen + small);
    for (auto& v : out) v *= std::exp(1.0 - 1.0 / ratio);
  }
  return out;
}

double bleu_n(const std::vector<CaptionPair>& corpus, int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("bleu_n: n must be in 1..4");
  return bleu(corpus)[static_cast<std::size_t>(n - 1)];
}

std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const std::vector<CaptionPair>& corpus) {
  require_corpus(corpus, "rouge_l");
  constexpr double beta = 1.2;
  double total = 0;
  for (const auto& pair : corpus) {
    double prec = 0, rec = 0;
    for (const auto& ref : pair.references) {
      if (pair.candidate.empty() || ref.empty()) continue;
      const double l = static_cast<double>(lcs_length(ref, pair.candidate));
      prec = std::max(prec, l / pair.candidate.size());
      rec = std::max(rec, l / ref.size());
    }
    if (prec > 0 && rec > 0) total += (1 + beta * beta) * prec * rec / (rec + beta * beta * prec);
  }
  return total / corpus.size();
}

double cider(const std::vector<CaptionPair>& corpus) {
  require_corpus(corpus, "cider");
  constexpr int N = 4;
  constexpr double sigma = 6.0;

  std::map<std::string, double> df;
  std::size_t documents = 0;
  std::vector<std::vector<NgramCounts>> refs(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::set<std::string> seen;
    for (const auto& r : corpus[i].references) {
      refs[i].push_back(ngram_counts(r, N));
      for (const auto& [g, c] : refs[i].back()) seen.insert(g);
    }
    for (const auto& g : seen) df[g] += 1;
    if (!corpus[i].references.empty()) ++documents;
  }
  if (documents == 0) return 0.0;
  const double ref_len = std::log(static_cast<double>(documents));

  struct Vec {
    std::array<std::map<std::string, double>, N> w;
    std::array<double, N> norm2{};
    int length = 0;
  };
  auto to_vec = [&](const NgramCounts& counts) {
    Vec v;
    for (const auto& [g, tf] : counts) {
      auto it = df.find(g);
      const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const int n = ngram_order(g) - 1;
      const double x = tf * (ref_len - d);
      v.w[static_cast<std::size_t>(n)][g] = x;
      v.norm2[static_cast<std::size_t>(n)] += x * x;
      // the reference implementation measures length in bigrams
      if (n == 1) v.length += tf;
    }
    return v;
  };

  double total = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (refs[i].empty()) continue;
    const Vec hyp = to_vec(ngram_counts(corpus[i].candidate, N));
    std::array<double, N> score{};
    for (const auto& r : refs[i]) {
      const Vec ref = to_vec(r);
      const double delta = static_cast<double>(hyp.length - ref.length);
      for (std::size_t n = 0; n < N; ++n) {
        double val = 0;
        for (const auto& [g, x] : hyp.w[n]) {
          auto it = ref.w[n].find(g);
          const double y = it == ref.w[n].end() ? 0.0 : it->second;
          val += std::min(x, y) * y;
        }
        // sqrt of the product of squared norms keeps identical vectors at exactly 1
        if (hyp.norm2[n] != 0 && ref.norm2[n] != 0) val /= std::sqrt(hyp.norm2[n] * ref.norm2[n]);
        val *= std::exp(-(delta * delta) / (2 * sigma * sigma));
        score[n] += val;
      }
    }
    double mean = 0;
    for (double s : score) mean += s;
    mean /= N;
    mean /= static_cast<double>(refs[i].size());
    total += mean * 10.0;
  }
  return total / corpus.size();
}

double r_at_1(const std::vector<std::pair<Box, Box>>& results) {
  if (results.empty()) throw std::invalid_argument("r_at_1: no results");
  std::size_t hits = 0;
  for (const auto& [chosen, gt] : results)
    if (iou(chosen, gt) >= 0.5) ++hits;
  return static_cast<double>(hits) / results.size();
}

MetricReport caption_report(const std::vector<CaptionPair>& corpus) {
  MetricReport r;
  const auto b = bleu(corpus);
  for (int k = 0; k < 4; ++k) r.metrics["Bleu_" + std::to_string(k + 1)] = b[static_cast<std::size_t>(k)];
  r.metrics["ROUGE_L"] = rouge_l(corpus);
  r.metrics["CIDEr"] = cider(corpus);
  r.counts["pairs"] = static_cast<double>(corpus.size());
  return r;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["metrics"] = metrics;
  j["counts"] = counts;
  j["METEOR"] = nullptr;
  j["notes"] = "METEOR is not computed";
  return j.dump(2);
}

std::string MetricReport::to_table() const {
  std::size_t width = 0;
  for (const auto& [k, v] : metrics) width = std::max(width, k.size());
  for (const auto& [k, v] : counts) width = std::max(width, k.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "metric" << "  value\n";
  os << std::string(width + 9, '-') << "\n";
  for (const auto& [k, v] : metrics)
    os << std::left << std::setw(static_cast<int>(width)) << k << "  " << std::fixed << std::setprecision(4) << v << "\n";
  for (const auto& [k, v] : counts)
    os << std::left << std::setw(static_cast<int>(width)) << k << "  " << std::defaultfloat << v << "\n";
  os << std::left << std::setw(static_cast<int>(width)) << "METEOR" << "  n/a\n";
  return os.str();
}

}  // namespace got
