#include <cmath>
#include <fstream>
#include <functional>
#include <random>

#include "json.hpp"

#include "doctest.h"
#include "got/metrics.hpp"

using namespace got;

namespace {

std::vector<CaptionPair> load_golden(const std::string& key, std::map<std::string, double>& expected) {
  std::ifstream in(std::string(GOT_TEST_DATA) + "/metrics_golden.json");
  REQUIRE(in);
  const auto j = nlohmann::json::parse(in).at(key);
  std::vector<CaptionPair> corpus;
  for (const auto& p : j.at("pairs")) {
    CaptionPair cp;
    cp.candidate = tokenize(p.at("candidate").get<std::string>());
    for (const auto& r : p.at("references")) cp.references.push_back(tokenize(r.get<std::string>()));
    corpus.push_back(cp);
  }
  for (const auto& [k, v] : j.at("expected").items()) expected[k] = v.get<double>();
  return corpus;
}

// Exponential-time LCS straight from the definition, for short sequences.
std::size_t naive_lcs(const Words& a, std::size_t i, const Words& b, std::size_t j) {
  if (i == a.size() || j == b.size()) return 0;
  if (a[i] == b[j]) return 1 + naive_lcs(a, i + 1, b, j + 1);
  return std::max(naive_lcs(a, i + 1, b, j), naive_lcs(a, i, b, j + 1));
}

Words random_sentence(std::mt19937_64& rng, int min_len, int max_len) {
  static const std::vector<std::string> pool{"a", "red", "square", "blue", "circle", "on", "the", "left", "big"};
  std::uniform_int_distribution<int> len(min_len, max_len), w(0, static_cast<int>(pool.size()) - 1);
  Words out(static_cast<std::size_t>(len(rng)));
  for (auto& s : out) s = pool[static_cast<std::size_t>(w(rng))];
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("golden values from the reference caption evaluation code") {
    for (const char* key : {"toy3", "toy5"}) {
      CAPTURE(key);
      std::map<std::string, double> expected;
      const auto corpus = load_golden(key, expected);
      const auto rep = caption_report(corpus);
      for (const auto& [name, value] : expected) {
        CAPTURE(name);
        CHECK(rep.metrics.at(name) == doctest::Approx(value).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("lcs agrees with the recursive definition") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 300; ++i) {
      const auto a = random_sentence(rng, 0, 8), b = random_sentence(rng, 0, 8);
      CHECK(lcs_length(a, b) == naive_lcs(a, 0, b, 0));
    }
  }

  TEST_CASE("rouge-l of a single pair follows the F-measure") {
    const std::vector<CaptionPair> c{{tokenize("a red square on the left"), {tokenize("the red square")}}};
    // "the" comes after "square" in the candidate, so the LCS is "red square"
    CHECK(lcs_length(c[0].candidate, c[0].references[0]) == 2);
    const double l = static_cast<double>(lcs_length(c[0].candidate, c[0].references[0]));
    const double p = l / 6, r = l / 3, beta = 1.2;
    CHECK(rouge_l(c) == doctest::Approx((1 + beta * beta) * p * r / (r + beta * beta * p)));
  }

  TEST_CASE("bleu-1 by hand with clipping and brevity penalty") {
    // candidate "the the the" vs "the cat": clipped matches 1 of 3, c = 3 > r = 2
    const std::vector<CaptionPair> c{{tokenize("the the the"), {tokenize("the cat")}}};
    CHECK(bleu_n(c, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    // shorter candidate is penalised: "cat" vs "the cat": precision 1, bp = e^(1 - 2)
    const std::vector<CaptionPair> s{{tokenize("cat"), {tokenize("the cat")}}};
    CHECK(bleu_n(s, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
  }

  TEST_CASE("identical captions reach the maxima") {
    const std::vector<CaptionPair> c{{tokenize("a red square on the left"), {tokenize("a red square on the left")}},
                                     {tokenize("two blue circles there"), {tokenize("two blue circles there")}},
                                     {tokenize("one green cross here"), {tokenize("one green cross here")}}};
    const auto b = bleu(c);
    for (double v : b) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(rouge_l(c) == doctest::Approx(1.0));
    // every sentence has a 4-gram and no n-gram is shared between pairs, so
    // the cosine is one at every order
    CHECK(cider(c) == doctest::Approx(10.0));
  }

  TEST_CASE("an empty reference set earns nothing and empty corpora throw") {
    const std::vector<CaptionPair> c{{tokenize("a red square"), {}}, {tokenize("blue circle"), {tokenize("blue circle")}}};
    CHECK(rouge_l(c) == doctest::Approx(0.5));
    CHECK_THROWS_AS(bleu(std::vector<CaptionPair>{}), std::invalid_argument);
    CHECK_THROWS_AS(cider(std::vector<CaptionPair>{}), std::invalid_argument);
  }

  TEST_CASE("metric ranges on 1000 random corpora") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> n_pairs(1, 6), n_refs(1, 3);
    for (int i = 0; i < 1000; ++i) {
      std::vector<CaptionPair> c(static_cast<std::size_t>(n_pairs(rng)));
      for (auto& p : c) {
        p.candidate = random_sentence(rng, 1, 7);
        for (int r = n_refs(rng); r > 0; --r) p.references.push_back(random_sentence(rng, 1, 7));
      }
      const auto rep = caption_report(c);
      for (const auto& [name, v] : rep.metrics) {
        CAPTURE(name);
        REQUIRE(std::isfinite(v));
        CHECK(v >= 0.0);
        CHECK(v <= (name == "CIDEr" ? 10.0 + 1e-9 : 1.0 + 1e-9));
      }
    }
  }

  TEST_CASE("r_at_1 counts IoU >= 0.5") {
    const Box g(0, 0, 10, 10);
    std::vector<std::pair<Box, Box>> res{{Box(0, 0, 10, 10), g}, {Box(0, 0, 10, 5), g}, {Box(5, 0, 15, 10), g}};
    // IoUs 1, 0.5, 1/3
    CHECK(r_at_1(res) == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("report serialisation") {
    MetricReport r;
    r.metrics["R@1"] = 0.75;
    r.counts["queries"] = 4;
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j.at("metrics").at("R@1").get<double>() == 0.75);
    CHECK(r.to_table().find("R@1") != std::string::npos);
  }
}
