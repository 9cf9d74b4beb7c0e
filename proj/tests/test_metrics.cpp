#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "collab/errors.hpp"
#include "collab/metrics.hpp"

using namespace collab::metrics;
using collab::InvalidInput;

namespace {

TokenSeq words(std::string_view s) { return normalize(s); }

// Longest-match-at-each-position, checked against every substring of k.
std::vector<Fragment> brute_force_fragments(const TokenSeq& k, const TokenSeq& y) {
  std::vector<Fragment> out;
  std::size_t i = 0;
  while (i < y.size()) {
    std::size_t best = 0;
    for (std::size_t len = y.size() - i; len > 0 && best == 0; --len) {
      for (std::size_t s = 0; s + len <= k.size(); ++s) {
        if (std::equal(y.begin() + static_cast<std::ptrdiff_t>(i),
                       y.begin() + static_cast<std::ptrdiff_t>(i + len),
                       k.begin() + static_cast<std::ptrdiff_t>(s))) {
          best = len;
          break;
        }
      }
    }
    if (best > 0) {
      out.push_back({i, best});
      i += best;
    } else {
      ++i;
    }
  }
  return out;
}

TokenSeq random_words(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> letter(0, alphabet - 1);
  TokenSeq out(len(rng));
  for (auto& w : out) w = std::string(1, static_cast<char>('a' + letter(rng)));
  return out;
}

class ScriptedProvider final : public EmbeddingProvider {
 public:
  Eigen::VectorXd embed(std::string_view text) const override {
    if (text == "zero") return Eigen::VectorXd::Zero(2);
    return text == "x" ? Eigen::Vector2d(1, 0) : Eigen::Vector2d(0, 1);
  }
};

}  // namespace

TEST_CASE("normalize") {
  CHECK(normalize("Hello, World!  It's  fine.") == TokenSeq{"hello", "world", "its", "fine"});
  CHECK(normalize("").empty());
  CHECK(normalize(" ?! ").empty());
  const std::string s = "The Bulls WON... six (6) titles; right?";
  const TokenSeq once = normalize(s);
  std::string joined;
  for (const auto& w : once) joined += w + " ";
  CHECK(normalize(joined) == once);
}

TEST_CASE("distinct-n and DIV") {
  CHECK(distinct_n(words("a b c d"), 1) == 1.0);
  CHECK(distinct_n(words("a a a a"), 1) == 0.25);
  CHECK(distinct_n(words("a b a b"), 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(distinct_n(words("a b"), 3) == 1.0);
  CHECK(div(words("one two three four five six seven")) == 1.0);
  CHECK(std::abs(div(words("a a a a a")) - 0.302137539735676813788672012915) <= 1e-15);
  CHECK(div(words("solo")) == 1.0);
  // Relabeling tokens does not change distinctness.
  CHECK(div(words("x y x z y")) == div(words("p q p r q")));
}

TEST_CASE("fragments") {
  const TokenSeq k = words("the cat sat");
  CHECK(fragments(k, k) == std::vector<Fragment>{{0, 3}});
  CHECK(fragments(k, words("dogs run fast")).empty());
  CHECK(fragments(k, words("a cat sat here")) == std::vector<Fragment>{{1, 2}});
  CHECK(fragments(words("a b c b c d"), words("b c d x a b")) ==
        std::vector<Fragment>{{0, 3}, {4, 2}});
}

TEST_CASE("greedy fragments agree with the brute-force oracle") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 3000; ++trial) {
    const TokenSeq k = random_words(rng, 12, 4);
    const TokenSeq y = random_words(rng, 12, 4);
    CHECK(fragments(k, y) == brute_force_fragments(k, y));
  }
}

TEST_CASE("coverage, density and CRE") {
  const TokenSeq copy = words("one two three four five six seven eight nine");
  CHECK(coverage(copy, copy) == 1.0);
  CHECK(density(copy, copy) == 9.0);
  CHECK(std::abs(cre(copy, copy) - 1.0 / 3.0) <= 1e-15);

  const TokenSeq k = words("red green blue");
  const TokenSeq none = words("cat dog");
  CHECK(coverage(k, none) == 0.0);
  CHECK(density(k, none) == 0.0);
  CHECK(cre(k, none) == 0.0);

  const TokenSeq scattered = words("red a blue b green c");
  // Three isolated unigram matches in six tokens.
  const TokenSeq spaced = words("red x blue y zz w");
  CHECK(coverage(k, spaced) == doctest::Approx(2.0 / 6.0));
  CHECK(density(k, spaced) == doctest::Approx(2.0 / 6.0));
  CHECK(cre(k, spaced) == doctest::Approx(std::sqrt(2.0 / 6.0)));
  CHECK(coverage(k, scattered) == 0.5);
  CHECK(density(k, scattered) == 0.5);
  CHECK(std::abs(cre(k, scattered) - std::sqrt(0.5)) <= 1e-15);

  CHECK_THROWS_AS(coverage(k, TokenSeq{}), InvalidInput);
  CHECK_THROWS_AS(density(k, TokenSeq{}), InvalidInput);
  CHECK_THROWS_AS(cre(k, TokenSeq{}), InvalidInput);
}

TEST_CASE("fragment metric bounds on random inputs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const TokenSeq k = random_words(rng, 12, 5);
    TokenSeq y = random_words(rng, 12, 5);
    if (y.empty()) y.push_back("a");
    const double c = coverage(k, y);
    const double d = density(k, y);
    const double r = cre(k, y);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
    CHECK(d <= c * static_cast<double>(y.size()) + 1e-12);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0 + 1e-12);
  }
}

TEST_CASE("BLEU") {
  const TokenSeq ref = words("the cat sat on a mat");
  CHECK(bleu_n(ref, ref, 2) == doctest::Approx(1.0));
  CHECK(bleu_n(ref, ref, 4) == doctest::Approx(1.0));
  CHECK(bleu_n(words("dogs run"), ref, 2) == 0.0);

  const TokenSeq y = words("the cat sat on the mat");
  // Clipped precisions 5/6, 3/5, 2/4, 1/3; equal lengths so no brevity penalty.
  CHECK(std::abs(bleu_n(y, ref, 2) - std::sqrt(0.5)) <= 1e-12);
  CHECK(std::abs(bleu_n(y, ref, 4) - std::pow(1.0 / 12.0, 0.25)) <= 1e-12);
  // Short hypothesis: perfect precision, brevity penalty exp(1 - 3/2).
  CHECK(std::abs(bleu_n(words("the cat"), words("the cat sat"), 2) - std::exp(-0.5)) <= 1e-12);
  // No 4-grams at all and no smoothing.
  CHECK(bleu_n(words("the cat"), words("the cat sat"), 4) == 0.0);

  CHECK_THROWS_AS(bleu_n(TokenSeq{}, ref, 2), InvalidInput);
  CHECK_THROWS_AS(bleu_n(ref, TokenSeq{}, 2), InvalidInput);
}

TEST_CASE("ROUGE-L") {
  const TokenSeq ref = words("the cat sat");
  CHECK(rouge_l(ref, ref) == 1.0);
  CHECK(rouge_l(words("a dog"), ref) == 0.0);
  CHECK(std::abs(rouge_l(words("the cat"), ref) - 0.8) <= 1e-15);
  // LCS "the sat" of length 2 within 4 and 3 tokens.
  CHECK(rouge_l(words("the big bad sat"), ref) == doctest::Approx(2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0)));
  CHECK_THROWS_AS(rouge_l(TokenSeq{}, ref), InvalidInput);
}

TEST_CASE("COH") {
  const HashEmbeddingProvider hash;
  CHECK(coh("the weather is nice", "the weather is nice", hash) == doctest::Approx(1.0));
  CHECK(coh("alpha beta", "gamma delta beta", hash) == coh("gamma delta beta", "alpha beta", hash));
  const double c = coh("we talked about the river", "the river flooded", hash);
  CHECK(c > 0.0);
  CHECK(c <= 1.0);
  CHECK(hash.embed("same text") == hash.embed("same text"));
  CHECK(hash.embed("x").size() == 256);

  const ScriptedProvider scripted;
  CHECK(coh("x", "y", scripted) == 0.0);
  CHECK_THROWS_AS(coh("x", "zero", scripted), InvalidInput);
  CHECK_THROWS_AS(coh("", "words", hash), InvalidInput);
}
