#pragma once

// Reference-free expressiveness metrics (distinct-n, DIV, fragment
// coverage/density, CRE, embedding coherence) and overlap quality metrics
// (BLEU, ROUGE-L) over normalized word tokens.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace collab::metrics {

/// Lowercased word tokens with ASCII punctuation removed.
using TokenSeq = std::vector<std::string>;

/// Lowercase, drop ASCII punctuation, split on whitespace. Idempotent:
/// normalize(join(normalize(s))) == normalize(s).
TokenSeq normalize(std::string_view text);

struct Fragment {
  std::size_t start_in_y = 0;
  std::size_t length = 0;
  friend bool operator==(const Fragment&, const Fragment&) = default;
};

/// Greedy extractive fragments of `y` against `k`: scanning y left to right,
/// each position starts the longest match found anywhere in k (earliest k
/// position on ties); with no match the scan advances by one.
std::vector<Fragment> fragments(const TokenSeq& k, const TokenSeq& y);

/// |unique n-grams| / |n-grams|; 1.0 when y has fewer than n tokens.
double distinct_n(const TokenSeq& y, int n);
/// Geometric mean of distinct-1..4.
double div(const TokenSeq& y);

/// Sum of fragment lengths over |y|. Throws InvalidInput on empty y.
double coverage(const TokenSeq& k, const TokenSeq& y);
/// Sum of squared fragment lengths over |y|.
double density(const TokenSeq& k, const TokenSeq& y);
/// coverage / sqrt(density), 0 when density is 0.
double cre(const TokenSeq& k, const TokenSeq& y);

/// Sentence-level BLEU with uniform weights over 1..n, clipped counts and
/// brevity penalty, no smoothing.
double bleu_n(const TokenSeq& y, const TokenSeq& reference, int n);
/// LCS-based F1.
double rouge_l(const TokenSeq& y, const TokenSeq& reference);

/// Sentence embedding seam for COH.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Eigen::VectorXd embed(std::string_view text) const = 0;
};

/// Hashes word unigrams and bigrams of the normalized text into a fixed
/// number of buckets. Deterministic; meant for tests and toy runs.
class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(int dim = 256) : dim_(dim) {}
  Eigen::VectorXd embed(std::string_view text) const override;

 private:
  int dim_;
};

/// Cosine of the two embeddings. Throws InvalidInput when either is zero.
double coh(std::string_view context_text, std::string_view response_text,
           const EmbeddingProvider& provider);

struct MetricsReport {
  std::array<double, 4> distinct{};
  double div = 0;
  double coverage = 0;
  double density = 0;
  double cre = 0;
  std::optional<double> coh;
  std::optional<double> bleu_2;
  std::optional<double> bleu_4;
  std::optional<double> rouge_l;
};

}  // namespace collab::metrics
