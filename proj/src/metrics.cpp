#include "collab/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>

#include "collab/errors.hpp"

namespace collab::metrics {
namespace {

using NGram = std::vector<std::string>;

std::vector<NGram> ngrams(const TokenSeq& y, int n) {
  std::vector<NGram> out;
  const auto un = static_cast<std::size_t>(n);
  if (y.size() < un) return out;
  for (std::size_t i = 0; i + un <= y.size(); ++i) out.emplace_back(y.begin() + i, y.begin() + i + un);
  return out;
}

std::size_t fragment_mass(const std::vector<Fragment>& f, int power) {
  std::size_t total = 0;
  for (const Fragment& x : f) total += power == 1 ? x.length : x.length * x.length;
  return total;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

TokenSeq normalize(std::string_view text) {
  TokenSeq out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<Fragment> fragments(const TokenSeq& k, const TokenSeq& y) {
  std::vector<Fragment> out;
  std::size_t i = 0;
  while (i < y.size()) {
    std::size_t best = 0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      std::size_t len = 0;
      while (i + len < y.size() && j + len < k.size() && y[i + len] == k[j + len]) ++len;
      if (len > best) best = len;
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

double distinct_n(const TokenSeq& y, int n) {
  if (n < 1) throw InvalidParameter("distinct_n: n must be at least 1");
  const auto grams = ngrams(y, n);
  if (grams.empty()) return 1.0;
  const std::set<NGram> unique(grams.begin(), grams.end());
  return static_cast<double>(unique.size()) / static_cast<double>(grams.size());
}

double div(const TokenSeq& y) {
  double product = 1.0;
  for (int n = 1; n <= 4; ++n) product *= distinct_n(y, n);
  return std::pow(product, 0.25);
}

double coverage(const TokenSeq& k, const TokenSeq& y) {
  if (y.empty()) throw InvalidInput("coverage: empty response");
  return static_cast<double>(fragment_mass(fragments(k, y), 1)) / static_cast<double>(y.size());
}

double density(const TokenSeq& k, const TokenSeq& y) {
  if (y.empty()) throw InvalidInput("density: empty response");
  return static_cast<double>(fragment_mass(fragments(k, y), 2)) / static_cast<double>(y.size());
}

double cre(const TokenSeq& k, const TokenSeq& y) {
  const double d = density(k, y);
  if (d == 0.0) return 0.0;
  return coverage(k, y) / std::sqrt(d);
}

double bleu_n(const TokenSeq& y, const TokenSeq& reference, int n) {
  if (y.empty() || reference.empty()) throw InvalidInput("bleu: empty input");
  if (n < 1) throw InvalidParameter("bleu: n must be at least 1");
  double log_sum = 0.0;
  for (int order = 1; order <= n; ++order) {
    std::map<NGram, std::size_t> ref_counts;
    for (auto& g : ngrams(reference, order)) ++ref_counts[g];
    std::map<NGram, std::size_t> hyp_counts;
    const auto hyp = ngrams(y, order);
    for (auto& g : hyp) ++hyp_counts[g];
    std::size_t clipped = 0;
    for (const auto& [g, c] : hyp_counts) {
      auto it = ref_counts.find(g);
      if (it != ref_counts.end()) clipped += std::min(c, it->second);
    }
    if (hyp.empty() || clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(hyp.size()));
  }
  const double c = static_cast<double>(y.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / n);
}

double rouge_l(const TokenSeq& y, const TokenSeq& reference) {
  if (y.empty() || reference.empty()) throw InvalidInput("rouge_l: empty input");
  std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
  for (std::size_t i = 1; i <= y.size(); ++i) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      cur[j] = y[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const auto lcs = static_cast<double>(prev[reference.size()]);
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(y.size());
  const double recall = lcs / static_cast<double>(reference.size());
  return 2.0 * precision * recall / (precision + recall);
}

Eigen::VectorXd HashEmbeddingProvider::embed(std::string_view text) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  const TokenSeq words = normalize(text);
  for (std::size_t i = 0; i < words.size(); ++i) {
    v(static_cast<Eigen::Index>(fnv1a(words[i]) % static_cast<std::uint64_t>(dim_))) += 1.0;
    if (i + 1 < words.size()) {
      const std::string bigram = words[i] + ' ' + words[i + 1];
      v(static_cast<Eigen::Index>(fnv1a(bigram) % static_cast<std::uint64_t>(dim_))) += 0.5;
    }
  }
  return v;
}

double coh(std::string_view context_text, std::string_view response_text,
           const EmbeddingProvider& provider) {
  const Eigen::VectorXd a = provider.embed(context_text);
  const Eigen::VectorXd b = provider.embed(response_text);
  if (a.size() != b.size()) throw DimensionError("coh: embedding dimensions differ");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw InvalidInput("coh: zero embedding, similarity undefined");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace collab::metrics
