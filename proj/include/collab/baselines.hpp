#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "collab/generation.hpp"

namespace collab {

using Rng = std::mt19937_64;

enum class Strategy { kGreedy, kBeam, kCs, kFecs, kTopK, kNucleus, kFNucleus, kCd, kDola, kCad };

std::string_view to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

enum class DolaLayers { kHigh };

struct BaselineConfig {
  Strategy strategy = Strategy::kGreedy;
  int beam_size = 4;
  int topk_k = 50;
  int cs_k = 4;
  double p = 0.9;
  double lambda = 0.9;
  double omega = 0.7;
  double cs_alpha = 0.6;
  double fecs_alpha = 0.3;
  double fecs_beta = 0.3;
  double cd_tau = 1.0;
  double cd_plausibility = 0.1;
  double cad_alpha = 1.0;
  DolaLayers dola_layers = DolaLayers::kHigh;
  std::uint64_t seed = 0;
  int min_new_tokens = 5;
  int max_new_tokens = 64;

  void validate() const;
};

struct BaselineRequest {
  std::vector<TokenId> context_tokens;
  std::vector<TokenId> knowledge_tokens;
};

// ---- per-step rules ---------------------------------------------------------

TokenId greedy_step(const ProbDist& p);

/// Sample from the renormalized `k` most likely tokens.
TokenId topk_sample(const ProbDist& p, int k, Rng& rng);

/// Sample from the smallest descending-probability prefix with mass >= p_threshold.
TokenId nucleus_sample(const ProbDist& p, double p_threshold, Rng& rng);
/// Token ids of that prefix.
std::vector<TokenId> nucleus_support(const ProbDist& p, double p_threshold);

/// max(omega, p * lambda^j).
double f_nucleus_threshold(double p, double lambda, double omega, std::size_t j);
/// Tokens generated since the last '.', '!' or '?'.
std::size_t tokens_since_sentence_end(std::span<const TokenId> generated);
TokenId f_nucleus_sample(const ProbDist& p, std::span<const TokenId> generated, double p_top,
                         double lambda, double omega, Rng& rng);

/// Expert-minus-amateur log-probability over the expert's plausible head.
TokenId cd_step(const LogitVector& l_expert, const LogitVector& l_amateur, double tau,
                double plausibility);

/// argmax softmax((1 + alpha) * l_posterior - alpha * l_prior).
TokenId cad_step(const LogitVector& l_prior, const LogitVector& l_posterior, double alpha);

/// Non-final layers that the 'high' bucket contrasts against.
std::vector<int> dola_bucket(int num_layers, DolaLayers layers);

struct DolaChoice {
  int premature_layer = 0;
  TokenId token = 0;
};

/// Early-exit contrast against the bucket layer with the largest JSD from the
/// final layer. `mask` is applied to every layer's logits.
DolaChoice dola_step(const ContextState& state, DolaLayers layers,
                     const std::function<LogitVector(const LogitVector&)>& mask);

/// Contrastive search over the top-k of softmax(logits); the degeneration
/// penalty looks at hidden states of the state's generated positions.
/// knowledge_hiddens / beta add the faithfulness bonus (empty / 0 for plain CS).
struct ScoredCandidate {
  TokenId token = 0;
  double prob = 0;
  double score = 0;
};
std::vector<ScoredCandidate> contrastive_scores(const ContextState& state,
                                                const LogitVector& logits, int k, double alpha,
                                                const std::vector<Eigen::VectorXd>& knowledge_hiddens,
                                                double beta);
TokenId cs_step(const ContextState& state, const LogitVector& logits, int k, double alpha);
TokenId fecs_step(const ContextState& state, const LogitVector& logits,
                  const std::vector<Eigen::VectorXd>& knowledge_hiddens, int k, double alpha,
                  double beta);

// ---- generation loops -------------------------------------------------------

/// Sum-of-log-probability beam search on the knowledge-conditioned stream.
GenerationResult beam_search(const Backend& backend, const BaselineRequest& request,
                             int beam_size, int min_new_tokens, int max_new_tokens);

/// Run any baseline. `amateur` is required for contrastive decoding only.
GenerationResult generate_baseline(const Backend& backend, const Backend* amateur,
                                   const BaselineRequest& request, const BaselineConfig& config);

}  // namespace collab
