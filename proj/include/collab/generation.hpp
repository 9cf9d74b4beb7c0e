#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "collab/backend.hpp"
#include "collab/dist.hpp"

namespace collab {

enum class StopReason { kEos, kMaxTokens };

const char* to_string(StopReason reason);

/// One reranked candidate. final_score = (1 - beta) * p_code + beta / 2 * (sem + att).
struct CandidateScore {
  TokenId token = 0;
  double p_code = 0;
  double sem_reward = 0;
  double att_reward = 0;
  double final_score = 0;
};

/// Diagnostics of one committed token. Baselines fill only position/chosen.
struct StepTrace {
  std::size_t position = 0;
  std::optional<FusionDiagnostics<double>> diagnostics;
  std::vector<CandidateScore> candidates;
  TokenId chosen = 0;
};

/// Generated tokens exclude the terminating EOS; traces align one-to-one
/// with tokens.
struct GenerationResult {
  std::vector<TokenId> tokens;
  std::string text;
  std::vector<StepTrace> traces;
  StopReason stop_reason = StopReason::kMaxTokens;
};

/// Context-only and knowledge-conditioned views of one request.
struct Streams {
  std::unique_ptr<ContextState> prior;
  std::unique_ptr<ContextState> posterior;
  /// Knowledge positions inside the posterior stream.
  PositionSpan knowledge_span;
  /// Final-layer hidden state at each knowledge position.
  std::vector<Eigen::VectorXd> knowledge_hiddens;
};

/// [BOS, context...]
std::vector<TokenId> prior_prompt(std::span<const TokenId> context);
/// [BOS, context..., SEP, knowledge..., SEP]
std::vector<TokenId> posterior_prompt(std::span<const TokenId> context,
                                      std::span<const TokenId> knowledge);

/// Initialize both streams. `with_prior` = false skips the context-only
/// stream for decoders that never read it.
Streams build_streams(const Backend& backend, std::span<const TokenId> context,
                      std::span<const TokenId> knowledge, bool with_prior = true);

/// Copy of `logits` with `eos` masked while fewer than `min_new_tokens`
/// tokens have been generated.
LogitVector mask_eos(const LogitVector& logits, TokenId eos, std::size_t generated,
                     std::size_t min_new_tokens);

/// Index of the largest entry; ties go to the lowest index.
Eigen::Index argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& values);

/// Indices of the k largest entries in descending order, ties by lowest index.
std::vector<Eigen::Index> top_k_indices(const Eigen::Ref<const Eigen::VectorXd>& values,
                                        std::size_t k);

/// argmax of `score` over `allowed` entries; exact ties go to the larger
/// `prior_prob`, then the lowest index.
Eigen::Index argmax_with_fallback(const Eigen::Ref<const Eigen::VectorXd>& score,
                                  const Eigen::Ref<const Eigen::VectorXd>& prior_prob,
                                  const std::vector<bool>& allowed);

/// Detokenize generated ids with the character tokenizer.
std::string render_text(std::span<const TokenId> tokens);

}  // namespace collab
