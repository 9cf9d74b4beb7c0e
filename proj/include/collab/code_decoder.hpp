#pragma once

#include <memory>
#include <vector>

#include "collab/generation.hpp"

namespace collab {

/// Collaborative decoding settings. Defaults: K = 4, beta = 0.6, gamma = 3,
/// at least 5 new tokens.
struct CoDeConfig {
  int top_k = 4;
  double beta = 0.6;
  double gamma = 3.0;
  double eta = 1e-6;
  int min_new_tokens = 5;
  int max_new_tokens = 64;

  /// Throws ConfigError on out-of-range values or top_k > vocab_size.
  void validate(int vocab_size) const;
};

struct DecodeRequest {
  std::vector<TokenId> context_tokens;
  std::vector<TokenId> knowledge_tokens;
  CoDeConfig config;
};

/// Knowledge-aware rerank of one candidate.
inline double rerank_score(double p_code, double sem_reward, double att_reward, double beta) {
  return (1.0 - beta) * p_code + beta / 2.0 * (sem_reward + att_reward);
}

/// Cosine rescaled from [-1, 1] to [0, 1], maximized over knowledge hiddens.
double semantic_reward(const Eigen::VectorXd& candidate_hidden,
                       const std::vector<Eigen::VectorXd>& knowledge_hiddens);

/// One collaborative step: fuse the two streams' next-token logits, rerank
/// the top-K fused candidates against the knowledge, and commit the winner
/// to both streams.
StepTrace code_step(Streams& streams, const CoDeConfig& config);

/// Full generation loop over the two streams of `request`.
GenerationResult generate(const Backend& backend, const DecodeRequest& request);

}  // namespace collab
