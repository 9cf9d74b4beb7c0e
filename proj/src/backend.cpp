#include "collab/backend.hpp"

#include <string>

#include "collab/errors.hpp"

namespace collab {

double max_pooled_attention(const AttentionRows& rows, const PositionSpan& span) {
  double best = 0.0;
  for (const Eigen::MatrixXd& layer : rows) {
    const auto cols = static_cast<std::size_t>(layer.cols());
    if (span.empty() || span.begin >= cols) continue;
    const std::size_t end = std::min(span.end, cols);
    const auto block = layer.middleCols(static_cast<Eigen::Index>(span.begin),
                                        static_cast<Eigen::Index>(end - span.begin));
    best = std::max(best, block.maxCoeff());
  }
  return best;
}

void ContextState::check_token(TokenId token) const {
  if (token < 0 || token >= descriptor().vocab_size) {
    throw VocabularyError("token id " + std::to_string(token) + " outside vocabulary of size " +
                          std::to_string(descriptor().vocab_size));
  }
}

void ContextState::check_layer(int layer) const {
  if (!descriptor().supports_layer_logits) {
    throw CapabilityError("backend does not expose per-layer logits");
  }
  if (layer < 0 || layer >= descriptor().num_layers) {
    throw RangeError("layer " + std::to_string(layer) + " outside [0, " +
                     std::to_string(descriptor().num_layers) + ")");
  }
}

void Backend::check_prompt(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw InvalidRequest("init_state: empty token sequence");
  for (TokenId t : tokens) {
    if (t < 0 || t >= descriptor().vocab_size) {
      throw VocabularyError("token id " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(descriptor().vocab_size));
    }
  }
}

}  // namespace collab
