#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "collab/dist.hpp"
#include "collab/vocab.hpp"

namespace collab {

struct BackendDescriptor {
  int vocab_size = 0;
  int num_layers = 0;
  int num_heads = 0;
  int hidden_dim = 0;
  bool supports_layer_logits = false;
  TokenId eos_id = special::kEos;
};

/// Half-open interval [begin, end) of sequence positions.
struct PositionSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool empty() const noexcept { return end <= begin; }
  std::size_t size() const noexcept { return empty() ? 0 : end - begin; }
  bool contains(std::size_t pos) const noexcept { return pos >= begin && pos < end; }
  friend bool operator==(const PositionSpan&, const PositionSpan&) = default;
};

/// Attention from one query position: one heads x positions matrix per layer.
using AttentionRows = std::vector<Eigen::MatrixXd>;

/// Largest attention weight onto `span` over every layer, head and position.
double max_pooled_attention(const AttentionRows& rows, const PositionSpan& span);

/// One incremental step: the distribution over the next token plus the
/// activations at the position just consumed.
struct ForwardOutput {
  LogitVector logits;
  std::vector<Eigen::VectorXd> hidden_per_layer;
  AttentionRows attention;
};

/// What appending `candidate` would look like, without committing it.
struct CandidateObservation {
  TokenId candidate = 0;
  Eigen::VectorXd hidden_last_layer;
  AttentionRows attention;
  LogitVector logits_next;

  double attention_to(const PositionSpan& span) const {
    return max_pooled_attention(attention, span);
  }
};

/// A token prefix consumed by a backend, with whatever cache the backend
/// keeps. Confined to one thread at a time.
class ContextState {
 public:
  virtual ~ContextState() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  const std::vector<TokenId>& tokens() const noexcept { return tokens_; }
  std::size_t length() const noexcept { return tokens_.size(); }
  /// Length of the sequence the state was initialized with.
  std::size_t prompt_length() const noexcept { return prompt_length_; }
  std::size_t generated() const noexcept { return tokens_.size() - prompt_length_; }

  /// Output at the last consumed position.
  const ForwardOutput& current() const noexcept { return current_; }

  /// Consume `token` and return the output at its position.
  virtual const ForwardOutput& extend(TokenId token) = 0;
  virtual CandidateObservation probe(TokenId candidate) const = 0;
  /// Early-exit logits of `layer` at the current position.
  virtual LogitVector layer_logits(int layer) const = 0;
  /// Final-layer hidden state at an already consumed position.
  virtual Eigen::VectorXd final_hidden_at(std::size_t position) const = 0;
  virtual std::unique_ptr<ContextState> clone() const = 0;

 protected:
  void check_token(TokenId token) const;
  void check_layer(int layer) const;

  std::vector<TokenId> tokens_;
  std::size_t prompt_length_ = 0;
  ForwardOutput current_;
};

/// Immutable model. Shareable across threads; every state it hands out is
/// independent.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  virtual std::unique_ptr<ContextState> init_state(std::span<const TokenId> tokens) const = 0;

 protected:
  void check_prompt(std::span<const TokenId> tokens) const;
};

}  // namespace collab
