#pragma once

#include <cstdint>
#include <memory>

#include "collab/backend.hpp"

namespace collab {

struct ToyTransformerConfig {
  int vocab_size = CharTokenizer::kVocabSize;
  int num_layers = 2;
  int num_heads = 2;
  int hidden_dim = 32;
  std::uint64_t seed = 42;
  /// Std-dev of the unembedding; larger values give peakier next-token
  /// distributions from the untrained weights.
  double unembed_scale = 0.6;
};

/// Untrained pre-LayerNorm decoder-only transformer with seeded random
/// weights, sinusoidal positions and a per-layer key/value cache.
class ToyTransformer final : public Backend, public std::enable_shared_from_this<ToyTransformer> {
 public:
  static std::shared_ptr<const ToyTransformer> create(const ToyTransformerConfig& config = {});

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  std::unique_ptr<ContextState> init_state(std::span<const TokenId> tokens) const override;

  /// Logits for the last token of `tokens`, computed without any cache.
  LogitVector recompute_logits(std::span<const TokenId> tokens) const;

  struct Layer {
    Eigen::MatrixXd wq, wk, wv, wo;
    Eigen::MatrixXd w_up, w_down;
    Eigen::VectorXd b_up, b_down;
  };

  /// Per-layer keys and values, one column per consumed position.
  struct Cache {
    std::vector<Eigen::MatrixXd> keys;
    std::vector<Eigen::MatrixXd> values;
    std::vector<Eigen::VectorXd> final_hidden;
  };

  /// Key/value columns produced by one step, not yet in a cache.
  struct Pending {
    std::vector<Eigen::VectorXd> keys;
    std::vector<Eigen::VectorXd> values;
  };

  /// Run the position after everything in `cache`. The cache is read only;
  /// `commit` appends the step's keys and values afterwards.
  ForwardOutput step(const Cache& cache, TokenId token, Pending& pending) const;
  static void commit(Cache& cache, Pending&& pending, const ForwardOutput& out);
  LogitVector unembed(const Eigen::VectorXd& hidden) const;

 private:
  explicit ToyTransformer(const ToyTransformerConfig& config);

  ToyTransformerConfig config_;
  BackendDescriptor descriptor_;
  Eigen::MatrixXd embedding_;  // hidden_dim x vocab
  Eigen::MatrixXd unembedding_;  // vocab x hidden_dim
  std::vector<Layer> layers_;
};

}  // namespace collab
