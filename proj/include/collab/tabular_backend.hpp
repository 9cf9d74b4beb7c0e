#pragma once

// Scripted backend: logits, per-layer logits, hidden states and attention
// come from a JSON script instead of a network, so tests can dictate exactly
// what a decoder sees.
//
// Script fields (all top-level keys optional unless noted):
//
//   vocab_size            int, required
//   num_layers            int, default 1
//   num_heads             int, default 1
//   hidden_dim            int, default 4
//   eos_id                int, default 1
//   supports_layer_logits bool, default false
//   default_logits        logit spec used when no rule matches; default all zero
//   rules                 list, first match wins. Match keys (all optional):
//       stream     "prior" | "posterior" | "any"   (posterior = sequence holds SEP)
//       step       tokens consumed since init_state
//       length     total sequence length
//       last_token id of the last consumed token
//     payload: logits (logit spec, required), layer_logits (list of logit specs,
//     one per layer; when absent every layer reports the final logits)
//   hiddens               {"<token id>": [hidden_dim reals]}; the default
//                         hidden of token t is the unit vector e_(t mod hidden_dim)
//   knowledge_attention   {"<token id>": mass in [0,1]}; when a position holding
//                         that token is read in a stream with a knowledge span,
//                         `mass` goes to the first knowledge position and the
//                         rest to the position itself, on every layer and head
//
// A logit spec is either a dense array of vocab_size reals or an object
// {"fill": r, "values": {"<token id>": r, ...}}.

#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "collab/backend.hpp"

namespace collab {

class TabularBackend final : public Backend,
                             public std::enable_shared_from_this<TabularBackend> {
 public:
  enum class Stream { kAny, kPrior, kPosterior };

  struct Rule {
    Stream stream = Stream::kAny;
    std::optional<std::size_t> step;
    std::optional<std::size_t> length;
    std::optional<TokenId> last_token;
    LogitVector logits;
    std::vector<LogitVector> layer_logits;
  };

  struct Script {
    BackendDescriptor descriptor;
    LogitVector default_logits;
    std::vector<Rule> rules;
    std::map<TokenId, Eigen::VectorXd> hiddens;
    std::map<TokenId, double> knowledge_attention;
  };

  static std::shared_ptr<const TabularBackend> from_json(const nlohmann::json& doc);
  static std::shared_ptr<const TabularBackend> from_file(const std::string& path);
  static std::shared_ptr<const TabularBackend> from_script(Script script);

  /// Serialize back to the documented format (dense logit arrays).
  nlohmann::json to_json() const;

  const BackendDescriptor& descriptor() const override { return script_.descriptor; }
  std::unique_ptr<ContextState> init_state(std::span<const TokenId> tokens) const override;

  const Script& script() const noexcept { return script_; }

  /// Output for the last token of `tokens`, where `step` tokens follow the prompt.
  ForwardOutput evaluate(std::span<const TokenId> tokens, std::size_t step) const;
  Eigen::VectorXd hidden_of(TokenId token) const;
  const Rule* match(std::span<const TokenId> tokens, std::size_t step) const;

 private:
  explicit TabularBackend(Script script);

  Script script_;
};

}  // namespace collab
