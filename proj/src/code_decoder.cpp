#include "collab/code_decoder.hpp"

#include <algorithm>

#include "collab/errors.hpp"

namespace collab {

void CoDeConfig::validate(int vocab_size) const {
  if (top_k < 1) throw ConfigError("top_k must be at least 1");
  if (top_k > vocab_size) throw ConfigError("top_k exceeds the vocabulary size");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(eta > 0.0)) throw ConfigError("eta must be positive");
  if (min_new_tokens < 0 || max_new_tokens < 0 || min_new_tokens > max_new_tokens) {
    throw ConfigError("need 0 <= min_new_tokens <= max_new_tokens");
  }
}

double semantic_reward(const Eigen::VectorXd& candidate_hidden,
                       const std::vector<Eigen::VectorXd>& knowledge_hiddens) {
  if (knowledge_hiddens.empty()) return 0.0;
  double best = -1.0;
  for (const Eigen::VectorXd& h : knowledge_hiddens) best = std::max(best, cosine(candidate_hidden, h));
  return std::clamp((1.0 + best) / 2.0, 0.0, 1.0);
}

StepTrace code_step(Streams& streams, const CoDeConfig& config) {
  ContextState& prior = *streams.prior;
  ContextState& posterior = *streams.posterior;
  const BackendDescriptor& desc = posterior.descriptor();
  config.validate(desc.vocab_size);
  if (prior.generated() != posterior.generated()) {
    throw InvalidRequest("code_step: streams are out of sync");
  }

  const auto min_tokens = static_cast<std::size_t>(config.min_new_tokens);
  const LogitVector l_prior =
      mask_eos(prior.current().logits, desc.eos_id, prior.generated(), min_tokens);
  const LogitVector l_posterior =
      mask_eos(posterior.current().logits, desc.eos_id, posterior.generated(), min_tokens);

  StepTrace trace;
  trace.position = posterior.generated();
  const FusionDiagnostics<double> diag =
      diagnose(l_prior, l_posterior, FusionParams<double>{config.gamma, config.eta});
  trace.diagnostics = diag;

  const ProbDist p_code = fuse(l_prior, l_posterior, diag.alpha);
  const auto pool = top_k_indices(p_code, static_cast<std::size_t>(config.top_k));
  double pool_mass = 0.0;
  for (Eigen::Index id : pool) pool_mass += p_code(id);

  trace.candidates.reserve(pool.size());
  for (Eigen::Index id : pool) {
    const auto token = static_cast<TokenId>(id);
    const CandidateObservation obs = posterior.probe(token);
    CandidateScore c;
    c.token = token;
    c.p_code = pool_mass > 0.0 ? p_code(id) / pool_mass : 1.0 / static_cast<double>(pool.size());
    c.sem_reward = semantic_reward(obs.hidden_last_layer, streams.knowledge_hiddens);
    c.att_reward = std::clamp(obs.attention_to(streams.knowledge_span), 0.0, 1.0);
    c.final_score = rerank_score(c.p_code, c.sem_reward, c.att_reward, config.beta);
    trace.candidates.push_back(c);
  }

  const CandidateScore* best = &trace.candidates.front();
  for (const CandidateScore& c : trace.candidates) {
    if (c.final_score > best->final_score ||
        (c.final_score == best->final_score && c.token < best->token)) {
      best = &c;
    }
  }
  trace.chosen = best->token;
  prior.extend(trace.chosen);
  posterior.extend(trace.chosen);
  return trace;
}

GenerationResult generate(const Backend& backend, const DecodeRequest& request) {
  const CoDeConfig& config = request.config;
  config.validate(backend.descriptor().vocab_size);
  if (request.knowledge_tokens.empty()) {
    throw InvalidRequest("collaborative decoding needs nonempty knowledge");
  }
  Streams streams = build_streams(backend, request.context_tokens, request.knowledge_tokens);
  const TokenId eos = backend.descriptor().eos_id;

  GenerationResult result;
  result.stop_reason = StopReason::kMaxTokens;
  while (result.tokens.size() < static_cast<std::size_t>(config.max_new_tokens)) {
    StepTrace trace = code_step(streams, config);
    if (trace.chosen == eos) {
      result.stop_reason = StopReason::kEos;
      break;
    }
    result.tokens.push_back(trace.chosen);
    result.traces.push_back(std::move(trace));
  }
  result.text = render_text(result.tokens);
  return result;
}

}  // namespace collab
