#include "collab/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "collab/errors.hpp"

namespace collab {
namespace {

constexpr std::array<std::pair<Strategy, std::string_view>, 10> kStrategyNames{{
    {Strategy::kGreedy, "greedy"},
    {Strategy::kBeam, "beam"},
    {Strategy::kCs, "cs"},
    {Strategy::kFecs, "fecs"},
    {Strategy::kTopK, "topk"},
    {Strategy::kNucleus, "nucleus"},
    {Strategy::kFNucleus, "f_nucleus"},
    {Strategy::kCd, "cd"},
    {Strategy::kDola, "dola"},
    {Strategy::kCad, "cad"},
}};

// Draw from `weights` (nonnegative, not necessarily normalized) over `ids`.
TokenId sample_from(const std::vector<Eigen::Index>& ids, const std::vector<double>& weights,
                    Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng) * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    cum += weights[i];
    if (u < cum) return static_cast<TokenId>(ids[i]);
  }
  return static_cast<TokenId>(ids[last_positive]);
}

}  // namespace

std::string_view to_string(Strategy s) {
  for (const auto& [strategy, name] : kStrategyNames) {
    if (strategy == s) return name;
  }
  return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
  for (const auto& [strategy, n] : kStrategyNames) {
    if (n == name) return strategy;
  }
  return std::nullopt;
}

void BaselineConfig::validate() const {
  if (beam_size < 1 || topk_k < 1 || cs_k < 1) throw ConfigError("sizes must be at least 1");
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("p must lie in (0, 1]");
  if (!unit(lambda) || !unit(omega) || !unit(cs_alpha) || !unit(fecs_alpha) || !unit(fecs_beta) ||
      !unit(cd_plausibility)) {
    throw ConfigError("probabilities and penalties must lie in [0, 1]");
  }
  if (!(cd_tau > 0.0)) throw ConfigError("cd_tau must be positive");
  if (!(cad_alpha >= 0.0)) throw ConfigError("cad_alpha must be nonnegative");
  if (min_new_tokens < 0 || max_new_tokens < 0 || min_new_tokens > max_new_tokens) {
    throw ConfigError("need 0 <= min_new_tokens <= max_new_tokens");
  }
}

TokenId greedy_step(const ProbDist& p) { return static_cast<TokenId>(argmax_lowest(p)); }

TokenId topk_sample(const ProbDist& p, int k, Rng& rng) {
  if (k < 1) throw InvalidParameter("topk_sample: k must be at least 1");
  const auto ids = top_k_indices(p, static_cast<std::size_t>(k));
  std::vector<double> weights;
  weights.reserve(ids.size());
  for (Eigen::Index id : ids) weights.push_back(p(id));
  return sample_from(ids, weights, rng);
}

std::vector<TokenId> nucleus_support(const ProbDist& p, double p_threshold) {
  if (!(p_threshold > 0.0 && p_threshold <= 1.0)) {
    throw InvalidParameter("nucleus: threshold must lie in (0, 1]");
  }
  const auto order = top_k_indices(p, static_cast<std::size_t>(p.size()));
  std::vector<TokenId> support;
  double cum = 0.0;
  for (Eigen::Index id : order) {
    support.push_back(static_cast<TokenId>(id));
    cum += p(id);
    if (cum >= p_threshold) break;
  }
  return support;
}

TokenId nucleus_sample(const ProbDist& p, double p_threshold, Rng& rng) {
  const auto support = nucleus_support(p, p_threshold);
  std::vector<Eigen::Index> ids(support.begin(), support.end());
  std::vector<double> weights;
  weights.reserve(ids.size());
  for (Eigen::Index id : ids) weights.push_back(p(id));
  return sample_from(ids, weights, rng);
}

double f_nucleus_threshold(double p, double lambda, double omega, std::size_t j) {
  return std::max(omega, p * std::pow(lambda, static_cast<double>(j)));
}

std::size_t tokens_since_sentence_end(std::span<const TokenId> generated) {
  std::size_t j = 0;
  for (auto it = generated.rbegin(); it != generated.rend(); ++it, ++j) {
    if (CharTokenizer::is_sentence_end(*it)) break;
  }
  return j;
}

TokenId f_nucleus_sample(const ProbDist& p, std::span<const TokenId> generated, double p_top,
                         double lambda, double omega, Rng& rng) {
  const double threshold =
      f_nucleus_threshold(p_top, lambda, omega, tokens_since_sentence_end(generated));
  return nucleus_sample(p, threshold, rng);
}

TokenId cd_step(const LogitVector& l_expert, const LogitVector& l_amateur, double tau,
                double plausibility) {
  if (!(tau > 0.0)) throw InvalidParameter("cd_step: tau must be positive");
  if (l_expert.size() != l_amateur.size()) throw DimensionError("cd_step: vocabulary mismatch");
  const Eigen::VectorXd logp_expert = log_softmax(l_expert);
  const Eigen::VectorXd logp_amateur = log_softmax(Eigen::VectorXd(l_amateur / tau));
  const Eigen::VectorXd p_expert = logp_expert.array().exp();
  const double cut = plausibility * p_expert.maxCoeff();
  std::vector<bool> allowed(static_cast<std::size_t>(p_expert.size()));
  for (Eigen::Index i = 0; i < p_expert.size(); ++i) {
    allowed[static_cast<std::size_t>(i)] = p_expert(i) >= cut;
  }
  const Eigen::VectorXd score = logp_expert - logp_amateur;
  return static_cast<TokenId>(argmax_with_fallback(score, p_expert, allowed));
}

TokenId cad_step(const LogitVector& l_prior, const LogitVector& l_posterior, double alpha) {
  if (l_prior.size() != l_posterior.size()) throw DimensionError("cad_step: length mismatch");
  const LogitVector contrast = (1.0 + alpha) * l_posterior - alpha * l_prior;
  return static_cast<TokenId>(argmax_lowest(softmax(contrast)));
}

std::vector<int> dola_bucket(int num_layers, DolaLayers) {
  const int non_final = num_layers - 1;
  std::vector<int> bucket;
  for (int l = non_final / 2; l < non_final; ++l) bucket.push_back(l);
  return bucket;
}

DolaChoice dola_step(const ContextState& state, DolaLayers layers,
                     const std::function<LogitVector(const LogitVector&)>& mask) {
  const BackendDescriptor& desc = state.descriptor();
  if (!desc.supports_layer_logits) throw CapabilityError("DoLa needs per-layer logits");
  const auto bucket = dola_bucket(desc.num_layers, layers);
  if (bucket.empty()) throw CapabilityError("DoLa needs at least one premature layer");

  const LogitVector final_logits = mask(state.layer_logits(desc.num_layers - 1));
  const ProbDist p_final = softmax(final_logits);
  DolaChoice choice;
  double best_jsd = -1.0;
  LogitVector premature;
  for (int layer : bucket) {
    LogitVector l = mask(state.layer_logits(layer));
    const double d = jsd_base2(p_final, softmax(l));
    if (d > best_jsd) {
      best_jsd = d;
      choice.premature_layer = layer;
      premature = std::move(l);
    }
  }

  const double cut = 0.1 * p_final.maxCoeff();
  std::vector<bool> head(static_cast<std::size_t>(p_final.size()));
  for (Eigen::Index i = 0; i < p_final.size(); ++i) {
    head[static_cast<std::size_t>(i)] = p_final(i) >= cut;
  }
  const Eigen::VectorXd score = log_softmax(final_logits) - log_softmax(premature);
  choice.token = static_cast<TokenId>(argmax_with_fallback(score, p_final, head));
  return choice;
}

std::vector<ScoredCandidate> contrastive_scores(const ContextState& state,
                                                const LogitVector& logits, int k, double alpha,
                                                const std::vector<Eigen::VectorXd>& knowledge_hiddens,
                                                double beta) {
  if (k < 1) throw InvalidParameter("contrastive search: k must be at least 1");
  const ProbDist p = softmax(logits);
  std::vector<Eigen::VectorXd> history;
  for (std::size_t pos = state.prompt_length(); pos < state.length(); ++pos) {
    history.push_back(state.final_hidden_at(pos));
  }

  std::vector<ScoredCandidate> out;
  for (Eigen::Index id : top_k_indices(p, static_cast<std::size_t>(k))) {
    const auto token = static_cast<TokenId>(id);
    const Eigen::VectorXd h = state.probe(token).hidden_last_layer;
    double degeneration = 0.0;  // empty history: no penalty
    if (!history.empty()) {
      degeneration = -1.0;
      for (const auto& hj : history) degeneration = std::max(degeneration, cosine(h, hj));
    }
    double score = (1.0 - alpha) * p(id) - alpha * degeneration;
    if (beta != 0.0 && !knowledge_hiddens.empty()) {
      double faithful = -1.0;
      for (const auto& hk : knowledge_hiddens) faithful = std::max(faithful, cosine(h, hk));
      score += beta * faithful;
    }
    out.push_back({token, p(id), score});
  }
  return out;
}

namespace {
TokenId best_scored(const std::vector<ScoredCandidate>& cands) {
  const ScoredCandidate* best = &cands.front();
  for (const auto& c : cands) {
    if (c.score > best->score || (c.score == best->score && c.token < best->token)) best = &c;
  }
  return best->token;
}
}  // namespace

TokenId cs_step(const ContextState& state, const LogitVector& logits, int k, double alpha) {
  return best_scored(contrastive_scores(state, logits, k, alpha, {}, 0.0));
}

TokenId fecs_step(const ContextState& state, const LogitVector& logits,
                  const std::vector<Eigen::VectorXd>& knowledge_hiddens, int k, double alpha,
                  double beta) {
  if (knowledge_hiddens.empty()) throw InvalidRequest("FECS needs nonempty knowledge");
  return best_scored(contrastive_scores(state, logits, k, alpha, knowledge_hiddens, beta));
}

GenerationResult beam_search(const Backend& backend, const BaselineRequest& request,
                             int beam_size, int min_new_tokens, int max_new_tokens) {
  if (beam_size < 1) throw ConfigError("beam_size must be at least 1");
  struct Beam {
    std::unique_ptr<ContextState> state;
    std::vector<TokenId> tokens;
    double logp = 0.0;
  };
  struct Hypothesis {
    std::vector<TokenId> tokens;
    double logp = 0.0;
    StopReason reason = StopReason::kEos;
  };
  // Higher score first; equal scores ordered by token sequence.
  auto better = [](double sa, const std::vector<TokenId>& ta, double sb,
                   const std::vector<TokenId>& tb) {
    return sa > sb || (sa == sb && ta < tb);
  };

  const TokenId eos = backend.descriptor().eos_id;
  Streams streams = build_streams(backend, request.context_tokens, request.knowledge_tokens, false);
  std::vector<Beam> beams;
  beams.push_back({std::move(streams.posterior), {}, 0.0});
  std::vector<Hypothesis> finished;

  for (int step = 0; step < max_new_tokens && !beams.empty(); ++step) {
    struct Expansion {
      std::size_t beam;
      TokenId token;
      double logp;
      std::vector<TokenId> seq;
    };
    std::vector<Expansion> expansions;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const Eigen::VectorXd lp = log_softmax(mask_eos(beams[b].state->current().logits, eos,
                                                      static_cast<std::size_t>(step),
                                                      static_cast<std::size_t>(min_new_tokens)));
      for (Eigen::Index id : top_k_indices(lp, static_cast<std::size_t>(beam_size))) {
        std::vector<TokenId> seq = beams[b].tokens;
        seq.push_back(static_cast<TokenId>(id));
        expansions.push_back({b, static_cast<TokenId>(id), beams[b].logp + lp(id), std::move(seq)});
      }
    }
    std::sort(expansions.begin(), expansions.end(), [&](const Expansion& a, const Expansion& b) {
      return better(a.logp, a.seq, b.logp, b.seq);
    });

    std::vector<Beam> next;
    for (std::size_t rank = 0; rank < expansions.size(); ++rank) {
      Expansion& e = expansions[rank];
      if (e.token == eos) {
        if (rank < static_cast<std::size_t>(beam_size)) {
          e.seq.pop_back();
          finished.push_back({std::move(e.seq), e.logp, StopReason::kEos});
        }
        continue;
      }
      Beam nb{beams[e.beam].state->clone(), std::move(e.seq), e.logp};
      nb.state->extend(e.token);
      next.push_back(std::move(nb));
      if (next.size() == static_cast<std::size_t>(beam_size)) break;
    }
    beams = std::move(next);

    if (finished.size() >= static_cast<std::size_t>(beam_size)) break;
    // Log-probabilities only decrease, so a finished hypothesis at least as
    // good as every live beam cannot be overtaken.
    if (!finished.empty() && !beams.empty()) {
      const auto best_finished =
          std::max_element(finished.begin(), finished.end(), [](const auto& a, const auto& b) {
            return a.logp < b.logp;
          });
      bool dominated = true;
      for (const Beam& b : beams) dominated = dominated && b.logp <= best_finished->logp;
      if (dominated) break;
    }
  }
  for (Beam& b : beams) finished.push_back({std::move(b.tokens), b.logp, StopReason::kMaxTokens});

  const Hypothesis* best = &finished.front();
  for (const Hypothesis& h : finished) {
    if (better(h.logp, h.tokens, best->logp, best->tokens)) best = &h;
  }
  GenerationResult result;
  result.tokens = best->tokens;
  result.stop_reason = best->reason;
  for (std::size_t i = 0; i < result.tokens.size(); ++i) {
    StepTrace t;
    t.position = i;
    t.chosen = result.tokens[i];
    result.traces.push_back(std::move(t));
  }
  result.text = render_text(result.tokens);
  return result;
}

GenerationResult generate_baseline(const Backend& backend, const Backend* amateur,
                                   const BaselineRequest& request, const BaselineConfig& config) {
  config.validate();
  if (config.strategy == Strategy::kBeam) {
    return beam_search(backend, request, config.beam_size, config.min_new_tokens,
                       config.max_new_tokens);
  }

  const Strategy strategy = config.strategy;
  if (strategy == Strategy::kCd) {
    if (amateur == nullptr) throw CapabilityError("contrastive decoding needs an amateur backend");
    if (amateur->descriptor().vocab_size != backend.descriptor().vocab_size) {
      throw CapabilityError("expert and amateur vocabularies differ");
    }
  }
  if (strategy == Strategy::kDola && !backend.descriptor().supports_layer_logits) {
    throw CapabilityError("DoLa needs per-layer logits");
  }
  if (strategy == Strategy::kFecs && request.knowledge_tokens.empty()) {
    throw InvalidRequest("FECS needs nonempty knowledge");
  }

  Streams streams = build_streams(backend, request.context_tokens, request.knowledge_tokens,
                                  strategy == Strategy::kCad);
  std::unique_ptr<ContextState> amateur_state;
  if (strategy == Strategy::kCd) {
    amateur_state =
        amateur->init_state(posterior_prompt(request.context_tokens, request.knowledge_tokens));
  }

  const TokenId eos = backend.descriptor().eos_id;
  const auto min_tokens = static_cast<std::size_t>(config.min_new_tokens);
  Rng rng(config.seed);
  GenerationResult result;

  while (result.tokens.size() < static_cast<std::size_t>(config.max_new_tokens)) {
    const std::size_t generated = result.tokens.size();
    auto mask = [&](const LogitVector& l) { return mask_eos(l, eos, generated, min_tokens); };
    ContextState& posterior = *streams.posterior;
    const LogitVector logits = mask(posterior.current().logits);

    TokenId token = 0;
    switch (strategy) {
      case Strategy::kGreedy: token = greedy_step(softmax(logits)); break;
      case Strategy::kTopK: token = topk_sample(softmax(logits), config.topk_k, rng); break;
      case Strategy::kNucleus: token = nucleus_sample(softmax(logits), config.p, rng); break;
      case Strategy::kFNucleus:
        token = f_nucleus_sample(softmax(logits), result.tokens, config.p, config.lambda,
                                 config.omega, rng);
        break;
      case Strategy::kCd:
        token = cd_step(logits, mask(amateur_state->current().logits), config.cd_tau,
                        config.cd_plausibility);
        break;
      case Strategy::kDola: token = dola_step(posterior, config.dola_layers, mask).token; break;
      case Strategy::kCad:
        token = cad_step(mask(streams.prior->current().logits), logits, config.cad_alpha);
        break;
      case Strategy::kCs: token = cs_step(posterior, logits, config.cs_k, config.cs_alpha); break;
      case Strategy::kFecs:
        token = fecs_step(posterior, logits, streams.knowledge_hiddens, config.cs_k,
                          config.fecs_alpha, config.fecs_beta);
        break;
      case Strategy::kBeam: break;
    }

    if (token == eos) {
      result.stop_reason = StopReason::kEos;
      break;
    }
    StepTrace trace;
    trace.position = generated;
    trace.chosen = token;
    result.traces.push_back(std::move(trace));
    result.tokens.push_back(token);
    posterior.extend(token);
    if (streams.prior) streams.prior->extend(token);
    if (amateur_state) amateur_state->extend(token);
  }
  if (result.tokens.size() >= static_cast<std::size_t>(config.max_new_tokens)) {
    result.stop_reason = StopReason::kMaxTokens;
  }
  result.text = render_text(result.tokens);
  return result;
}

}  // namespace collab
