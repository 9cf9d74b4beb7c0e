#include "collab/generation.hpp"

#include <algorithm>
#include <numeric>

#include "collab/errors.hpp"

namespace collab {

const char* to_string(StopReason reason) {
  return reason == StopReason::kEos ? "eos" : "max_tokens";
}

std::vector<TokenId> prior_prompt(std::span<const TokenId> context) {
  std::vector<TokenId> out;
  out.reserve(context.size() + 1);
  out.push_back(special::kBos);
  out.insert(out.end(), context.begin(), context.end());
  return out;
}

std::vector<TokenId> posterior_prompt(std::span<const TokenId> context,
                                      std::span<const TokenId> knowledge) {
  std::vector<TokenId> out = prior_prompt(context);
  out.push_back(special::kSep);
  out.insert(out.end(), knowledge.begin(), knowledge.end());
  out.push_back(special::kSep);
  return out;
}

Streams build_streams(const Backend& backend, std::span<const TokenId> context,
                      std::span<const TokenId> knowledge, bool with_prior) {
  if (context.empty()) throw InvalidRequest("build_streams: empty context");
  Streams s;
  if (with_prior) s.prior = backend.init_state(prior_prompt(context));
  s.posterior = backend.init_state(posterior_prompt(context, knowledge));
  s.knowledge_span.begin = context.size() + 2;
  s.knowledge_span.end = s.knowledge_span.begin + knowledge.size();
  s.knowledge_hiddens.reserve(knowledge.size());
  for (std::size_t pos = s.knowledge_span.begin; pos < s.knowledge_span.end; ++pos) {
    s.knowledge_hiddens.push_back(s.posterior->final_hidden_at(pos));
  }
  return s;
}

LogitVector mask_eos(const LogitVector& logits, TokenId eos, std::size_t generated,
                     std::size_t min_new_tokens) {
  LogitVector out = logits;
  if (generated < min_new_tokens && eos >= 0 && eos < out.size()) out(eos) = kMaskedLogit;
  return out;
}

Eigen::Index argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& values) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values(i) > values(best)) best = i;
  }
  return best;
}

std::vector<Eigen::Index> top_k_indices(const Eigen::Ref<const Eigen::VectorXd>& values,
                                        std::size_t k) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(values.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      return values(a) > values(b) || (values(a) == values(b) && a < b);
                    });
  idx.resize(k);
  return idx;
}

Eigen::Index argmax_with_fallback(const Eigen::Ref<const Eigen::VectorXd>& score,
                                  const Eigen::Ref<const Eigen::VectorXd>& prior_prob,
                                  const std::vector<bool>& allowed) {
  Eigen::Index best = -1;
  for (Eigen::Index i = 0; i < score.size(); ++i) {
    if (!allowed[static_cast<std::size_t>(i)]) continue;
    if (best < 0 || score(i) > score(best) ||
        (score(i) == score(best) && prior_prob(i) > prior_prob(best))) {
      best = i;
    }
  }
  if (best < 0) throw InvalidInput("argmax over an empty candidate set");
  return best;
}

std::string render_text(std::span<const TokenId> tokens) {
  return CharTokenizer::detokenize(tokens);
}

}  // namespace collab
