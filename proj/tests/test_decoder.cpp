#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "collab/code_decoder.hpp"
#include "collab/errors.hpp"
#include "collab/toy_transformer.hpp"
#include "script_builder.hpp"

using namespace collab;
using collab::testing::logits;
using collab::testing::make_script;
using collab::testing::rule;
using Stream = TabularBackend::Stream;

namespace {

constexpr int kVocab = 12;

// Both streams read the same random logits at every step.
TabularBackend::Script identical_streams(int steps, std::uint64_t seed, double offset = 0.0) {
  auto s = make_script(kVocab);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (int t = 0; t < steps; ++t) {
    LogitVector l(kVocab);
    for (int i = 0; i < kVocab; ++i) l(i) = normal(rng) + offset;
    l(special::kEos) = -20.0 + offset;
    s.rules.push_back(rule(Stream::kAny, static_cast<std::size_t>(t), l));
  }
  return s;
}

DecodeRequest request_for(int max_tokens, double beta = 0.6, int top_k = 4) {
  DecodeRequest r;
  r.context_tokens = {4, 5};
  r.knowledge_tokens = {6, 7};
  r.config.beta = beta;
  r.config.top_k = top_k;
  r.config.max_new_tokens = max_tokens;
  return r;
}

}  // namespace

TEST_CASE("build_streams layout") {
  const auto backend = TabularBackend::from_script(make_script(kVocab));
  const std::vector<TokenId> context{4, 5};
  const std::vector<TokenId> knowledge{9};
  Streams s = build_streams(*backend, context, knowledge);
  CHECK(s.posterior->tokens() ==
        std::vector<TokenId>{special::kBos, 4, 5, special::kSep, 9, special::kSep});
  CHECK(s.prior->tokens() == std::vector<TokenId>{special::kBos, 4, 5});
  CHECK(s.knowledge_span == PositionSpan{4, 5});
  CHECK(s.posterior->tokens()[s.knowledge_span.begin] == 9);
  CHECK(s.posterior->length() == s.prior->length() + knowledge.size() + 2);
  CHECK(s.knowledge_hiddens.size() == 1);
  CHECK_THROWS_AS(build_streams(*backend, std::vector<TokenId>{}, knowledge), InvalidRequest);
}

TEST_CASE("prior stream never sees knowledge") {
  const auto backend = ToyTransformer::create();
  const auto context = CharTokenizer::tokenize("hi there");
  const auto knowledge = CharTokenizer::tokenize("zqx");
  Streams s = build_streams(*backend, context, knowledge);
  for (TokenId t : s.prior->tokens()) {
    CHECK(t != special::kSep);
  }
  CHECK(s.prior->tokens() == prior_prompt(context));
}

TEST_CASE("identical streams with beta 0 decode greedily") {
  const auto backend = TabularBackend::from_script(identical_streams(10, 3));
  auto req = request_for(10, 0.0);
  const GenerationResult result = generate(*backend, req);
  REQUIRE(result.tokens.size() == 10);
  const auto& script = backend->script();
  for (std::size_t t = 0; t < result.tokens.size(); ++t) {
    LogitVector l = script.rules[t].logits;
    if (t < 5) l(special::kEos) = kMaskedLogit;
    CHECK(result.tokens[t] == static_cast<TokenId>(argmax_lowest(l)));
    const auto& d = *result.traces[t].diagnostics;
    CHECK(d.jsd == 0.0);
    CHECK(d.delta == 3.0);
    CHECK(d.alpha == doctest::Approx(0.75).epsilon(1e-14));
  }
}

TEST_CASE("knowledge-supported candidate overrides the fused favourite") {
  // Both streams: p(A) / p(B) = 1.5 and everything else negligible, so the
  // renormalized top-2 is {A: 0.6, B: 0.4}.
  constexpr TokenId kA = 8, kB = 9, kKnowledge = 6;
  auto script = make_script(kVocab, 1, 1, 2);
  script.default_logits = logits(kVocab, {{kA, std::log(1.5)}, {kB, 0.0}}, -60.0);
  script.hiddens[kKnowledge] = Eigen::Vector2d(1.0, 0.0);
  script.hiddens[kA] = Eigen::Vector2d(-0.8, 0.6);  // cos = -0.8 -> sem 0.1
  script.hiddens[kB] = Eigen::Vector2d(0.8, 0.6);   // cos = 0.8  -> sem 0.9
  script.knowledge_attention[kA] = 0.1;
  script.knowledge_attention[kB] = 0.9;
  const auto backend = TabularBackend::from_script(script);

  Streams streams = build_streams(*backend, std::vector<TokenId>{4}, std::vector<TokenId>{kKnowledge});
  CoDeConfig cfg;
  cfg.top_k = 2;
  cfg.beta = 0.6;
  const StepTrace trace = code_step(streams, cfg);
  REQUIRE(trace.candidates.size() == 2);
  const CandidateScore& a = trace.candidates[0];
  const CandidateScore& b = trace.candidates[1];
  CHECK(a.token == kA);
  CHECK(b.token == kB);
  CHECK(std::abs(a.p_code - 0.6) <= 1e-12);
  CHECK(std::abs(a.sem_reward - 0.1) <= 1e-12);
  CHECK(std::abs(a.att_reward - 0.1) <= 1e-12);
  CHECK(std::abs(a.final_score - 0.30) <= 1e-12);
  CHECK(std::abs(b.final_score - 0.70) <= 1e-12);
  CHECK(trace.chosen == kB);
  CHECK(streams.prior->tokens().back() == kB);
  CHECK(streams.posterior->tokens().back() == kB);
}

TEST_CASE("an uninformative prior hands the step to the posterior") {
  constexpr int kWide = 64;
  auto script = make_script(kWide);
  script.rules.push_back(rule(Stream::kPrior, std::nullopt, LogitVector::Zero(kWide)));
  script.rules.push_back(rule(Stream::kPosterior, std::nullopt, logits(kWide, {{10, 20.0}})));
  const auto backend = TabularBackend::from_script(script);
  Streams streams = build_streams(*backend, std::vector<TokenId>{4}, std::vector<TokenId>{5});
  const LogitVector l_c = streams.prior->current().logits;
  LogitVector l_k = streams.posterior->current().logits;
  l_k(special::kEos) = kMaskedLogit;
  LogitVector l_c_masked = l_c;
  l_c_masked(special::kEos) = kMaskedLogit;
  const StepTrace trace = code_step(streams, CoDeConfig{});
  const auto& d = *trace.diagnostics;
  CHECK(d.c_prior < 0.06);
  CHECK(d.alpha > 1.0 - 1e-4);
  const ProbDist p_code = fuse(l_c_masked, l_k, d.alpha);
  CHECK((p_code - softmax(l_k)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(trace.chosen == 10);
}

TEST_CASE("EOS is masked until min_new_tokens") {
  auto script = make_script(kVocab);
  script.default_logits = logits(kVocab, {{special::kEos, 10.0}, {7, 1.0}});
  const auto backend = TabularBackend::from_script(script);
  auto req = request_for(20);
  req.config.min_new_tokens = 5;
  const GenerationResult r = generate(*backend, req);
  CHECK(r.tokens.size() == 5);
  CHECK(r.stop_reason == StopReason::kEos);
  for (TokenId t : r.tokens) CHECK(t != special::kEos);
  CHECK(r.traces.size() == r.tokens.size());
}

TEST_CASE("max_new_tokens bounds generation") {
  const auto backend = TabularBackend::from_script(identical_streams(10, 5));
  auto req = request_for(3);
  req.config.min_new_tokens = 3;
  const GenerationResult r = generate(*backend, req);
  CHECK(r.tokens.size() == 3);
  CHECK(r.stop_reason == StopReason::kMaxTokens);
}

TEST_CASE("config and request validation") {
  const auto backend = TabularBackend::from_script(make_script(kVocab));
  auto req = request_for(5, 0.6, kVocab + 1);
  CHECK_THROWS_AS(generate(*backend, req), ConfigError);
  req = request_for(5);
  req.config.beta = 1.5;
  CHECK_THROWS_AS(generate(*backend, req), ConfigError);
  req = request_for(5);
  req.config.min_new_tokens = 10;
  CHECK_THROWS_AS(generate(*backend, req), ConfigError);
  req = request_for(5);
  req.knowledge_tokens.clear();
  CHECK_THROWS_AS(generate(*backend, req), InvalidRequest);
  CoDeConfig{}.validate(kVocab);
}

TEST_CASE("shifting both streams by a constant leaves choices unchanged") {
  const auto plain = TabularBackend::from_script(identical_streams(8, 9));
  auto shifted_script = plain->script();
  for (auto& r : shifted_script.rules) r.logits.array() += 7.5;
  const auto shifted = TabularBackend::from_script(shifted_script);
  const auto req = request_for(8);
  CHECK(generate(*plain, req).tokens == generate(*shifted, req).tokens);
}

TEST_CASE("toy transformer traces are reconstructible and bounded") {
  const auto backend = ToyTransformer::create();
  DecodeRequest req;
  req.context_tokens = CharTokenizer::tokenize("A: who won? B:");
  req.knowledge_tokens = CharTokenizer::tokenize("the bulls won six titles");
  req.config.max_new_tokens = 16;
  const GenerationResult r = generate(*backend, req);
  CHECK(r.traces.size() == r.tokens.size());
  for (const StepTrace& t : r.traces) {
    const auto& d = *t.diagnostics;
    const double alpha = compute_alpha(ConfidencePair<double>{d.c_prior, d.c_posterior}, d.delta);
    CHECK(std::abs(alpha - d.alpha) <= 1e-12);
    CHECK(t.candidates.size() == 4);
    double mass = 0.0;
    for (const CandidateScore& c : t.candidates) {
      CHECK(c.final_score == rerank_score(c.p_code, c.sem_reward, c.att_reward, 0.6));
      CHECK(c.sem_reward >= 0.0);
      CHECK(c.sem_reward <= 1.0);
      CHECK(c.att_reward >= 0.0);
      CHECK(c.att_reward <= 1.0);
      CHECK(c.final_score >= 0.0);
      CHECK(c.final_score <= 1.0 + 1e-12);
      mass += c.p_code;
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    bool chosen_is_best = true;
    for (const CandidateScore& c : t.candidates) {
      if (c.final_score > 0.0 && c.token != t.chosen) {
        for (const CandidateScore& w : t.candidates) {
          if (w.token == t.chosen) chosen_is_best = chosen_is_best && w.final_score >= c.final_score;
        }
      }
    }
    CHECK(chosen_is_best);
  }

  const GenerationResult again = generate(*backend, req);
  CHECK(again.tokens == r.tokens);
  CHECK(again.text == r.text);
}

TEST_CASE("beta 0 picks the fused argmax on the toy model") {
  const auto backend = ToyTransformer::create();
  DecodeRequest req;
  req.context_tokens = CharTokenizer::tokenize("hello");
  req.knowledge_tokens = CharTokenizer::tokenize("world");
  req.config.beta = 0.0;
  req.config.max_new_tokens = 12;
  const GenerationResult r = generate(*backend, req);
  for (const StepTrace& t : r.traces) CHECK(t.chosen == t.candidates.front().token);
}

TEST_CASE("code_step keeps the streams in sync") {
  const auto backend = ToyTransformer::create();
  Streams s = build_streams(*backend, CharTokenizer::tokenize("abc"), CharTokenizer::tokenize("xyz"));
  for (int i = 0; i < 4; ++i) code_step(s, CoDeConfig{});
  CHECK(s.prior->generated() == 4);
  CHECK(s.posterior->generated() == 4);
  const auto& a = s.prior->tokens();
  const auto& b = s.posterior->tokens();
  CHECK(std::equal(a.end() - 4, a.end(), b.end() - 4));

  s.posterior->extend(10);
  CHECK_THROWS_AS(code_step(s, CoDeConfig{}), InvalidRequest);
}
