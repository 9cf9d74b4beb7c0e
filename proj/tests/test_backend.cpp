#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "collab/errors.hpp"
#include "collab/tabular_backend.hpp"
#include "collab/toy_transformer.hpp"
#include "script_builder.hpp"

using namespace collab;
using collab::testing::logits;
using collab::testing::make_script;
using Stream = TabularBackend::Stream;

namespace {

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, int vocab) {
  std::uniform_int_distribution<TokenId> dist(0, vocab - 1);
  std::vector<TokenId> out(n);
  for (auto& t : out) t = dist(rng);
  return out;
}

}  // namespace

TEST_CASE("tokenizer round trip") {
  const auto ids = CharTokenizer::tokenize("abc");
  REQUIRE(ids.size() == 3);
  CHECK(ids[1] == ids[0] + 1);
  CHECK(CharTokenizer::detokenize(ids) == "abc");
  CHECK(CharTokenizer::tokenize("").empty());
  CHECK(CharTokenizer::detokenize(std::vector<TokenId>{}).empty());

  const std::string printable = "Hello, World! 0-9 ~{}|";
  CHECK(CharTokenizer::detokenize(CharTokenizer::tokenize(printable)) == printable);

  const auto unk = CharTokenizer::tokenize("a\nb");
  CHECK(unk[1] == special::kUnk);
  CHECK(CharTokenizer::detokenize(unk) == std::string("a") + std::string(CharTokenizer::kUnkGlyph) + "b");
  CHECK(CharTokenizer::kVocabSize == 99);
}

TEST_CASE("toy transformer: cached extension equals a longer prompt") {
  const auto model = ToyTransformer::create();
  auto a = model->init_state(std::vector<TokenId>{5});
  a->extend(7);
  auto b = model->init_state(std::vector<TokenId>{5, 7});
  CHECK((a->current().logits - b->current().logits).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("toy transformer: incremental logits match a full recompute") {
  const auto model = ToyTransformer::create();
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto seq = random_tokens(rng, 1 + trial, model->descriptor().vocab_size);
    auto state = model->init_state(std::span(seq).first(1));
    for (std::size_t i = 1; i < seq.size(); ++i) state->extend(seq[i]);
    const LogitVector full = model->recompute_logits(seq);
    CHECK((state->current().logits - full).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("toy transformer: determinism and seeds") {
  const std::vector<TokenId> seq{0, 10, 20, 30, 40};
  const auto a = ToyTransformer::create();
  const auto b = ToyTransformer::create();
  CHECK(a->init_state(seq)->current().logits == b->init_state(seq)->current().logits);
  ToyTransformerConfig other;
  other.seed = 43;
  CHECK(ToyTransformer::create(other)->init_state(seq)->current().logits !=
        a->init_state(seq)->current().logits);
}

TEST_CASE("toy transformer: errors") {
  const auto model = ToyTransformer::create();
  CHECK_THROWS_AS(model->init_state(std::vector<TokenId>{}), InvalidRequest);
  CHECK_THROWS_AS(model->init_state(std::vector<TokenId>{0, 500}), VocabularyError);
  auto s = model->init_state(std::vector<TokenId>{0});
  CHECK_THROWS_AS(s->extend(-1), VocabularyError);
  CHECK_THROWS_AS(s->probe(99), VocabularyError);
  CHECK_THROWS_AS(s->layer_logits(2), RangeError);
  CHECK_THROWS_AS(s->final_hidden_at(1), RangeError);
}

TEST_CASE("toy transformer: attention rows are causal distributions") {
  const auto model = ToyTransformer::create();
  auto s = model->init_state(CharTokenizer::tokenize("hello there"));
  for (TokenId t : CharTokenizer::tokenize(" friend")) {
    const ForwardOutput& out = s->extend(t);
    REQUIRE(out.attention.size() == 2);
    for (const auto& layer : out.attention) {
      CHECK(layer.rows() == 2);
      // One column per consumed position: nothing beyond the current one.
      CHECK(static_cast<std::size_t>(layer.cols()) == s->length());
      for (Eigen::Index h = 0; h < layer.rows(); ++h) {
        CHECK(std::abs(layer.row(h).sum() - 1.0) <= 1e-5);
        CHECK(layer.row(h).minCoeff() >= 0.0);
      }
    }
    CHECK(out.hidden_per_layer.size() == 2);
    CHECK(out.hidden_per_layer.back().size() == 32);
  }
}

TEST_CASE("toy transformer: probe is pure and agrees with extend") {
  const auto model = ToyTransformer::create();
  auto s = model->init_state(CharTokenizer::tokenize("the cat"));
  const std::size_t len = s->length();
  const LogitVector before = s->current().logits;
  const CandidateObservation a = s->probe(40);
  const CandidateObservation b = s->probe(41);
  const CandidateObservation a2 = s->probe(40);
  CHECK(s->length() == len);
  CHECK(s->current().logits == before);
  CHECK(a.hidden_last_layer == a2.hidden_last_layer);
  CHECK(a.logits_next == a2.logits_next);
  CHECK(a.hidden_last_layer != b.hidden_last_layer);

  const ForwardOutput& out = s->extend(40);
  CHECK(out.hidden_per_layer.back() == a.hidden_last_layer);
  CHECK(out.logits == a.logits_next);
  const double att = a.attention_to(PositionSpan{0, 3});
  CHECK(att >= 0.0);
  CHECK(att <= 1.0);
}

TEST_CASE("toy transformer: top layer logits are the final logits") {
  const auto model = ToyTransformer::create();
  auto s = model->init_state(CharTokenizer::tokenize("abc"));
  CHECK((s->layer_logits(1) - s->current().logits).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(s->layer_logits(0) != s->current().logits);
  CHECK_THROWS_AS(s->layer_logits(-1), RangeError);
}

TEST_CASE("toy transformer: clone is independent") {
  const auto model = ToyTransformer::create();
  auto s = model->init_state(CharTokenizer::tokenize("ab"));
  auto c = s->clone();
  c->extend(50);
  CHECK(s->length() == 2);
  CHECK(c->length() == 3);
  s->extend(50);
  CHECK(s->current().logits == c->current().logits);
}

TEST_CASE("tabular: step-scripted logits") {
  auto script = make_script(8);
  const LogitVector scripted = logits(8, {{5, 2.5}, {6, -1.0}});
  script.rules.push_back(collab::testing::rule(Stream::kAny, 3, scripted));
  const auto backend = TabularBackend::from_script(script);
  auto s = backend->init_state(std::vector<TokenId>{0, 4});
  s->extend(4);
  s->extend(5);
  CHECK(s->extend(6).logits == scripted);
  CHECK(s->extend(7).logits == LogitVector::Zero(8));
}

TEST_CASE("tabular: length-keyed rules give cache-consistent logits") {
  auto script = make_script(8);
  auto r = collab::testing::rule(Stream::kAny, std::nullopt, logits(8, {{3, 1.0}}));
  r.length = 2;
  script.rules.push_back(r);
  const auto backend = TabularBackend::from_script(script);
  auto a = backend->init_state(std::vector<TokenId>{5});
  a->extend(7);
  auto b = backend->init_state(std::vector<TokenId>{5, 7});
  CHECK(a->current().logits == b->current().logits);
  CHECK(a->current().logits(3) == 1.0);
}

TEST_CASE("tabular: stream selection") {
  auto script = make_script(8);
  script.rules.push_back(collab::testing::rule(Stream::kPosterior, std::nullopt, logits(8, {{6, 1.0}})));
  script.rules.push_back(collab::testing::rule(Stream::kPrior, std::nullopt, logits(8, {{7, 1.0}})));
  const auto backend = TabularBackend::from_script(script);
  CHECK(backend->init_state(std::vector<TokenId>{0, 5, 3, 4, 3})->current().logits(6) == 1.0);
  CHECK(backend->init_state(std::vector<TokenId>{0, 5})->current().logits(7) == 1.0);
}

TEST_CASE("tabular: scripted knowledge attention and hiddens") {
  auto script = make_script(10, 2, 2, 3);
  script.knowledge_attention[7] = 0.9;
  script.hiddens[7] = Eigen::Vector3d(0.5, 0.5, 0.0);
  const auto backend = TabularBackend::from_script(script);
  // BOS c SEP k k SEP
  auto s = backend->init_state(std::vector<TokenId>{0, 5, 3, 8, 9, 3});
  const PositionSpan knowledge{3, 5};
  const CandidateObservation obs = s->probe(7);
  CHECK(obs.attention_to(knowledge) == 0.9);
  CHECK(obs.hidden_last_layer == Eigen::Vector3d(0.5, 0.5, 0.0));
  for (const auto& layer : obs.attention) {
    CHECK(layer.rows() == 2);
    CHECK(layer.cols() == 7);
    for (Eigen::Index h = 0; h < 2; ++h) CHECK(std::abs(layer.row(h).sum() - 1.0) <= 1e-12);
  }
  CHECK(s->probe(6).attention_to(knowledge) == 0.0);
  CHECK(s->final_hidden_at(3) == Eigen::Vector3d::Unit(8 % 3));
  CHECK(s->length() == 6);

  const auto ext = s->extend(7);
  CHECK(ext.hidden_per_layer.back() == obs.hidden_last_layer);
}

TEST_CASE("tabular: layer logits and capability") {
  auto script = make_script(6, 3);
  auto r = collab::testing::rule(Stream::kAny, 0, logits(6, {{4, 3.0}}));
  r.layer_logits = {logits(6, {{1, 1.0}}), logits(6, {{2, 1.0}}), logits(6, {{4, 3.0}})};
  script.rules.push_back(r);
  const auto backend = TabularBackend::from_script(script);
  auto s = backend->init_state(std::vector<TokenId>{0});
  CHECK(s->layer_logits(0) == r.layer_logits[0]);
  CHECK(s->layer_logits(1) == r.layer_logits[1]);
  CHECK(s->layer_logits(2) == s->current().logits);
  CHECK_THROWS_AS(s->layer_logits(3), RangeError);

  auto flat = make_script(6, 1);
  auto fs = TabularBackend::from_script(flat)->init_state(std::vector<TokenId>{0});
  CHECK_THROWS_AS(fs->layer_logits(0), CapabilityError);
}

TEST_CASE("tabular: script JSON round trip") {
  auto script = make_script(6, 2, 1, 3);
  auto r = collab::testing::rule(Stream::kPrior, 2, logits(6, {{4, 3.0}}, -1.0));
  r.last_token = 5;
  r.layer_logits = {logits(6, {{1, 1.0}}), logits(6, {{4, 3.0}})};
  script.rules.push_back(r);
  script.hiddens[4] = Eigen::Vector3d(1, 2, 3);
  script.knowledge_attention[4] = 0.25;
  const auto backend = TabularBackend::from_script(script);
  const nlohmann::json doc = backend->to_json();
  const auto again = TabularBackend::from_json(doc);
  CHECK(again->to_json() == doc);
  CHECK(again->script().rules.at(0).last_token == 5);
  CHECK(again->script().hiddens.at(4) == Eigen::Vector3d(1, 2, 3));
}

TEST_CASE("tabular: sparse logit specs and bad scripts") {
  const auto doc = nlohmann::json::parse(R"({
    "vocab_size": 5,
    "default_logits": {"fill": -1.0, "values": {"2": 4.0}}
  })");
  const auto backend = TabularBackend::from_json(doc);
  auto s = backend->init_state(std::vector<TokenId>{0});
  CHECK(s->current().logits(2) == 4.0);
  CHECK(s->current().logits(0) == -1.0);

  CHECK_THROWS_AS(TabularBackend::from_json(nlohmann::json::parse(R"({"num_layers": 1})")),
                  IngestionError);
  CHECK_THROWS_AS(TabularBackend::from_json(nlohmann::json::parse(
                      R"({"vocab_size": 3, "default_logits": [1, 2]})")),
                  IngestionError);
  CHECK_THROWS_AS(TabularBackend::from_json(nlohmann::json::parse(
                      R"({"vocab_size": 3, "knowledge_attention": {"1": 1.5}})")),
                  ConfigError);
  CHECK_THROWS_AS(TabularBackend::from_file("/nonexistent/script.json"), IoError);
}
