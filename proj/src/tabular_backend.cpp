#include "collab/tabular_backend.hpp"

#include <algorithm>
#include <fstream>

#include "collab/errors.hpp"

namespace collab {
namespace {

using nlohmann::json;

LogitVector parse_logits(const json& spec, int vocab, const std::string& where) {
  LogitVector out;
  if (spec.is_array()) {
    if (static_cast<int>(spec.size()) != vocab) {
      throw IngestionError(where + ": expected " + std::to_string(vocab) + " logits, got " +
                               std::to_string(spec.size()),
                           0);
    }
    out.resize(vocab);
    for (int i = 0; i < vocab; ++i) out(i) = spec[static_cast<std::size_t>(i)].get<double>();
  } else if (spec.is_object()) {
    out = LogitVector::Constant(vocab, spec.value("fill", 0.0));
    if (spec.contains("values")) {
      for (const auto& [key, value] : spec.at("values").items()) {
        const int id = std::stoi(key);
        if (id < 0 || id >= vocab) throw IngestionError(where + ": token " + key + " out of range", 0);
        out(id) = value.get<double>();
      }
    }
  } else {
    throw IngestionError(where + ": logits must be an array or an object", 0);
  }
  if (!out.allFinite()) throw IngestionError(where + ": non-finite logit", 0);
  return out;
}

TabularBackend::Stream parse_stream(const std::string& s) {
  if (s == "any") return TabularBackend::Stream::kAny;
  if (s == "prior") return TabularBackend::Stream::kPrior;
  if (s == "posterior") return TabularBackend::Stream::kPosterior;
  throw IngestionError("unknown stream '" + s + "'", 0);
}

const char* stream_name(TabularBackend::Stream s) {
  switch (s) {
    case TabularBackend::Stream::kPrior: return "prior";
    case TabularBackend::Stream::kPosterior: return "posterior";
    default: return "any";
  }
}

json dense(const LogitVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// Knowledge positions: strictly between the first and last SEP.
PositionSpan knowledge_span_of(std::span<const TokenId> tokens) {
  const auto first = std::find(tokens.begin(), tokens.end(), special::kSep);
  if (first == tokens.end()) return {};
  const auto last = std::find(tokens.rbegin(), tokens.rend(), special::kSep).base() - 1;
  const auto begin = static_cast<std::size_t>(first - tokens.begin()) + 1;
  const auto end = last == first ? tokens.size() : static_cast<std::size_t>(last - tokens.begin());
  return {begin, end};
}

class TabularState final : public ContextState {
 public:
  TabularState(std::shared_ptr<const TabularBackend> backend, std::span<const TokenId> prompt)
      : backend_(std::move(backend)) {
    tokens_.assign(prompt.begin(), prompt.end());
    prompt_length_ = tokens_.size();
    current_ = backend_->evaluate(tokens_, 0);
  }

  const BackendDescriptor& descriptor() const override { return backend_->descriptor(); }

  const ForwardOutput& extend(TokenId token) override {
    check_token(token);
    tokens_.push_back(token);
    current_ = backend_->evaluate(tokens_, generated());
    return current_;
  }

  CandidateObservation probe(TokenId candidate) const override {
    check_token(candidate);
    std::vector<TokenId> next = tokens_;
    next.push_back(candidate);
    ForwardOutput out = backend_->evaluate(next, generated() + 1);
    CandidateObservation obs;
    obs.candidate = candidate;
    obs.hidden_last_layer = out.hidden_per_layer.back();
    obs.attention = std::move(out.attention);
    obs.logits_next = std::move(out.logits);
    return obs;
  }

  LogitVector layer_logits(int layer) const override {
    check_layer(layer);
    const TabularBackend::Rule* rule = backend_->match(tokens_, generated());
    if (rule && !rule->layer_logits.empty()) {
      return rule->layer_logits[static_cast<std::size_t>(layer)];
    }
    return current_.logits;
  }

  Eigen::VectorXd final_hidden_at(std::size_t position) const override {
    if (position >= tokens_.size()) {
      throw RangeError("position " + std::to_string(position) + " not consumed yet");
    }
    return backend_->hidden_of(tokens_[position]);
  }

  std::unique_ptr<ContextState> clone() const override {
    return std::make_unique<TabularState>(*this);
  }

 private:
  std::shared_ptr<const TabularBackend> backend_;
};

}  // namespace

TabularBackend::TabularBackend(Script script) : script_(std::move(script)) {}

std::shared_ptr<const TabularBackend> TabularBackend::from_script(Script script) {
  const BackendDescriptor& d = script.descriptor;
  if (d.vocab_size < 2 || d.num_layers < 1 || d.num_heads < 1 || d.hidden_dim < 1) {
    throw ConfigError("tabular script: invalid dimensions");
  }
  if (script.default_logits.size() == 0) script.default_logits = LogitVector::Zero(d.vocab_size);
  if (script.default_logits.size() != d.vocab_size) {
    throw ConfigError("tabular script: default_logits has the wrong length");
  }
  for (const Rule& r : script.rules) {
    if (r.logits.size() != d.vocab_size) throw ConfigError("tabular script: rule logits length");
    if (!r.layer_logits.empty() &&
        static_cast<int>(r.layer_logits.size()) != d.num_layers) {
      throw ConfigError("tabular script: layer_logits needs one entry per layer");
    }
  }
  for (const auto& [id, h] : script.hiddens) {
    if (h.size() != d.hidden_dim) throw ConfigError("tabular script: hidden has the wrong length");
  }
  for (const auto& [id, mass] : script.knowledge_attention) {
    if (!(mass >= 0.0 && mass <= 1.0)) throw ConfigError("tabular script: attention mass outside [0,1]");
  }
  return std::shared_ptr<const TabularBackend>(new TabularBackend(std::move(script)));
}

std::shared_ptr<const TabularBackend> TabularBackend::from_json(const json& doc) {
  Script s;
  try {
    s.descriptor.vocab_size = doc.at("vocab_size").get<int>();
    s.descriptor.num_layers = doc.value("num_layers", 1);
    s.descriptor.num_heads = doc.value("num_heads", 1);
    s.descriptor.hidden_dim = doc.value("hidden_dim", 4);
    s.descriptor.eos_id = doc.value("eos_id", special::kEos);
    s.descriptor.supports_layer_logits = doc.value("supports_layer_logits", false);
    const int vocab = s.descriptor.vocab_size;
    if (vocab < 2) throw IngestionError("vocab_size must be at least 2", 0);

    if (doc.contains("default_logits")) {
      s.default_logits = parse_logits(doc.at("default_logits"), vocab, "default_logits");
    }
    if (doc.contains("rules")) {
      std::size_t index = 0;
      for (const json& r : doc.at("rules")) {
        const std::string where = "rules[" + std::to_string(index++) + "]";
        Rule rule;
        rule.stream = parse_stream(r.value("stream", std::string("any")));
        if (r.contains("step")) rule.step = r.at("step").get<std::size_t>();
        if (r.contains("length")) rule.length = r.at("length").get<std::size_t>();
        if (r.contains("last_token")) rule.last_token = r.at("last_token").get<TokenId>();
        rule.logits = parse_logits(r.at("logits"), vocab, where + ".logits");
        if (r.contains("layer_logits")) {
          for (const json& l : r.at("layer_logits")) {
            rule.layer_logits.push_back(parse_logits(l, vocab, where + ".layer_logits"));
          }
        }
        s.rules.push_back(std::move(rule));
      }
    }
    if (doc.contains("hiddens")) {
      for (const auto& [key, value] : doc.at("hiddens").items()) {
        const auto vals = value.get<std::vector<double>>();
        s.hiddens[std::stoi(key)] =
            Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
      }
    }
    if (doc.contains("knowledge_attention")) {
      for (const auto& [key, value] : doc.at("knowledge_attention").items()) {
        s.knowledge_attention[std::stoi(key)] = value.get<double>();
      }
    }
  } catch (const json::exception& e) {
    throw IngestionError(std::string("tabular script: ") + e.what(), 0);
  }
  return from_script(std::move(s));
}

std::shared_ptr<const TabularBackend> TabularBackend::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tabular script '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IngestionError("tabular script '" + path + "': " + e.what(), 0);
  }
  return from_json(doc);
}

json TabularBackend::to_json() const {
  const BackendDescriptor& d = script_.descriptor;
  json doc = {{"vocab_size", d.vocab_size},
              {"num_layers", d.num_layers},
              {"num_heads", d.num_heads},
              {"hidden_dim", d.hidden_dim},
              {"eos_id", d.eos_id},
              {"supports_layer_logits", d.supports_layer_logits},
              {"default_logits", dense(script_.default_logits)}};
  json rules = json::array();
  for (const Rule& r : script_.rules) {
    json j = {{"stream", stream_name(r.stream)}, {"logits", dense(r.logits)}};
    if (r.step) j["step"] = *r.step;
    if (r.length) j["length"] = *r.length;
    if (r.last_token) j["last_token"] = *r.last_token;
    if (!r.layer_logits.empty()) {
      json layers = json::array();
      for (const LogitVector& l : r.layer_logits) layers.push_back(dense(l));
      j["layer_logits"] = std::move(layers);
    }
    rules.push_back(std::move(j));
  }
  doc["rules"] = std::move(rules);
  json hiddens = json::object();
  for (const auto& [id, h] : script_.hiddens) hiddens[std::to_string(id)] = dense(h);
  doc["hiddens"] = std::move(hiddens);
  json att = json::object();
  for (const auto& [id, mass] : script_.knowledge_attention) att[std::to_string(id)] = mass;
  doc["knowledge_attention"] = std::move(att);
  return doc;
}

std::unique_ptr<ContextState> TabularBackend::init_state(std::span<const TokenId> tokens) const {
  check_prompt(tokens);
  return std::make_unique<TabularState>(shared_from_this(), tokens);
}

Eigen::VectorXd TabularBackend::hidden_of(TokenId token) const {
  if (auto it = script_.hiddens.find(token); it != script_.hiddens.end()) return it->second;
  const int dim = script_.descriptor.hidden_dim;
  return Eigen::VectorXd::Unit(dim, token % dim);
}

const TabularBackend::Rule* TabularBackend::match(std::span<const TokenId> tokens,
                                                  std::size_t step) const {
  const bool posterior = std::find(tokens.begin(), tokens.end(), special::kSep) != tokens.end();
  for (const Rule& r : script_.rules) {
    if (r.stream == Stream::kPrior && posterior) continue;
    if (r.stream == Stream::kPosterior && !posterior) continue;
    if (r.step && *r.step != step) continue;
    if (r.length && *r.length != tokens.size()) continue;
    if (r.last_token && (tokens.empty() || *r.last_token != tokens.back())) continue;
    return &r;
  }
  return nullptr;
}

ForwardOutput TabularBackend::evaluate(std::span<const TokenId> tokens, std::size_t step) const {
  const BackendDescriptor& d = script_.descriptor;
  ForwardOutput out;
  const Rule* rule = match(tokens, step);
  out.logits = rule ? rule->logits : script_.default_logits;

  const TokenId last = tokens.back();
  out.hidden_per_layer.assign(static_cast<std::size_t>(d.num_layers), hidden_of(last));

  const std::size_t self = tokens.size() - 1;
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(d.num_heads, static_cast<Eigen::Index>(self + 1));
  double mass = 0.0;
  const PositionSpan span = knowledge_span_of(tokens);
  if (auto it = script_.knowledge_attention.find(last);
      it != script_.knowledge_attention.end() && !span.empty() && span.begin < self) {
    mass = it->second;
    rows.col(static_cast<Eigen::Index>(span.begin)).setConstant(mass);
  }
  rows.col(static_cast<Eigen::Index>(self)).array() += 1.0 - mass;
  out.attention.assign(static_cast<std::size_t>(d.num_layers), rows);
  return out;
}

}  // namespace collab
