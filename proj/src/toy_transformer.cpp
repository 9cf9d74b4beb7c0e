#include "collab/toy_transformer.hpp"

#include <cmath>
#include <random>

#include "collab/errors.hpp"

namespace collab {
namespace {

constexpr double kLayerNormEps = 1e-5;

Eigen::VectorXd layer_norm(const Eigen::VectorXd& x) {
  const double mean = x.mean();
  const Eigen::VectorXd centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(x.size());
  return centered / std::sqrt(var + kLayerNormEps);
}

Eigen::VectorXd gelu(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
}

// Softmax over attention scores; a single position gets weight 1.
Eigen::VectorXd attention_weights(const Eigen::VectorXd& scores) {
  Eigen::VectorXd w = (scores.array() - scores.maxCoeff()).exp();
  return w / w.sum();
}

Eigen::VectorXd sinusoidal(std::size_t position, int dim) {
  Eigen::VectorXd pe(dim);
  for (int i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
    pe(i) = std::sin(static_cast<double>(position) * freq);
    if (i + 1 < dim) pe(i + 1) = std::cos(static_cast<double>(position) * freq);
  }
  return pe;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                              double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  // Fill column-major in a fixed order so the weights depend only on the seed.
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
  return m;
}

void append_column(Eigen::MatrixXd& m, const Eigen::VectorXd& col) {
  const Eigen::Index n = m.cols();
  m.conservativeResize(col.size(), n + 1);
  m.col(n) = col;
}

class ToyState final : public ContextState {
 public:
  ToyState(std::shared_ptr<const ToyTransformer> model, std::span<const TokenId> prompt)
      : model_(std::move(model)) {
    const int layers = model_->descriptor().num_layers;
    const int dim = model_->descriptor().hidden_dim;
    cache_.keys.assign(layers, Eigen::MatrixXd(dim, 0));
    cache_.values.assign(layers, Eigen::MatrixXd(dim, 0));
    for (TokenId t : prompt) consume(t);
    prompt_length_ = tokens_.size();
  }

  const BackendDescriptor& descriptor() const override { return model_->descriptor(); }

  const ForwardOutput& extend(TokenId token) override {
    check_token(token);
    consume(token);
    return current_;
  }

  CandidateObservation probe(TokenId candidate) const override {
    check_token(candidate);
    ToyTransformer::Pending pending;
    ForwardOutput out = model_->step(cache_, candidate, pending);
    CandidateObservation obs;
    obs.candidate = candidate;
    obs.hidden_last_layer = out.hidden_per_layer.back();
    obs.attention = std::move(out.attention);
    obs.logits_next = std::move(out.logits);
    return obs;
  }

  LogitVector layer_logits(int layer) const override {
    check_layer(layer);
    if (layer == descriptor().num_layers - 1) return current_.logits;
    return model_->unembed(current_.hidden_per_layer[static_cast<std::size_t>(layer)]);
  }

  Eigen::VectorXd final_hidden_at(std::size_t position) const override {
    if (position >= cache_.final_hidden.size()) {
      throw RangeError("position " + std::to_string(position) + " not consumed yet");
    }
    return cache_.final_hidden[position];
  }

  std::unique_ptr<ContextState> clone() const override {
    return std::make_unique<ToyState>(*this);
  }

 private:
  void consume(TokenId token) {
    ToyTransformer::Pending pending;
    current_ = model_->step(cache_, token, pending);
    ToyTransformer::commit(cache_, std::move(pending), current_);
    tokens_.push_back(token);
  }

  std::shared_ptr<const ToyTransformer> model_;
  ToyTransformer::Cache cache_;
};

}  // namespace

std::shared_ptr<const ToyTransformer> ToyTransformer::create(const ToyTransformerConfig& config) {
  return std::shared_ptr<const ToyTransformer>(new ToyTransformer(config));
}

ToyTransformer::ToyTransformer(const ToyTransformerConfig& config) : config_(config) {
  if (config.vocab_size < 2 || config.num_layers < 1 || config.num_heads < 1 ||
      config.hidden_dim < 1 || config.hidden_dim % config.num_heads != 0) {
    throw ConfigError("toy transformer: invalid dimensions");
  }
  descriptor_ = BackendDescriptor{config.vocab_size, config.num_layers, config.num_heads,
                                  config.hidden_dim, true, special::kEos};

  std::mt19937_64 rng(config.seed);
  const int d = config.hidden_dim;
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  embedding_ = random_matrix(rng, d, config.vocab_size, 1.0);
  layers_.reserve(static_cast<std::size_t>(config.num_layers));
  for (int l = 0; l < config.num_layers; ++l) {
    Layer layer;
    layer.wq = random_matrix(rng, d, d, proj);
    layer.wk = random_matrix(rng, d, d, proj);
    layer.wv = random_matrix(rng, d, d, proj);
    layer.wo = random_matrix(rng, d, d, proj);
    layer.w_up = random_matrix(rng, 4 * d, d, proj);
    layer.b_up = random_matrix(rng, 4 * d, 1, 0.1);
    layer.w_down = random_matrix(rng, d, 4 * d, 0.5 * proj);
    layer.b_down = random_matrix(rng, d, 1, 0.1);
    layers_.push_back(std::move(layer));
  }
  unembedding_ = random_matrix(rng, config.vocab_size, d, config.unembed_scale);
}

LogitVector ToyTransformer::unembed(const Eigen::VectorXd& hidden) const {
  return unembedding_ * layer_norm(hidden);
}

ForwardOutput ToyTransformer::step(const Cache& cache, TokenId token, Pending& pending) const {
  const int d = descriptor_.hidden_dim;
  const int heads = descriptor_.num_heads;
  const int head_dim = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const Eigen::Index past = cache.keys.empty() ? 0 : cache.keys.front().cols();

  ForwardOutput out;
  out.hidden_per_layer.reserve(layers_.size());
  out.attention.reserve(layers_.size());
  pending.keys.clear();
  pending.values.clear();

  Eigen::VectorXd x = embedding_.col(token) + sinusoidal(static_cast<std::size_t>(past), d);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const Eigen::VectorXd a = layer_norm(x);
    const Eigen::VectorXd q = layer.wq * a;
    Eigen::VectorXd k = layer.wk * a;
    Eigen::VectorXd v = layer.wv * a;

    Eigen::MatrixXd rows(heads, past + 1);
    Eigen::VectorXd mixed(d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.segment(h * head_dim, head_dim);
      Eigen::VectorXd scores(past + 1);
      if (past > 0) {
        scores.head(past) =
            cache.keys[l].middleRows(h * head_dim, head_dim).transpose() * qh * scale;
      }
      scores(past) = k.segment(h * head_dim, head_dim).dot(qh) * scale;
      const Eigen::VectorXd weights = attention_weights(scores);
      rows.row(h) = weights.transpose();
      Eigen::VectorXd head_out = v.segment(h * head_dim, head_dim) * weights(past);
      if (past > 0) {
        head_out += cache.values[l].middleRows(h * head_dim, head_dim) * weights.head(past);
      }
      mixed.segment(h * head_dim, head_dim) = head_out;
    }
    x += layer.wo * mixed;
    x += layer.w_down * gelu(layer.w_up * layer_norm(x) + layer.b_up) + layer.b_down;

    out.hidden_per_layer.push_back(x);
    out.attention.push_back(std::move(rows));
    pending.keys.push_back(std::move(k));
    pending.values.push_back(std::move(v));
  }
  out.logits = unembed(x);
  return out;
}

void ToyTransformer::commit(Cache& cache, Pending&& pending, const ForwardOutput& out) {
  for (std::size_t l = 0; l < pending.keys.size(); ++l) {
    append_column(cache.keys[l], pending.keys[l]);
    append_column(cache.values[l], pending.values[l]);
  }
  cache.final_hidden.push_back(out.hidden_per_layer.back());
}

std::unique_ptr<ContextState> ToyTransformer::init_state(std::span<const TokenId> tokens) const {
  check_prompt(tokens);
  return std::make_unique<ToyState>(shared_from_this(), tokens);
}

LogitVector ToyTransformer::recompute_logits(std::span<const TokenId> tokens) const {
  check_prompt(tokens);
  // Full causal pass: every position attends over all earlier positions with
  // freshly computed keys and values, no incremental cache.
  const int d = descriptor_.hidden_dim;
  const int heads = descriptor_.num_heads;
  const int head_dim = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const auto n = static_cast<Eigen::Index>(tokens.size());

  Eigen::MatrixXd x(d, n);
  for (Eigen::Index p = 0; p < n; ++p) {
    x.col(p) = embedding_.col(tokens[static_cast<std::size_t>(p)]) +
               sinusoidal(static_cast<std::size_t>(p), d);
  }
  for (const Layer& layer : layers_) {
    Eigen::MatrixXd normed(d, n);
    for (Eigen::Index p = 0; p < n; ++p) normed.col(p) = layer_norm(x.col(p));
    const Eigen::MatrixXd q = layer.wq * normed;
    const Eigen::MatrixXd k = layer.wk * normed;
    const Eigen::MatrixXd v = layer.wv * normed;
    Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(d, n);
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.middleRows(h * head_dim, head_dim);
      const auto kh = k.middleRows(h * head_dim, head_dim);
      const auto vh = v.middleRows(h * head_dim, head_dim);
      for (Eigen::Index p = 0; p < n; ++p) {
        Eigen::VectorXd scores = kh.leftCols(p + 1).transpose() * qh.col(p) * scale;
        const Eigen::VectorXd w = attention_weights(scores);
        mixed.block(h * head_dim, p, head_dim, 1) = vh.leftCols(p + 1) * w;
      }
    }
    x += layer.wo * mixed;
    for (Eigen::Index p = 0; p < n; ++p) {
      const Eigen::VectorXd col = x.col(p);
      x.col(p) += layer.w_down * gelu(layer.w_up * layer_norm(col) + layer.b_up) + layer.b_down;
    }
  }
  return unembed(x.col(n - 1));
}

}  // namespace collab
