#pragma once

// Probability and logit math for dual-stream decoding. Everything here is a
// pure function over dense Eigen vectors and is templated on the scalar type
// so tests can run the same expressions in long double.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "collab/errors.hpp"

namespace collab {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Raw per-token scores from a model head. Finite entries only.
using LogitVector = Vector<double>;
/// Normalized distribution over the vocabulary.
using ProbDist = Vector<double>;

/// Logit used to exclude a token (EOS before the minimum length). Finite so
/// that it passes validation; exp() of it underflows to exactly zero.
inline constexpr double kMaskedLogit = -1e30;

/// Confidence of the context-only (prior) and knowledge-conditioned
/// (posterior) streams.
template <typename Scalar = double>
struct ConfidencePair {
  Scalar c_prior;
  Scalar c_posterior;
};

template <typename Scalar = double>
struct FusionParams {
  Scalar gamma = Scalar(3);
  Scalar eta = Scalar(1e-6);
};

/// Everything computed on the way from two logit vectors to the fusion weight.
template <typename Scalar = double>
struct FusionDiagnostics {
  Scalar jsd = 0;
  Scalar delta = 0;
  Scalar alpha = 0;
  Scalar c_prior = 0;
  Scalar c_posterior = 0;
  Scalar p_max_prior = 0;
  Scalar p_max_posterior = 0;
  Scalar entropy_prior = 0;
  Scalar entropy_posterior = 0;
};

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& v, const char* what) {
  if (!v.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entry");
}

template <typename A, typename B>
void require_same_size(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                       const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
}

// Σ −p·log₂p with 0·log₂0 = 0.
template <typename Derived>
typename Derived::Scalar entropy_bits_unchecked(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const Scalar pi = p(i);
    if (pi > Scalar(0)) h -= pi * std::log2(pi);
  }
  return h < Scalar(0) ? Scalar(0) : h;
}

}  // namespace detail

/// True when `p` is a probability vector within `tol`.
template <typename Derived>
bool is_distribution(const Eigen::MatrixBase<Derived>& p, double tol = 1e-9) {
  using Scalar = typename Derived::Scalar;
  if (p.size() == 0 || !p.allFinite()) return false;
  if ((p.array() < Scalar(0)).any() || (p.array() > Scalar(1)).any()) return false;
  return std::abs(static_cast<double>(p.sum()) - 1.0) <= tol;
}

/// Numerically stable log-softmax (max-subtracted log-sum-exp).
template <typename Derived>
Vector<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (logits.size() < 2) throw InvalidInput("log_softmax: need at least two logits");
  detail::require_finite(logits, "log_softmax");
  const Scalar m = logits.maxCoeff();
  const Vector<Scalar> shifted = logits.array() - m;
  const Scalar lse = std::log(shifted.array().exp().sum());
  return shifted.array() - lse;
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (logits.size() < 2) throw InvalidInput("softmax: need at least two logits");
  detail::require_finite(logits, "softmax");
  const auto shifted = (logits.array() - logits.maxCoeff()).eval();
  // Vectorized exp clamps its argument instead of underflowing to zero.
  const Scalar underflow = std::log(std::numeric_limits<Scalar>::denorm_min());
  Vector<Scalar> e = (shifted < underflow).select(Scalar(0), shifted.exp());
  e /= e.sum();
  return e;
}

/// Shannon entropy in bits.
template <typename Derived>
typename Derived::Scalar entropy_bits(const Eigen::MatrixBase<Derived>& p) {
  detail::require_finite(p, "entropy_bits");
  return detail::entropy_bits_unchecked(p);
}

template <typename Derived>
typename Derived::Scalar max_prob(const Eigen::MatrixBase<Derived>& p) {
  if (p.size() == 0) throw InvalidInput("max_prob: empty distribution");
  return p.maxCoeff();
}

/// sqrt(p_max / (H + eta)): high for peaked, low-entropy distributions.
template <typename Derived>
typename Derived::Scalar confidence(const Eigen::MatrixBase<Derived>& p,
                                    typename Derived::Scalar eta) {
  using Scalar = typename Derived::Scalar;
  if (!(eta > Scalar(0))) throw InvalidParameter("confidence: eta must be positive");
  return std::sqrt(max_prob(p) / (entropy_bits(p) + eta));
}

/// Jensen-Shannon divergence with base-2 logs, in [0, 1].
template <typename A, typename B>
typename A::Scalar jsd_base2(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q) {
  using Scalar = typename A::Scalar;
  detail::require_same_size(p, q, "jsd_base2");
  detail::require_finite(p, "jsd_base2");
  detail::require_finite(q, "jsd_base2");
  const Vector<Scalar> mid = (p + q) / Scalar(2);
  Scalar d = detail::entropy_bits_unchecked(mid) -
             (detail::entropy_bits_unchecked(p) + detail::entropy_bits_unchecked(q)) / Scalar(2);
  if (d < Scalar(0)) d = Scalar(0);
  if (d > Scalar(1)) d = Scalar(1);
  return d;
}

/// gamma * exp(jsd); lies in [gamma, gamma * e].
template <typename Scalar>
Scalar compute_delta(Scalar jsd, Scalar gamma) {
  if (!(jsd >= Scalar(0) && jsd <= Scalar(1))) {
    throw InvalidParameter("compute_delta: jsd outside [0, 1]");
  }
  if (!(gamma > Scalar(0))) throw InvalidParameter("compute_delta: gamma must be positive");
  return gamma * std::exp(jsd);
}

template <typename Scalar>
Scalar compute_alpha(const ConfidencePair<Scalar>& c, Scalar delta) {
  if (!(c.c_prior > Scalar(0)) || !(c.c_posterior > Scalar(0)) || !(delta > Scalar(0))) {
    throw InvalidParameter("compute_alpha: confidences and delta must be positive");
  }
  const Scalar weighted = delta * c.c_posterior;
  return weighted / (c.c_prior + weighted);
}

/// Fused logits alpha * posterior + (1 - alpha) * prior, before normalization.
template <typename A, typename B>
Vector<typename A::Scalar> fused_logits(const Eigen::MatrixBase<A>& l_prior,
                                        const Eigen::MatrixBase<B>& l_posterior,
                                        typename A::Scalar alpha) {
  using Scalar = typename A::Scalar;
  detail::require_same_size(l_prior, l_posterior, "fuse");
  if (!(alpha >= Scalar(0) && alpha <= Scalar(1))) {
    throw InvalidParameter("fuse: alpha outside [0, 1]");
  }
  // The boundaries return one stream untouched so fuse(.., 1) is exactly
  // softmax(l_posterior).
  if (alpha == Scalar(1)) return l_posterior;
  if (alpha == Scalar(0)) return l_prior;
  return alpha * l_posterior + (Scalar(1) - alpha) * l_prior;
}

/// softmax(alpha * l_posterior + (1 - alpha) * l_prior).
template <typename A, typename B>
Vector<typename A::Scalar> fuse(const Eigen::MatrixBase<A>& l_prior,
                                const Eigen::MatrixBase<B>& l_posterior,
                                typename A::Scalar alpha) {
  return softmax(fused_logits(l_prior, l_posterior, alpha));
}

/// Confidence, divergence and fusion weight for one decoding step.
template <typename A, typename B>
FusionDiagnostics<typename A::Scalar> diagnose(const Eigen::MatrixBase<A>& l_prior,
                                               const Eigen::MatrixBase<B>& l_posterior,
                                               const FusionParams<typename A::Scalar>& params) {
  using Scalar = typename A::Scalar;
  detail::require_same_size(l_prior, l_posterior, "diagnose");
  const Vector<Scalar> p_prior = softmax(l_prior);
  const Vector<Scalar> p_posterior = softmax(l_posterior);

  FusionDiagnostics<Scalar> d;
  d.p_max_prior = max_prob(p_prior);
  d.p_max_posterior = max_prob(p_posterior);
  d.entropy_prior = detail::entropy_bits_unchecked(p_prior);
  d.entropy_posterior = detail::entropy_bits_unchecked(p_posterior);
  d.c_prior = confidence(p_prior, params.eta);
  d.c_posterior = confidence(p_posterior, params.eta);
  d.jsd = jsd_base2(p_prior, p_posterior);
  d.delta = compute_delta(d.jsd, params.gamma);
  d.alpha = compute_alpha(ConfidencePair<Scalar>{d.c_prior, d.c_posterior}, d.delta);
  return d;
}

/// Cosine similarity; 0 when either vector is zero.
template <typename A, typename B>
typename A::Scalar cosine(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using Scalar = typename A::Scalar;
  detail::require_same_size(a, b, "cosine");
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na == Scalar(0) || nb == Scalar(0)) return Scalar(0);
  return a.dot(b) / (na * nb);
}

}  // namespace collab
