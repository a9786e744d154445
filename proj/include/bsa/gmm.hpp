#pragma once

// Regularized online EM for unit-variance Gaussian mixtures.
//
// Parameters theta = (omega_1..omega_{M-1}, mu_1..mu_M), omega_M = 1 - sum omega.
// Sufficient statistics s = (s1, s2, s3) in R^{M-1} x R^{M-1} x R.
// The SA runs on s:  s' = s - gamma (s - sbar(Y; mstep(s))).

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "bsa/errors.hpp"
#include "bsa/random.hpp"
#include "bsa/sa_core.hpp"

namespace bsa::gmm {

template <typename Scalar = double>
struct GmmParams {
  Vec<Scalar> omega;  // M-1
  Vec<Scalar> mu;     // M

  Eigen::Index M() const { return mu.size(); }
  Scalar omega_last() const { return Scalar(1) - omega.sum(); }

  Vec<Scalar> weights() const {
    Vec<Scalar> w(M());
    w.head(M() - 1) = omega;
    w(M() - 1) = omega_last();
    return w;
  }

  void validate() const {
    if (mu.size() < 2) throw std::invalid_argument("mixture needs M >= 2 components");
    if (omega.size() != mu.size() - 1) throw std::invalid_argument("omega must have M-1 entries");
    if (!omega.allFinite() || !mu.allFinite()) throw std::invalid_argument("non-finite mixture parameters");
    if ((omega.array() <= Scalar(0)).any() || !(omega_last() > Scalar(0)))
      throw std::invalid_argument("mixture weights must lie in the open simplex");
  }

  Vec<Scalar> flatten() const {
    Vec<Scalar> v(2 * M() - 1);
    v << omega, mu;
    return v;
  }

  static GmmParams unflatten(const Vec<Scalar>& v, Eigen::Index M) {
    if (v.size() != 2 * M - 1) throw std::invalid_argument("flat parameter has wrong size");
    return GmmParams{v.head(M - 1), v.tail(M)};
  }
};

template <typename Scalar = double>
struct GmmSuffStats {
  Vec<Scalar> s1;  // M-1
  Vec<Scalar> s2;  // M-1
  Scalar s3 = 0;

  Eigen::Index M() const { return s1.size() + 1; }

  static GmmSuffStats zero(Eigen::Index M) {
    if (M < 2) throw std::invalid_argument("mixture needs M >= 2 components");
    return GmmSuffStats{Vec<Scalar>::Zero(M - 1), Vec<Scalar>::Zero(M - 1), Scalar(0)};
  }

  Vec<Scalar> flatten() const {
    Vec<Scalar> v(2 * s1.size() + 1);
    v << s1, s2, s3;
    return v;
  }

  static GmmSuffStats unflatten(const Vec<Scalar>& v) {
    if (v.size() < 3 || v.size() % 2 == 0) throw std::invalid_argument("flat statistic must have odd size 2M-1");
    const Eigen::Index k = (v.size() - 1) / 2;
    return GmmSuffStats{v.head(k), v.segment(k, k), v(2 * k)};
  }

  /// Membership in Delta_{M-1} x [-Ybar, Ybar]^M, with a relative slack for rounding.
  bool in_compact_set(Scalar ybar, Scalar slack = Scalar(1e-12)) const {
    if ((s1.array() < -slack).any() || s1.sum() > Scalar(1) + slack) return false;
    const Scalar bound = ybar * (Scalar(1) + slack) + slack;
    using std::abs;
    return (s2.array().abs() <= bound).all() && abs(s3) <= bound;
  }

  /// The subset reachable by ro-EM from s = 0 with steps in (0, 1]: every
  /// E-step output has |s2_m| <= Ybar s1_m and |s3 - sum s2| <= Ybar (1 - sum s1),
  /// and the set is convex and contains 0.
  bool in_reachable_set(Scalar ybar, Scalar slack = Scalar(1e-12)) const {
    if (!in_compact_set(ybar, slack)) return false;
    using std::abs;
    if ((s2.array().abs() > ybar * s1.array() + slack).any()) return false;
    return abs(s3 - s2.sum()) <= ybar * (Scalar(1) - s1.sum()) + slack;
  }
};

/// Finite-support observation law: Y = support(k) with probability probs(k).
template <typename Scalar = double>
class DiscreteDataDist {
 public:
  DiscreteDataDist(Vec<Scalar> support, Vec<Scalar> probs, Scalar ybar)
      : support_(std::move(support)), probs_(std::move(probs)), ybar_(ybar) {
    if (support_.size() == 0 || support_.size() != probs_.size())
      throw std::invalid_argument("support and probabilities must be non-empty and of equal length");
    if (!support_.allFinite() || !probs_.allFinite()) throw std::invalid_argument("non-finite data distribution");
    if ((probs_.array() < Scalar(0)).any()) throw std::invalid_argument("negative probability");
    using std::abs;
    if (abs(probs_.sum() - Scalar(1)) > Scalar(1e-12)) throw std::invalid_argument("probabilities must sum to 1");
    if (!(ybar_ > Scalar(0)) || support_.cwiseAbs().maxCoeff() > ybar_)
      throw std::invalid_argument("support exceeds the bound Ybar");
    cdf_.resize(probs_.size());
    Scalar acc = 0;
    for (Eigen::Index k = 0; k < probs_.size(); ++k) cdf_(k) = acc += probs_(k);
  }

  /// Uses the max |y| as the bound.
  DiscreteDataDist(Vec<Scalar> support, Vec<Scalar> probs)
      : DiscreteDataDist(support, probs, std::max(support.cwiseAbs().maxCoeff(), Scalar(1e-300))) {}

  const Vec<Scalar>& support() const noexcept { return support_; }
  const Vec<Scalar>& probs() const noexcept { return probs_; }
  Scalar ybar() const noexcept { return ybar_; }
  Eigen::Index size() const noexcept { return support_.size(); }

  Scalar sample(Rng& rng) const {
    const double u = rng.uniform01() * static_cast<double>(cdf_(cdf_.size() - 1));
    for (Eigen::Index k = 0; k < cdf_.size(); ++k)
      if (u < static_cast<double>(cdf_(k))) return support_(k);
    for (Eigen::Index k = cdf_.size() - 1; k > 0; --k)
      if (probs_(k) > 0) return support_(k);
    return support_(0);
  }

 private:
  Vec<Scalar> support_;
  Vec<Scalar> probs_;
  Scalar ybar_;
  Vec<Scalar> cdf_;
};

/// Posterior membership probabilities of y under theta (length M).
template <typename Scalar>
Vec<Scalar> e_step_weights(Scalar y, const GmmParams<Scalar>& params) {
  params.validate();
  using std::exp;
  using std::log;
  const Vec<Scalar> w = params.weights();
  Vec<Scalar> logits(params.M());
  for (Eigen::Index m = 0; m < params.M(); ++m) {
    const Scalar r = y - params.mu(m);
    logits(m) = log(w(m)) - r * r / Scalar(2);
  }
  const Scalar top = logits.maxCoeff();
  Vec<Scalar> out = (logits.array() - top).exp().matrix();
  return out / out.sum();
}

template <typename Scalar>
GmmSuffStats<Scalar> e_step(Scalar y, const GmmParams<Scalar>& params) {
  const Vec<Scalar> w = e_step_weights(y, params);
  const Eigen::Index k = params.M() - 1;
  return GmmSuffStats<Scalar>{w.head(k), y * w.head(k), y};
}

template <typename Scalar>
GmmParams<Scalar> m_step(const GmmSuffStats<Scalar>& s, Scalar eps) {
  if (!(eps > Scalar(0))) throw std::invalid_argument("regularization eps must be positive");
  if (s.s1.size() < 1 || s.s2.size() != s.s1.size())
    throw std::invalid_argument("sufficient statistic blocks have inconsistent sizes");
  if ((s.s1.array() < Scalar(0)).any()) throw std::invalid_argument("s1 must be non-negative");
  const Eigen::Index M = s.M();
  const Scalar c_last = Scalar(1) - s.s1.sum() + eps;
  if (!(c_last > Scalar(0))) throw std::invalid_argument("s1 sums beyond 1 + eps");
  GmmParams<Scalar> p;
  p.omega = (s.s1.array() + eps) / (Scalar(1) + eps * static_cast<Scalar>(M));
  p.mu.resize(M);
  p.mu.head(M - 1) = s.s2.array() / (s.s1.array() + eps);
  p.mu(M - 1) = (s.s3 - s.s2.sum()) / c_last;
  return p;
}

/// One ro-EM update from (s, theta = mstep(s)) with observation y.
template <typename Scalar>
std::pair<GmmSuffStats<Scalar>, GmmParams<Scalar>> roem_step(const GmmSuffStats<Scalar>& s,
                                                             const GmmParams<Scalar>& theta, Scalar y,
                                                             Scalar gamma, Scalar eps) {
  if (!(gamma > Scalar(0)) || gamma > Scalar(1)) throw std::invalid_argument("ro-EM step must lie in (0, 1]");
  const GmmSuffStats<Scalar> sbar = e_step(y, theta);
  GmmSuffStats<Scalar> next{s.s1 + gamma * (sbar.s1 - s.s1), s.s2 + gamma * (sbar.s2 - s.s2),
                            s.s3 + gamma * (sbar.s3 - s.s3)};
  if (gamma == Scalar(1)) next = sbar;
  GmmParams<Scalar> p = m_step(next, eps);
  return {std::move(next), std::move(p)};
}

/// E_pi[sbar(Y; theta)] as a flat vector.
template <typename Scalar>
Vec<Scalar> expected_statistic(const GmmParams<Scalar>& theta, const DiscreteDataDist<Scalar>& dist) {
  Vec<Scalar> acc = Vec<Scalar>::Zero(2 * theta.M() - 1);
  for (Eigen::Index k = 0; k < dist.size(); ++k)
    acc += dist.probs()(k) * e_step(dist.support()(k), theta).flatten();
  return acc;
}

/// h(s) = s - E_pi[sbar(Y; mstep(s))].
template <typename Scalar>
Vec<Scalar> mean_field(const GmmSuffStats<Scalar>& s, const DiscreteDataDist<Scalar>& dist, Scalar eps) {
  return s.flatten() - expected_statistic(m_step(s, eps), dist);
}

/// E_pi || sbar(Y; theta) - E sbar ||^2.
template <typename Scalar>
Scalar conditional_variance(const GmmParams<Scalar>& theta, const DiscreteDataDist<Scalar>& dist) {
  const Vec<Scalar> mean = expected_statistic(theta, dist);
  Scalar v = 0;
  for (Eigen::Index k = 0; k < dist.size(); ++k)
    v += dist.probs()(k) * (e_step(dist.support()(k), theta).flatten() - mean).squaredNorm();
  return v;
}

/// log of the normalized mixture density (includes the 1/sqrt(2 pi) factor).
template <typename Scalar>
Scalar log_density(Scalar y, const GmmParams<Scalar>& theta) {
  using std::exp;
  using std::log;
  const Vec<Scalar> w = theta.weights();
  Vec<Scalar> terms(theta.M());
  for (Eigen::Index m = 0; m < theta.M(); ++m) {
    const Scalar r = y - theta.mu(m);
    terms(m) = log(w(m)) - r * r / Scalar(2);
  }
  const Scalar top = terms.maxCoeff();
  return top + log((terms.array() - top).exp().sum()) - Scalar(0.5) * log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

/// eps * sum_{m<=M} (mu_m^2 / 2 - log omega_m), with omega_M = 1 - sum omega.
/// A single log omega_M term: this is the penalty whose minimizer is the
/// closed-form M-step below (normalizer 1 + eps M).
template <typename Scalar>
Scalar regularizer(const GmmParams<Scalar>& theta, Scalar eps) {
  using std::log;
  return eps * (theta.mu.squaredNorm() / Scalar(2) - theta.weights().array().log().sum());
}

/// Cross-entropy plus penalty, E_pi[-log g(Y; theta)] + R(theta).
template <typename Scalar>
Scalar kl_objective(const GmmParams<Scalar>& theta, const DiscreteDataDist<Scalar>& dist, Scalar eps) {
  Scalar v = 0;
  for (Eigen::Index k = 0; k < dist.size(); ++k) v -= dist.probs()(k) * log_density(dist.support()(k), theta);
  return v + regularizer(theta, eps);
}

/// V(s) up to the s-independent entropy of pi.
template <typename Scalar>
Scalar lyapunov(const GmmSuffStats<Scalar>& s, const DiscreteDataDist<Scalar>& dist, Scalar eps) {
  return kl_objective(m_step(s, eps), dist, eps);
}

/// Penalized M-step objective l(s; theta) + R(theta) in exponential-family form,
/// dropping terms constant in theta.
template <typename Scalar>
Scalar penalized_objective(const GmmSuffStats<Scalar>& s, const GmmParams<Scalar>& theta, Scalar eps) {
  using std::log;
  const Eigen::Index k = theta.M() - 1;
  const Scalar c_last = Scalar(1) - s.s1.sum() + eps;
  const Scalar mu_last = theta.mu(k);
  Scalar v = -c_last * log(theta.omega_last()) + c_last * mu_last * mu_last / Scalar(2) -
             (s.s3 - s.s2.sum()) * mu_last;
  for (Eigen::Index m = 0; m < k; ++m) {
    const Scalar a = s.s1(m) + eps;
    v += -a * log(theta.omega(m)) + a * theta.mu(m) * theta.mu(m) / Scalar(2) - s.s2(m) * theta.mu(m);
  }
  return v;
}

/// Jacobian of the natural parameter phi(theta), rows phi = (phi1, phi2, phi3),
/// columns theta = (omega, mu_{1..M-1}, mu_M). phi2_m = mu_m - mu_M.
template <typename Scalar>
Mat<Scalar> natural_parameter_jacobian(const GmmParams<Scalar>& theta) {
  const Eigen::Index k = theta.M() - 1;
  const Eigen::Index D = 2 * k + 1;
  Mat<Scalar> j = Mat<Scalar>::Zero(D, D);
  j.topLeftCorner(k, k).setConstant(Scalar(1) / theta.omega_last());
  j.topLeftCorner(k, k).diagonal().array() += theta.omega.array().inverse();
  j.block(0, k, k, k).diagonal() = -theta.mu.head(k);
  j.block(0, 2 * k, k, 1).setConstant(theta.mu(k));
  j.block(k, k, k, k).setIdentity();
  j.block(k, 2 * k, k, 1).setConstant(Scalar(-1));
  j(2 * k, 2 * k) = Scalar(1);
  return j;
}

/// Outer-product factor J_phi H^{-1/2} with grad V(s) = F F^T h(s).
template <typename Scalar>
Mat<Scalar> lyapunov_factor(const GmmSuffStats<Scalar>& s, Scalar eps) {
  const GmmParams<Scalar> theta = m_step(s, eps);
  const Eigen::Index k = theta.M() - 1;
  const Eigen::Index D = 2 * k + 1;
  const Scalar c_last = Scalar(1) - s.s1.sum() + eps;
  const Vec<Scalar> a = s.s1.array() + eps;

  Mat<Scalar> h11 = Mat<Scalar>::Constant(k, k, c_last / (theta.omega_last() * theta.omega_last()));
  h11.diagonal().array() += a.array() / theta.omega.array().square();
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(h11);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > Scalar(0)) || !(c_last > Scalar(0)))
    throw NumericalFailure("M-step Hessian is singular");

  Mat<Scalar> h_inv_sqrt = Mat<Scalar>::Zero(D, D);
  h_inv_sqrt.topLeftCorner(k, k) = es.operatorInverseSqrt();
  h_inv_sqrt.block(k, k, k, k).diagonal() = a.array().rsqrt();
  using std::sqrt;
  h_inv_sqrt(2 * k, 2 * k) = Scalar(1) / sqrt(c_last);
  return natural_parameter_jacobian(theta) * h_inv_sqrt;
}

template <typename Scalar>
Vec<Scalar> grad_lyapunov(const GmmSuffStats<Scalar>& s, const DiscreteDataDist<Scalar>& dist, Scalar eps) {
  const Mat<Scalar> f = lyapunov_factor(s, eps);
  const Vec<Scalar> h = mean_field(s, dist, eps);
  return f * (f.transpose() * h);
}

/// Random point of Delta_{M-1} x [-Ybar, Ybar]^M; s1 uniform on the simplex.
template <typename Scalar = double>
GmmSuffStats<Scalar> sample_suff_stats(Eigen::Index M, Scalar ybar, Rng& rng) {
  if (M < 2) throw std::invalid_argument("mixture needs M >= 2 components");
  using std::log;
  Vec<Scalar> e(M);
  for (Eigen::Index m = 0; m < M; ++m) e(m) = -log(Scalar(1) - Scalar(rng.uniform01()));
  e /= e.sum();
  GmmSuffStats<Scalar> s = GmmSuffStats<Scalar>::zero(M);
  s.s1 = e.head(M - 1);
  for (Eigen::Index m = 0; m < M - 1; ++m) s.s2(m) = Scalar(rng.uniform(-1.0, 1.0)) * ybar;
  s.s3 = Scalar(rng.uniform(-1.0, 1.0)) * ybar;
  return s;
}

/// Random point of the reachable subset (see GmmSuffStats::in_reachable_set).
template <typename Scalar = double>
GmmSuffStats<Scalar> sample_reachable_suff_stats(Eigen::Index M, Scalar ybar, Rng& rng) {
  if (M < 2) throw std::invalid_argument("mixture needs M >= 2 components");
  using std::log;
  Vec<Scalar> e(M);
  for (Eigen::Index m = 0; m < M; ++m) e(m) = -log(Scalar(1) - Scalar(rng.uniform01()));
  e /= e.sum();
  GmmSuffStats<Scalar> s = GmmSuffStats<Scalar>::zero(M);
  s.s1 = e.head(M - 1);
  for (Eigen::Index m = 0; m < M - 1; ++m) s.s2(m) = Scalar(rng.uniform(-1.0, 1.0)) * ybar * s.s1(m);
  s.s3 = s.s2.sum() + Scalar(rng.uniform(-1.0, 1.0)) * ybar * e(M - 1);
  return s;
}

template <typename Scalar = double>
struct FixedPoint {
  GmmSuffStats<Scalar> s;
  Scalar residual = 0;  // ||h(s)||
  std::size_t iterations = 0;
};

/// Root of h by the batch EM map s <- E_pi[sbar(Y; mstep(s))].
template <typename Scalar>
FixedPoint<Scalar> find_fixed_point(const GmmSuffStats<Scalar>& start, const DiscreteDataDist<Scalar>& dist,
                                    Scalar eps, Scalar tol = Scalar(1e-12), std::size_t max_iter = 1000000) {
  FixedPoint<Scalar> fp{start, std::numeric_limits<Scalar>::infinity(), 0};
  Vec<Scalar> s = start.flatten();
  for (; fp.iterations < max_iter; ++fp.iterations) {
    const Vec<Scalar> next = expected_statistic(m_step(GmmSuffStats<Scalar>::unflatten(s), eps), dist);
    fp.residual = (s - next).norm();
    s = next;
    if (fp.residual <= tol) break;
  }
  fp.s = GmmSuffStats<Scalar>::unflatten(s);
  fp.residual = mean_field(fp.s, dist, eps).norm();
  return fp;
}

/// ro-EM on the flattened statistic as an sa_core drift source. The
/// observation stream is i.i.d. from the discrete law.
template <typename Scalar = double>
class RoemSource {
 public:
  RoemSource(DiscreteDataDist<Scalar> dist, Scalar eps) : dist_(std::move(dist)), eps_(eps) {
    if (!(eps > Scalar(0))) throw std::invalid_argument("regularization eps must be positive");
  }

  Vec<Scalar> next_drift(const Vec<Scalar>& s_flat, Rng& rng) const {
    const GmmSuffStats<Scalar> s = GmmSuffStats<Scalar>::unflatten(s_flat);
    const Scalar y = dist_.sample(rng);
    return s_flat - e_step(y, m_step(s, eps_)).flatten();
  }

  Vec<Scalar> exact_mean_field(const Vec<Scalar>& s_flat) const {
    return mean_field(GmmSuffStats<Scalar>::unflatten(s_flat), dist_, eps_);
  }

  Scalar lyapunov_value(const Vec<Scalar>& s_flat) const {
    return lyapunov(GmmSuffStats<Scalar>::unflatten(s_flat), dist_, eps_);
  }

  const DiscreteDataDist<Scalar>& dist() const noexcept { return dist_; }
  Scalar eps() const noexcept { return eps_; }

 private:
  DiscreteDataDist<Scalar> dist_;
  Scalar eps_;
};

}  // namespace bsa::gmm
