#pragma once

// Average-reward policy gradient on finite MDPs with a soft-max policy.
// Joint state-action index: x = s * nA + a.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bsa/errors.hpp"
#include "bsa/markov.hpp"
#include "bsa/random.hpp"
#include "bsa/sa_core.hpp"

namespace bsa::pg {

template <typename Scalar = double>
class TabularMdp {
 public:
  /// trans[a](s, s') = P^a_{s,s'}; reward(s, a) in [0, r_max].
  TabularMdp(std::vector<Mat<Scalar>> trans, Mat<Scalar> reward, std::optional<Scalar> r_max = std::nullopt)
      : trans_(std::move(trans)), reward_(std::move(reward)) {
    if (trans_.empty()) throw std::invalid_argument("MDP needs at least one action");
    const Eigen::Index ns = trans_.front().rows();
    if (ns == 0) throw std::invalid_argument("MDP needs at least one state");
    const Scalar tol = detail::stochastic_tolerance<Scalar>();
    for (std::size_t a = 0; a < trans_.size(); ++a) {
      const auto& p = trans_[a];
      if (p.rows() != ns || p.cols() != ns) throw std::invalid_argument("transition matrices must be nS x nS");
      if (!p.allFinite() || (p.array() < Scalar(0)).any())
        throw std::invalid_argument("transition probabilities must be finite and non-negative");
      for (Eigen::Index s = 0; s < ns; ++s) {
        using std::abs;
        if (abs(p.row(s).sum() - Scalar(1)) > tol)
          throw std::invalid_argument("transition row (a=" + std::to_string(a) + ", s=" + std::to_string(s) +
                                      ") does not sum to 1");
      }
    }
    if (reward_.rows() != ns || reward_.cols() != static_cast<Eigen::Index>(trans_.size()))
      throw std::invalid_argument("reward table must be nS x nA");
    if (!reward_.allFinite() || (reward_.array() < Scalar(0)).any())
      throw std::invalid_argument("rewards must be finite and non-negative");
    r_max_ = r_max ? *r_max : reward_.maxCoeff();
    if (reward_.maxCoeff() > r_max_) throw std::invalid_argument("reward exceeds R_max");
  }

  Eigen::Index num_states() const noexcept { return trans_.front().rows(); }
  Eigen::Index num_actions() const noexcept { return static_cast<Eigen::Index>(trans_.size()); }
  Eigen::Index joint_size() const noexcept { return num_states() * num_actions(); }
  const Mat<Scalar>& transition(Eigen::Index a) const { return trans_.at(static_cast<std::size_t>(a)); }
  const Mat<Scalar>& reward() const noexcept { return reward_; }
  Scalar reward(Eigen::Index s, Eigen::Index a) const { return reward_(s, a); }
  Scalar r_max() const noexcept { return r_max_; }

  /// r(x) = R(s, a) over the joint index.
  Vec<Scalar> reward_vector() const {
    Vec<Scalar> r(joint_size());
    for (Eigen::Index s = 0; s < num_states(); ++s)
      for (Eigen::Index a = 0; a < num_actions(); ++a) r(s * num_actions() + a) = reward_(s, a);
    return r;
  }

 private:
  std::vector<Mat<Scalar>> trans_;
  Mat<Scalar> reward_;
  Scalar r_max_ = 0;
};

/// Pi_theta(a; s) proportional to exp <theta, x(s, a)>.
template <typename Scalar = double>
class SoftmaxPolicy {
 public:
  /// features row s * nA + a holds x(s, a).
  SoftmaxPolicy(Mat<Scalar> features, Eigen::Index num_actions, Vec<Scalar> theta)
      : features_(std::move(features)), n_actions_(num_actions), theta_(std::move(theta)) {
    if (n_actions_ < 1 || features_.rows() == 0 || features_.rows() % n_actions_ != 0)
      throw std::invalid_argument("feature table must have nS * nA rows");
    if (theta_.size() != features_.cols()) throw std::invalid_argument("theta dimension must match features");
    if (!features_.allFinite()) throw std::invalid_argument("non-finite features");
    bbar_ = features_.rowwise().norm().maxCoeff();
  }

  SoftmaxPolicy(Mat<Scalar> features, Eigen::Index num_actions)
      : SoftmaxPolicy(features, num_actions, Vec<Scalar>::Zero(features.cols())) {}

  Eigen::Index dim() const noexcept { return features_.cols(); }
  Eigen::Index num_actions() const noexcept { return n_actions_; }
  Eigen::Index num_states() const noexcept { return features_.rows() / n_actions_; }
  Scalar bbar() const noexcept { return bbar_; }
  const Vec<Scalar>& theta() const noexcept { return theta_; }
  const Mat<Scalar>& features() const noexcept { return features_; }

  void set_theta(const Vec<Scalar>& theta) {
    if (theta.size() != dim()) throw std::invalid_argument("theta dimension must match features");
    theta_ = theta;
  }

  SoftmaxPolicy with_theta(const Vec<Scalar>& theta) const {
    SoftmaxPolicy p = *this;
    p.set_theta(theta);
    return p;
  }

  auto feature(Eigen::Index s, Eigen::Index a) const { return features_.row(s * n_actions_ + a); }

  Vec<Scalar> probs(Eigen::Index s) const {
    check_state(s);
    const Vec<Scalar> logits = features_.middleRows(s * n_actions_, n_actions_) * theta_;
    const Vec<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return e / e.sum();
  }

  Vec<Scalar> log_probs(Eigen::Index s) const {
    check_state(s);
    const Vec<Scalar> logits = features_.middleRows(s * n_actions_, n_actions_) * theta_;
    const Scalar top = logits.maxCoeff();
    using std::log;
    const Scalar lse = top + log((logits.array() - top).exp().sum());
    return (logits.array() - lse).matrix();
  }

  /// x(s, a) - sum_a' Pi(a'; s) x(s, a')
  Vec<Scalar> grad_log(Eigen::Index s, Eigen::Index a) const {
    const Vec<Scalar> p = probs(s);
    const Vec<Scalar> mean = features_.middleRows(s * n_actions_, n_actions_).transpose() * p;
    return Vec<Scalar>(feature(s, a).transpose()) - mean;
  }

  /// Row x is the score at joint index x.
  Mat<Scalar> score_matrix() const {
    Mat<Scalar> out(features_.rows(), dim());
    for (Eigen::Index s = 0; s < num_states(); ++s) {
      const Vec<Scalar> p = probs(s);
      const auto block = features_.middleRows(s * n_actions_, n_actions_);
      const Vec<Scalar> mean = block.transpose() * p;
      out.middleRows(s * n_actions_, n_actions_) = block.rowwise() - mean.transpose();
    }
    return out;
  }

 private:
  void check_state(Eigen::Index s) const {
    if (s < 0 || s >= num_states()) throw std::invalid_argument("state out of range");
  }

  Mat<Scalar> features_;
  Eigen::Index n_actions_;
  Vec<Scalar> theta_;
  Scalar bbar_ = 0;
};

template <typename Scalar>
Vec<Scalar> policy_probs(const SoftmaxPolicy<Scalar>& policy, Eigen::Index s) {
  return policy.probs(s);
}

template <typename Scalar>
Vec<Scalar> grad_log_policy(const SoftmaxPolicy<Scalar>& policy, Eigen::Index s, Eigen::Index a) {
  return policy.grad_log(s, a);
}

template <typename Scalar>
void check_compatible(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy) {
  if (mdp.num_states() != policy.num_states() || mdp.num_actions() != policy.num_actions())
    throw std::invalid_argument("policy features do not match the MDP dimensions");
}

/// Q((s,a), (s',a')) = Pi(a'; s') P^a_{s,s'}
template <typename Scalar>
FiniteKernel<Scalar> joint_kernel(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy) {
  check_compatible(mdp, policy);
  const Eigen::Index ns = mdp.num_states();
  const Eigen::Index na = mdp.num_actions();
  Mat<Scalar> pi(ns, na);
  for (Eigen::Index s = 0; s < ns; ++s) pi.row(s) = policy.probs(s).transpose();
  Mat<Scalar> q(ns * na, ns * na);
  for (Eigen::Index s = 0; s < ns; ++s)
    for (Eigen::Index a = 0; a < na; ++a)
      for (Eigen::Index s2 = 0; s2 < ns; ++s2)
        q.block(s * na + a, s2 * na, 1, na) = mdp.transition(a)(s, s2) * pi.row(s2);
  return FiniteKernel<Scalar>(std::move(q));
}

/// Quantities shared by the exact computations at one theta.
template <typename Scalar = double>
struct JointChain {
  FiniteKernel<Scalar> Q;
  Vec<Scalar> stationary;
  Mat<Scalar> Q_tilde;  // Q - 1 v^T
  Mat<Scalar> score;    // (nS nA) x d
  Vec<Scalar> r;
};

template <typename Scalar>
JointChain<Scalar> analyze(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy) {
  FiniteKernel<Scalar> q = joint_kernel(mdp, policy);
  require_ergodic(q);
  Vec<Scalar> v = stationary_distribution(q);
  const Eigen::Index m = q.size();
  Mat<Scalar> qt = q.matrix() - Vec<Scalar>::Ones(m) * v.transpose();
  return JointChain<Scalar>{std::move(q), std::move(v), std::move(qt), policy.score_matrix(), mdp.reward_vector()};
}

template <typename Scalar>
Scalar average_reward(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy) {
  const FiniteKernel<Scalar> q = joint_kernel(mdp, policy);
  require_ergodic(q);
  return stationary_distribution(q).dot(mdp.reward_vector());
}

/// score^T (v o (I - lambda Q_tilde)^{-1} r); lambda = 1 gives grad J.
template <typename Scalar>
Vec<Scalar> discounted_score_field(const JointChain<Scalar>& chain, Scalar lambda) {
  const Eigen::Index m = chain.Q.size();
  const Mat<Scalar> a = Mat<Scalar>::Identity(m, m) - lambda * chain.Q_tilde;
  const Vec<Scalar> u = a.partialPivLu().solve(chain.r);
  return chain.score.transpose() * chain.stationary.cwiseProduct(u);
}

template <typename Scalar>
void check_lambda(Scalar lambda) {
  if (!(lambda >= Scalar(0)) || !(lambda < Scalar(1))) throw std::invalid_argument("lambda must lie in [0, 1)");
}

/// h(theta): stationary mean of the lambda-discounted estimator.
template <typename Scalar>
Vec<Scalar> exact_mean_field(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy, Scalar lambda) {
  check_lambda(lambda);
  return discounted_score_field(analyze(mdp, policy), lambda);
}

template <typename Scalar>
Vec<Scalar> exact_grad_J(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy) {
  return discounted_score_field(analyze(mdp, policy), Scalar(1));
}

template <typename Scalar>
Scalar bias_gap(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy, Scalar lambda) {
  check_lambda(lambda);
  const JointChain<Scalar> chain = analyze(mdp, policy);
  return (discounted_score_field(chain, lambda) - discounted_score_field(chain, Scalar(1))).norm();
}

/// 2 bbar R_max K_R (1 - lambda) / (1 - rho)^2
template <typename Scalar>
Scalar bias_bound(Scalar bbar, Scalar r_max, const ErgodicityEstimate<Scalar>& erg, Scalar lambda) {
  const Scalar gap = Scalar(1) - erg.rho;
  return Scalar(2) * bbar * r_max * erg.K_R * (Scalar(1) - lambda) / (gap * gap);
}

/// Gamma = 2 bbar R_max K_R / (1 - rho)^2
template <typename Scalar>
Scalar bias_constant(Scalar bbar, Scalar r_max, const ErgodicityEstimate<Scalar>& erg) {
  const Scalar gap = Scalar(1) - erg.rho;
  return Scalar(2) * bbar * r_max * erg.K_R / (gap * gap);
}

template <typename Scalar = double>
struct PgState {
  Eigen::Index s = 0;
  Eigen::Index a = 0;
  Vec<Scalar> G;
  Scalar lambda = 0;
};

namespace detail {

inline Eigen::Index draw_index(const auto& probs, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  Eigen::Index last = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = static_cast<double>(probs(i));
    if (p > 0.0) last = i;
    acc += p;
    if (u < acc) return i;
  }
  return last;
}

}  // namespace detail

/// One transition of the joint chain under Pi_theta followed by the trace and
/// parameter updates. Draw order: next state, then next action.
template <typename Scalar>
std::pair<PgState<Scalar>, Vec<Scalar>> pg_step(const PgState<Scalar>& state, const Vec<Scalar>& theta,
                                                const TabularMdp<Scalar>& mdp, SoftmaxPolicy<Scalar>& policy,
                                                Scalar gamma, Rng& rng) {
  if (!(gamma > Scalar(0))) throw std::invalid_argument("step size must be positive");
  check_lambda(state.lambda);
  policy.set_theta(theta);
  PgState<Scalar> next = state;
  next.s = detail::draw_index(mdp.transition(state.a).row(state.s), rng);
  next.a = detail::draw_index(policy.probs(next.s), rng);
  next.G = state.lambda * state.G + policy.grad_log(next.s, next.a);
  Vec<Scalar> theta_next = theta + gamma * next.G * mdp.reward(next.s, next.a);
  return {std::move(next), std::move(theta_next)};
}

/// Policy-gradient recursion as a descent-form drift source: the drift is
/// -G_{n+1} R(S_{n+1}, A_{n+1}), i.e. V = -J.
template <typename Scalar = double>
class PgSource {
 public:
  PgSource(TabularMdp<Scalar> mdp, SoftmaxPolicy<Scalar> policy, Scalar lambda,
           std::optional<std::pair<Eigen::Index, Eigen::Index>> fixed_start = std::nullopt)
      : mdp_(std::move(mdp)), policy_(std::move(policy)), fixed_start_(fixed_start) {
    check_lambda(lambda);
    check_compatible(mdp_, policy_);
    state_.lambda = lambda;
    state_.G = Vec<Scalar>::Zero(policy_.dim());
  }

  /// (S_0, A_0) from the stationary law of Q_theta0 unless a fixed start is set; G_0 = 0.
  void reset(const Vec<Scalar>& theta0, Rng& rng) {
    state_.G = Vec<Scalar>::Zero(policy_.dim());
    if (fixed_start_) {
      state_.s = fixed_start_->first;
      state_.a = fixed_start_->second;
      if (state_.s < 0 || state_.s >= mdp_.num_states() || state_.a < 0 || state_.a >= mdp_.num_actions())
        throw std::invalid_argument("fixed start out of range");
      return;
    }
    policy_.set_theta(theta0);
    const Vec<Scalar> v = stationary_distribution(joint_kernel(mdp_, policy_));
    const Eigen::Index x = detail::draw_index(v, rng);
    state_.s = x / mdp_.num_actions();
    state_.a = x % mdp_.num_actions();
  }

  Vec<Scalar> next_drift(const Vec<Scalar>& theta, Rng& rng) {
    policy_.set_theta(theta);
    state_.s = detail::draw_index(mdp_.transition(state_.a).row(state_.s), rng);
    state_.a = detail::draw_index(policy_.probs(state_.s), rng);
    state_.G = state_.lambda * state_.G + policy_.grad_log(state_.s, state_.a);
    return -state_.G * mdp_.reward(state_.s, state_.a);
  }

  Vec<Scalar> exact_mean_field(const Vec<Scalar>& theta) const {
    return -pg::exact_mean_field(mdp_, policy_.with_theta(theta), state_.lambda);
  }

  Vec<Scalar> grad_J(const Vec<Scalar>& theta) const { return exact_grad_J(mdp_, policy_.with_theta(theta)); }
  Scalar average_reward_at(const Vec<Scalar>& theta) const {
    return average_reward(mdp_, policy_.with_theta(theta));
  }

  const PgState<Scalar>& state() const noexcept { return state_; }
  const TabularMdp<Scalar>& mdp() const noexcept { return mdp_; }
  const SoftmaxPolicy<Scalar>& policy() const noexcept { return policy_; }
  Scalar lambda() const noexcept { return state_.lambda; }

 private:
  TabularMdp<Scalar> mdp_;
  SoftmaxPolicy<Scalar> policy_;
  std::optional<std::pair<Eigen::Index, Eigen::Index>> fixed_start_;
  PgState<Scalar> state_;
};

/// Poisson solution on the extended state (x, g):  H_hat(x, g) = g u(x) + w(x)
/// with u = (I - lambda Q)^{-1} r and w the centered solution of
/// w - Q w = Q(score o u) - h.
template <typename Scalar = double>
struct PgPoisson {
  Vec<Scalar> u;      // joint-size
  Mat<Scalar> w;      // joint-size x d
  Vec<Scalar> Qu;     // Q u
  Mat<Scalar> PHw;    // Q(score o u + w), the g-free part of P H_hat
  Vec<Scalar> h;
  Scalar g_max = 0;   // radius of the trace set, 2 bbar / (1 - lambda)
  Scalar residual = 0;

  /// sup over x and ||g|| <= g_max of max(||H_hat||, ||P H_hat||).
  Scalar l_ph0(Scalar lambda) const {
    Scalar best = 0;
    for (Eigen::Index x = 0; x < u.size(); ++x) {
      using std::abs;
      best = std::max(best, g_max * abs(u(x)) + w.row(x).norm());
      best = std::max(best, g_max * lambda * abs(Qu(x)) + PHw.row(x).norm());
    }
    return best;
  }
};

template <typename Scalar>
PgPoisson<Scalar> pg_poisson(const TabularMdp<Scalar>& mdp, const SoftmaxPolicy<Scalar>& policy, Scalar lambda) {
  check_lambda(lambda);
  const JointChain<Scalar> chain = analyze(mdp, policy);
  const Eigen::Index m = chain.Q.size();
  const Mat<Scalar>& q = chain.Q.matrix();
  PgPoisson<Scalar> out;
  out.u = (Mat<Scalar>::Identity(m, m) - lambda * q).partialPivLu().solve(chain.r);
  out.Qu = q * out.u;
  const Mat<Scalar> score_u = chain.score.array().colwise() * out.u.array();
  const Mat<Scalar> forcing = q * score_u;
  out.h = discounted_score_field(chain, lambda);
  const PoissonSolution<Scalar> sol = solve_poisson(chain.Q, forcing, out.h);
  out.w = sol.H_hat;
  out.residual = sol.residual;
  out.PHw = q * (score_u + out.w);
  out.g_max = Scalar(2) * policy.bbar() / (Scalar(1) - lambda);
  return out;
}

/// sup_{x, ||g|| <= g_max} || P_theta H_hat_theta - P_theta' H_hat_theta' || / ||theta - theta'||
template <typename Scalar>
Scalar pg_poisson_lipschitz_ratio(const PgPoisson<Scalar>& a, const PgPoisson<Scalar>& b, Scalar lambda,
                                  Scalar dtheta) {
  Scalar best = 0;
  for (Eigen::Index x = 0; x < a.u.size(); ++x) {
    using std::abs;
    best = std::max(best, a.g_max * lambda * abs(a.Qu(x) - b.Qu(x)) + (a.PHw.row(x) - b.PHw.row(x)).norm());
  }
  return best / dtheta;
}

/// sup ||H - h|| = g_max max r + ||h||
template <typename Scalar>
Scalar pg_drift_bound(const TabularMdp<Scalar>& mdp, const PgPoisson<Scalar>& p) {
  return p.g_max * mdp.reward().maxCoeff() + p.h.norm();
}

}  // namespace bsa::pg
