#pragma once

// Generic stochastic-approximation driver
//
//   theta_{k+1} = theta_k - gamma_{k+1} * H_{theta_k}(X_{k+1}),   k = 0..n,
//
// with the randomized terminating index N, P(N = l) proportional to
// gamma_{l+1}, used to turn a trajectory into a single-iterate guarantee.

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bsa/errors.hpp"
#include "bsa/random.hpp"

namespace bsa {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class ScheduleKind { Constant, InverseSqrt };

/// Outcome of checking gamma_{k+1} <= gamma_k, gamma_k <= a gamma_{k+1} and
/// gamma_k - gamma_{k+1} <= a' gamma_k^2 over k = 1..k_max.
struct ScheduleCertificate {
  bool monotone = true;
  bool ratio = true;
  bool decrement = true;
  std::size_t first_violation = 0;  // 0 when all clauses hold

  bool ok() const noexcept { return monotone && ratio && decrement; }
};

template <typename Scalar = double>
class StepSizeSchedule {
 public:
  static StepSizeSchedule constant(Scalar c) { return StepSizeSchedule(ScheduleKind::Constant, c); }
  static StepSizeSchedule inverse_sqrt(Scalar c) {
    return StepSizeSchedule(ScheduleKind::InverseSqrt, c);
  }

  ScheduleKind kind() const noexcept { return kind_; }
  Scalar scale() const noexcept { return c_; }

  /// gamma_k for k >= 1.
  Scalar gamma(std::size_t k) const {
    if (k == 0) throw std::invalid_argument("step sizes are indexed from k = 1");
    if (kind_ == ScheduleKind::Constant) return c_;
    using std::sqrt;
    return c_ / sqrt(static_cast<Scalar>(k));
  }

  /// Ratio constant a with gamma_k <= a * gamma_{k+1}.
  Scalar ratio_bound() const {
    using std::sqrt;
    return kind_ == ScheduleKind::Constant ? Scalar(1) : sqrt(Scalar(2));
  }

  /// Decrement constant a' with gamma_k - gamma_{k+1} <= a' gamma_k^2 (tight at k = 1).
  Scalar decrement_bound() const {
    using std::sqrt;
    if (kind_ == ScheduleKind::Constant) return Scalar(0);
    const Scalar r2 = sqrt(Scalar(2));
    return (r2 - Scalar(1)) / (r2 * c_);
  }

  /// sum_{k=0}^{n} gamma_{k+1}
  Scalar sum(std::size_t n) const {
    Scalar s(0);
    for (std::size_t k = 1; k <= n + 1; ++k) s += gamma(k);
    return s;
  }

  /// sum_{k=0}^{n} gamma_{k+1}^2
  Scalar sum_sq(std::size_t n) const {
    Scalar s(0);
    for (std::size_t k = 1; k <= n + 1; ++k) {
      const Scalar g = gamma(k);
      s += g * g;
    }
    return s;
  }

  ScheduleCertificate certify(std::size_t k_max) const {
    ScheduleCertificate cert;
    const Scalar a = ratio_bound();
    const Scalar ap = decrement_bound();
    // Both ratio and decrement clauses are tight at k = 1; allow a few ulps.
    const Scalar tol = Scalar(16) * std::numeric_limits<Scalar>::epsilon();
    for (std::size_t k = 1; k <= k_max; ++k) {
      const Scalar gk = gamma(k);
      const Scalar gk1 = gamma(k + 1);
      bool bad = false;
      if (gk1 > gk) cert.monotone = false, bad = true;
      if (gk > a * gk1 * (Scalar(1) + tol)) cert.ratio = false, bad = true;
      if (gk - gk1 > ap * gk * gk * (Scalar(1) + tol) + tol * gk) cert.decrement = false, bad = true;
      if (bad && cert.first_violation == 0) cert.first_violation = k;
    }
    return cert;
  }

 private:
  StepSizeSchedule(ScheduleKind kind, Scalar c) : kind_(kind), c_(c) {
    if (!(c > Scalar(0)) || !std::isfinite(static_cast<double>(c)))
      throw std::invalid_argument("step-size scale must be positive and finite");
  }

  ScheduleKind kind_;
  Scalar c_;
};

/// P(N = l) = gamma_{l+1} / sum_{k=0}^{n} gamma_{k+1}, l = 0..n.
template <typename Scalar>
Vec<Scalar> stopping_distribution(const StepSizeSchedule<Scalar>& schedule, std::size_t n) {
  Vec<Scalar> p(static_cast<Eigen::Index>(n + 1));
  for (std::size_t l = 0; l <= n; ++l) p(static_cast<Eigen::Index>(l)) = schedule.gamma(l + 1);
  return p / p.sum();
}

/// Draws N by inverting the cumulative weights; consumes exactly one uniform.
template <typename Scalar>
std::size_t sample_stopping_index(const StepSizeSchedule<Scalar>& schedule, std::size_t n, Rng& rng) {
  const double u = rng.uniform01();
  if (n == 0) return 0;
  const double target = u * static_cast<double>(schedule.sum(n));
  double acc = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    acc += static_cast<double>(schedule.gamma(l + 1));
    if (target < acc) return l;
  }
  return n;
}

/// Exact E over N of per-iterate values v_0..v_n (no sampling of N).
template <typename Scalar, typename Derived>
Scalar expected_stopped_value(const StepSizeSchedule<Scalar>& schedule,
                              const Eigen::MatrixBase<Derived>& values) {
  if (values.size() == 0) throw std::invalid_argument("need at least one value");
  const auto n = static_cast<std::size_t>(values.size() - 1);
  return stopping_distribution(schedule, n).dot(values.template cast<Scalar>());
}

/// expected_stopped_value of the prefix v_0..v_n for every n in the grid, from a
/// single pass. A run to n_max contains the runs to every shorter horizon
/// because the schedule does not depend on n.
template <typename Scalar, typename Derived>
std::vector<Scalar> prefix_stopped_values(const StepSizeSchedule<Scalar>& schedule,
                                          const Eigen::MatrixBase<Derived>& values,
                                          const std::vector<std::size_t>& grid) {
  std::vector<Scalar> out;
  out.reserve(grid.size());
  Scalar num(0), den(0);
  std::size_t next = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (g > 0 && grid[g] <= grid[g - 1]) throw std::invalid_argument("grid must be strictly increasing");
    if (grid[g] >= static_cast<std::size_t>(values.size())) throw std::invalid_argument("grid exceeds trace length");
    for (; next <= grid[g]; ++next) {
      const Scalar w = schedule.gamma(next + 1);
      num += w * static_cast<Scalar>(values(static_cast<Eigen::Index>(next)));
      den += w;
    }
    out.push_back(num / den);
  }
  return out;
}

/// Every drift source supplies next_drift(theta, rng); the result must be a
/// deterministic function of theta, the rng state and the source's own state.
template <typename S, typename Scalar>
concept DriftSource = requires(S& source, const Vec<Scalar>& theta, Rng& rng) {
  { source.next_drift(theta, rng) } -> std::convertible_to<Vec<Scalar>>;
};

template <typename S, typename Scalar>
concept HasExactMeanField = requires(const S& source, const Vec<Scalar>& theta) {
  { source.exact_mean_field(theta) } -> std::convertible_to<Vec<Scalar>>;
};

/// Stateful sources (Markov noise) reinitialize their state at the start of a run.
template <typename S, typename Scalar>
concept Resettable = requires(S& source, const Vec<Scalar>& theta, Rng& rng) {
  source.reset(theta, rng);
};

template <typename Scalar = double>
struct SaTrace {
  Mat<Scalar> iterates;  // d x (n+2): theta_0 .. theta_{n+1}
  Mat<Scalar> drifts;    // d x (n+1): H_{theta_k}(X_{k+1})
  std::optional<Vec<Scalar>> mean_field_sq_norms;  // ||h(theta_k)||^2, k = 0..n
  StepSizeSchedule<Scalar> schedule;
  std::uint64_t seed = 0;

  std::size_t steps() const { return static_cast<std::size_t>(drifts.cols()) - 1; }
  auto theta(std::size_t k) const { return iterates.col(static_cast<Eigen::Index>(k)); }
};

/// Runs n+1 updates (k = 0..n) of the recursion. gamma_{k+1} is used at step k.
/// Throws NonFiniteIterate carrying the index of the first bad iterate.
template <typename Scalar, typename Source>
  requires DriftSource<Source, Scalar>
SaTrace<Scalar> run_sa(Source& source, const StepSizeSchedule<Scalar>& schedule, std::size_t n,
                       const Vec<Scalar>& theta0, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("run_sa needs n >= 1");
  if (theta0.size() == 0) throw std::invalid_argument("empty initial parameter");
  const Eigen::Index d = theta0.size();
  const auto cols = static_cast<Eigen::Index>(n + 1);

  SaTrace<Scalar> trace{Mat<Scalar>(d, cols + 1), Mat<Scalar>(d, cols), std::nullopt, schedule, seed};
  Rng rng(seed);
  if constexpr (Resettable<Source, Scalar>) source.reset(theta0, rng);

  trace.iterates.col(0) = theta0;
  Vec<Scalar> theta = theta0;
  for (Eigen::Index k = 0; k < cols; ++k) {
    const Vec<Scalar> drift = source.next_drift(theta, rng);
    if (drift.size() != d) throw std::invalid_argument("drift dimension mismatch");
    const Scalar g = schedule.gamma(static_cast<std::size_t>(k) + 1);
    trace.drifts.col(k) = drift;
    theta = theta - g * drift;
    if (!theta.allFinite()) throw NonFiniteIterate(static_cast<std::size_t>(k) + 1);
    trace.iterates.col(k + 1) = theta;
  }

  if constexpr (HasExactMeanField<Source, Scalar>) {
    Vec<Scalar> norms(cols);
    for (Eigen::Index k = 0; k < cols; ++k) {
      const Vec<Scalar> theta_k = trace.iterates.col(k);
      norms(k) = Vec<Scalar>(source.exact_mean_field(theta_k)).squaredNorm();
    }
    trace.mean_field_sq_norms = std::move(norms);
  }
  return trace;
}

/// E ||h(theta_N)||^2 given the trace, as the exact weighted average over N.
template <typename Scalar>
Scalar expected_stopped_value(const SaTrace<Scalar>& trace) {
  if (!trace.mean_field_sq_norms)
    throw std::invalid_argument("trace carries no mean-field norms (source has no exact mean field)");
  return expected_stopped_value(trace.schedule, *trace.mean_field_sq_norms);
}

}  // namespace bsa
