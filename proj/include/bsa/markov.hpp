#pragma once

// Finite-state Markov kernels: stationary law, Poisson equation, geometric
// ergodicity constants and path sampling.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsa/errors.hpp"
#include "bsa/random.hpp"
#include "bsa/sa_core.hpp"

namespace bsa {

namespace detail {

template <typename Scalar>
Scalar stochastic_tolerance() {
  return std::max(Scalar(1e-12), Scalar(64) * std::numeric_limits<Scalar>::epsilon());
}

}  // namespace detail

/// Row-stochastic m x m matrix. Validated on construction, immutable after.
template <typename Scalar = double>
class FiniteKernel {
 public:
  explicit FiniteKernel(Mat<Scalar> p) : p_(std::move(p)) {
    if (p_.rows() == 0 || p_.rows() != p_.cols())
      throw std::invalid_argument("kernel must be a non-empty square matrix");
    if (!p_.allFinite()) throw std::invalid_argument("kernel has non-finite entries");
    if ((p_.array() < Scalar(0)).any()) throw std::invalid_argument("kernel has negative entries");
    const Scalar tol = detail::stochastic_tolerance<Scalar>();
    for (Eigen::Index i = 0; i < p_.rows(); ++i) {
      using std::abs;
      if (abs(p_.row(i).sum() - Scalar(1)) > tol)
        throw std::invalid_argument("kernel row " + std::to_string(i) + " does not sum to 1");
    }
  }

  const Mat<Scalar>& matrix() const noexcept { return p_; }
  Eigen::Index size() const noexcept { return p_.rows(); }

 private:
  Mat<Scalar> p_;
};

/// Eigenvalue moduli of P sorted in decreasing order of closeness to the unit
/// eigenvalue: entry 0 is the Perron root, the rest by decreasing modulus.
template <typename Scalar>
std::vector<Scalar> kernel_spectrum_moduli(const FiniteKernel<Scalar>& kernel) {
  const Eigen::Index m = kernel.size();
  if (m == 1) return {Scalar(1)};
  Eigen::EigenSolver<Mat<Scalar>> solver(kernel.matrix(), false);
  if (solver.info() != Eigen::Success) throw NumericalFailure("eigenvalue computation failed");
  const auto& ev = solver.eigenvalues();
  Eigen::Index perron = 0;
  Scalar best = std::numeric_limits<Scalar>::max();
  for (Eigen::Index i = 0; i < m; ++i) {
    using std::abs;
    const Scalar dist = abs(ev(i) - std::complex<Scalar>(1, 0));
    if (dist < best) best = dist, perron = i;
  }
  std::vector<Scalar> rest;
  for (Eigen::Index i = 0; i < m; ++i)
    if (i != perron) rest.push_back(std::abs(ev(i)));
  std::sort(rest.begin(), rest.end(), std::greater<Scalar>());
  rest.insert(rest.begin(), std::abs(ev(perron)));
  return rest;
}

/// Second-largest eigenvalue modulus; 0 for a one-state chain.
template <typename Scalar>
Scalar second_eigenvalue_modulus(const FiniteKernel<Scalar>& kernel) {
  const auto moduli = kernel_spectrum_moduli(kernel);
  return moduli.size() > 1 ? moduli[1] : Scalar(0);
}

/// Distance from 1 of the eigenvalue nearest to 1 after the Perron root.
template <typename Scalar>
Scalar second_unit_eigenvalue_gap(const FiniteKernel<Scalar>& kernel) {
  const Eigen::Index m = kernel.size();
  if (m == 1) return std::numeric_limits<Scalar>::infinity();
  Eigen::EigenSolver<Mat<Scalar>> solver(kernel.matrix(), false);
  if (solver.info() != Eigen::Success) throw NumericalFailure("eigenvalue computation failed");
  std::vector<Scalar> dist;
  for (Eigen::Index i = 0; i < m; ++i)
    dist.push_back(std::abs(solver.eigenvalues()(i) - std::complex<Scalar>(1, 0)));
  std::sort(dist.begin(), dist.end());
  return dist[1];
}

/// Unique invariant law v with v^T P = v^T. Solves (I - P + 1 1^T)^T v = 1,
/// which is non-singular exactly when the unit eigenvalue is simple.
template <typename Scalar>
Vec<Scalar> stationary_distribution(const FiniteKernel<Scalar>& kernel) {
  const Eigen::Index m = kernel.size();
  if (m == 1) return Vec<Scalar>::Ones(1);
  if (second_unit_eigenvalue_gap(kernel) < Scalar(1e-10))
    throw NonUniqueStationary("unit eigenvalue is not simple: stationary distribution is not unique");

  const Mat<Scalar>& p = kernel.matrix();
  const Mat<Scalar> a = (Mat<Scalar>::Identity(m, m) - p + Mat<Scalar>::Ones(m, m)).transpose();
  const Eigen::PartialPivLU<Mat<Scalar>> lu(a);
  const Vec<Scalar> ones = Vec<Scalar>::Ones(m);
  Vec<Scalar> v = lu.solve(ones);
  v += lu.solve(Vec<Scalar>(ones - a * v));  // one refinement step

  v = v.cwiseMax(Scalar(0));
  v /= v.sum();
  return v;
}

inline constexpr double kErgodicityThreshold = 1e-10;

template <typename Scalar>
void require_ergodic(const FiniteKernel<Scalar>& kernel) {
  const Scalar slem = second_eigenvalue_modulus(kernel);
  if (slem >= Scalar(1) - Scalar(kErgodicityThreshold))
    throw NonErgodicKernel("kernel is not ergodic: second eigenvalue modulus " +
                           std::to_string(static_cast<double>(slem)));
}

template <typename Scalar = double>
struct PoissonSolution {
  Mat<Scalar> H_hat;     // m x d, row x is H_hat(x)
  Scalar residual = 0;   // max-norm defect of H_hat - P H_hat - (H - 1 h^T)
  Vec<Scalar> stationary;
};

template <typename Scalar>
Scalar poisson_residual(const FiniteKernel<Scalar>& kernel, const Mat<Scalar>& h_hat,
                        const Mat<Scalar>& drift, const Vec<Scalar>& mean) {
  const Mat<Scalar> defect = h_hat - kernel.matrix() * h_hat - drift +
                             Vec<Scalar>::Ones(drift.rows()) * mean.transpose();
  return defect.cwiseAbs().maxCoeff();
}

/// Centered solution of H_hat - P H_hat = H - 1 h^T, fixed by v^T H_hat = 0
/// (the limit of sum_t (P^t H - 1 h^T)). Uses the fundamental matrix
/// (I - P + 1 v^T), which shares the centered solution.
template <typename Scalar>
PoissonSolution<Scalar> solve_poisson(const FiniteKernel<Scalar>& kernel, const Mat<Scalar>& drift,
                                      const Vec<Scalar>& mean) {
  const Eigen::Index m = kernel.size();
  if (drift.rows() != m) throw std::invalid_argument("drift rows must match kernel size");
  if (mean.size() != drift.cols()) throw std::invalid_argument("mean dimension must match drift columns");

  PoissonSolution<Scalar> out;
  out.stationary = stationary_distribution(kernel);
  const Scalar scale = std::max(Scalar(1), drift.cwiseAbs().maxCoeff());
  const Vec<Scalar> implied = drift.transpose() * out.stationary;
  if ((implied - mean).cwiseAbs().maxCoeff() > Scalar(1e-10) * scale)
    throw std::invalid_argument("mean field is inconsistent with the stationary average of the drift");
  require_ergodic(kernel);

  const Vec<Scalar> ones = Vec<Scalar>::Ones(m);
  const Mat<Scalar> a = Mat<Scalar>::Identity(m, m) - kernel.matrix() + ones * out.stationary.transpose();
  const Mat<Scalar> rhs = drift - ones * mean.transpose();
  const Eigen::PartialPivLU<Mat<Scalar>> lu(a);
  out.H_hat = lu.solve(rhs);
  out.H_hat += lu.solve(Mat<Scalar>(rhs - a * out.H_hat));
  out.residual = poisson_residual(kernel, out.H_hat, drift, mean);
  if (!(out.residual <= Scalar(1e-10) * scale))
    throw NumericalFailure("Poisson solve did not reach the residual tolerance");
  return out;
}

/// ||P^n - 1 v^T|| <= K_R rho^n for n <= horizon (spectral norm).
template <typename Scalar = double>
struct ErgodicityEstimate {
  Scalar rho = 0;
  Scalar K_R = 1;
  std::size_t horizon = 0;
  Scalar second_eigenvalue = 0;
  std::vector<Scalar> deviation_norms;  // ||P^n - 1 v^T||, n = 0..horizon

  /// Absolute floor below which deviation norms are rounding noise.
  Scalar floor() const { return Scalar(1e-13) * K_R; }

  bool holds(std::size_t n) const {
    using std::pow;
    const Scalar bound = n == 0 ? K_R : K_R * pow(rho, static_cast<Scalar>(n));
    return deviation_norms.at(n) <= bound * (Scalar(1) + Scalar(1e-12)) + floor();
  }

  bool holds_all() const {
    for (std::size_t n = 0; n <= horizon; ++n)
      if (!holds(n)) return false;
    return true;
  }
};

template <typename Scalar>
Scalar spectral_norm(const Mat<Scalar>& a) {
  if (a.size() == 0) return Scalar(0);
  Eigen::JacobiSVD<Mat<Scalar>> svd(a);
  return svd.singularValues()(0);
}

/// rho from the tail ratios ||D_{n+1}|| / ||D_n|| over n in [horizon/2, horizon),
/// never below the second eigenvalue modulus; K_R = max_n ||D_n|| / rho^n.
/// D_n = (P - 1 v^T)^n for n >= 1, which avoids cancellation in P^n - 1 v^T.
template <typename Scalar>
ErgodicityEstimate<Scalar> ergodicity_constants(const FiniteKernel<Scalar>& kernel, std::size_t horizon) {
  if (horizon < 2) throw std::invalid_argument("ergodicity horizon must be at least 2");
  require_ergodic(kernel);
  const Eigen::Index m = kernel.size();
  const Vec<Scalar> v = stationary_distribution(kernel);
  const Mat<Scalar> ones_v = Vec<Scalar>::Ones(m) * v.transpose();
  const Mat<Scalar> q_tilde = kernel.matrix() - ones_v;

  ErgodicityEstimate<Scalar> est;
  est.horizon = horizon;
  est.second_eigenvalue = second_eigenvalue_modulus(kernel);
  est.deviation_norms.reserve(horizon + 1);
  est.deviation_norms.push_back(spectral_norm<Scalar>(Mat<Scalar>::Identity(m, m) - ones_v));
  Mat<Scalar> power = q_tilde;
  for (std::size_t n = 1; n <= horizon; ++n) {
    est.deviation_norms.push_back(spectral_norm(power));
    power = power * q_tilde;
  }

  const Scalar d0 = std::max(est.deviation_norms[0], Scalar(1));
  const Scalar tiny = Scalar(1e-250);
  Scalar ratio_max = 0;
  bool any_ratio = false;
  for (std::size_t n = std::max<std::size_t>(1, horizon / 2); n < horizon; ++n) {
    const Scalar a = est.deviation_norms[n];
    const Scalar b = est.deviation_norms[n + 1];
    if (a <= tiny) break;
    ratio_max = std::max(ratio_max, b / a);
    any_ratio = true;
  }
  Scalar rho = std::max(any_ratio ? ratio_max : Scalar(0), est.second_eigenvalue);
  if (rho >= Scalar(1)) throw NonErgodicKernel("deviation norms do not contract");

  // One-step mixing: everything past n = 0 is rounding noise.
  Scalar tail_max = 0;
  for (std::size_t n = 1; n <= horizon; ++n) tail_max = std::max(tail_max, est.deviation_norms[n]);
  if (rho < Scalar(1e-12) || tail_max <= Scalar(1e-14) * d0) rho = 0;

  est.rho = rho;
  Scalar k = std::max(Scalar(1), est.deviation_norms[0]);
  if (rho > 0) {
    using std::exp;
    using std::log;
    for (std::size_t n = 1; n <= horizon; ++n) {
      const Scalar dn = est.deviation_norms[n];
      if (dn <= tiny) continue;
      k = std::max(k, exp(log(dn) - static_cast<Scalar>(n) * log(rho)));
    }
  }
  est.K_R = k;
  if (!est.holds_all()) throw NumericalFailure("ergodicity certificate failed its own check");
  return est;
}

/// Path x_0 = x0, x_1, ..., x_steps; each transition inverts the CDF of row x.
template <typename Scalar>
std::vector<Eigen::Index> sample_chain(const FiniteKernel<Scalar>& kernel, Eigen::Index x0,
                                       std::size_t steps, Rng& rng) {
  const Eigen::Index m = kernel.size();
  if (x0 < 0 || x0 >= m) throw std::invalid_argument("start state out of range");
  std::vector<Eigen::Index> path;
  path.reserve(steps + 1);
  path.push_back(x0);
  Eigen::Index x = x0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double u = rng.uniform01();
    double acc = 0.0;
    Eigen::Index next = -1;
    Eigen::Index last_positive = 0;
    for (Eigen::Index y = 0; y < m; ++y) {
      const double p = static_cast<double>(kernel.matrix()(x, y));
      if (p > 0.0) last_positive = y;
      acc += p;
      if (u < acc) {
        next = y;
        break;
      }
    }
    x = next >= 0 ? next : last_positive;
    path.push_back(x);
  }
  return path;
}

}  // namespace bsa
