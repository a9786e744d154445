#pragma once

// Certification of the drift/Lyapunov assumptions, evaluation of the
// finite-horizon bounds, the lower-bound construction and rate regression.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bsa/errors.hpp"
#include "bsa/random.hpp"
#include "bsa/sa_core.hpp"

namespace bsa::theory {

enum class Provenance { Measured, Asserted };

template <typename Scalar = double>
struct Constant {
  Scalar value = 0;
  Provenance provenance = Provenance::Asserted;

  static Constant measured(Scalar v) { return {v, Provenance::Measured}; }
  static Constant asserted(Scalar v) { return {v, Provenance::Asserted}; }
};

template <typename Scalar = double>
struct AssumptionConstants {
  using C = std::optional<Constant<Scalar>>;
  C c0, c1;          // c0 + c1 <grad V, h> >= ||h||^2
  C d0, d1;          // d0 + d1 ||h|| >= ||grad V||
  C L;               // grad V is L-Lipschitz
  C sigma0, sigma1;  // E||e||^2 <= sigma0^2 + sigma1^2 ||h||^2
  C sigma;           // ||H - h|| <= sigma
  C L_PH0, L_PH1;    // Poisson solution bounds
  C rho, K_R;        // geometric ergodicity
  C lambda, Gamma, Upsilon;

  void validate() const {
    auto positive = [](const C& c, const char* name) {
      if (c && !(c->value > Scalar(0))) throw std::invalid_argument(std::string(name) + " must be positive");
    };
    auto nonneg = [](const C& c, const char* name) {
      if (c && !(c->value >= Scalar(0))) throw std::invalid_argument(std::string(name) + " must be non-negative");
    };
    positive(c1, "c1");
    positive(d1, "d1");
    positive(L, "L");
    nonneg(c0, "c0");
    nonneg(d0, "d0");
    nonneg(sigma0, "sigma0");
    nonneg(sigma1, "sigma1");
    nonneg(sigma, "sigma");
    nonneg(L_PH0, "L_PH0");
    nonneg(L_PH1, "L_PH1");
  }
};

enum class BoundVariant { Thm1, Thm2 };

/// The step-size condition of a bound fails, so the bound says nothing.
class BoundInapplicable : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <typename Scalar = double>
struct TheoremBound {
  BoundVariant variant = BoundVariant::Thm1;
  Scalar V0n = 0;
  Scalar C_h = 0;
  Scalar C_gamma = 0;
  Scalar C_0n = 0;
  Scalar step_cap = 0;  // largest admissible gamma_1
  Scalar rhs = 0;
};

namespace detail {

template <typename Scalar>
Scalar require(const std::optional<Constant<Scalar>>& c, const char* name) {
  if (!c) throw std::invalid_argument(std::string("bound needs constant ") + name);
  return c->value;
}

template <typename Scalar>
void check_cap(Scalar gamma1, Scalar cap) {
  if (!(cap > Scalar(0)) || gamma1 > cap * (Scalar(1) + Scalar(1e-12)))
    throw BoundInapplicable("gamma_1 = " + std::to_string(static_cast<double>(gamma1)) +
                            " exceeds the step-size cap " + std::to_string(static_cast<double>(cap)));
}

}  // namespace detail

/// Right-hand side of the finite-horizon bound on E||h(theta_N)||^2.
///   Thm1: 2 c1 (V0n + sigma0^2 L S2) / S1 + 2 c0
///   Thm2: 2 c1 (V0n + C0n + (sigma^2 L + C_gamma) S2) / S1 + 2 c0
/// with S1 = sum gamma_{k+1}, S2 = sum gamma_{k+1}^2, k = 0..n.
template <typename Scalar>
TheoremBound<Scalar> theorem_bound(const AssumptionConstants<Scalar>& k, const StepSizeSchedule<Scalar>& schedule,
                                   std::size_t n, Scalar V0n, BoundVariant variant) {
  k.validate();
  const Scalar c0 = detail::require(k.c0, "c0");
  const Scalar c1 = detail::require(k.c1, "c1");
  const Scalar L = detail::require(k.L, "L");
  const Scalar S1 = schedule.sum(n);
  const Scalar S2 = schedule.sum_sq(n);
  const Scalar g1 = schedule.gamma(1);

  TheoremBound<Scalar> b;
  b.variant = variant;
  b.V0n = V0n;
  if (variant == BoundVariant::Thm1) {
    const Scalar sigma0 = detail::require(k.sigma0, "sigma0");
    const Scalar sigma1 = k.sigma1 ? k.sigma1->value : Scalar(0);
    b.step_cap = Scalar(1) / (Scalar(2) * c1 * L * (Scalar(1) + sigma1 * sigma1));
    detail::check_cap(g1, b.step_cap);
    b.rhs = Scalar(2) * c1 * (V0n + sigma0 * sigma0 * L * S2) / S1 + Scalar(2) * c0;
    return b;
  }

  const Scalar d0 = detail::require(k.d0, "d0");
  const Scalar d1 = detail::require(k.d1, "d1");
  const Scalar sigma = detail::require(k.sigma, "sigma");
  const Scalar lph0 = detail::require(k.L_PH0, "L_PH0");
  const Scalar lph1 = detail::require(k.L_PH1, "L_PH1");
  const Scalar a = schedule.ratio_bound();
  const Scalar ap = schedule.decrement_bound();
  const Scalar gn1 = schedule.gamma(n + 1);

  b.C_h = lph1 * (d0 + d1 * (a + Scalar(1)) / Scalar(2) + a * d1 * sigma) + lph0 * (L + d1 * (Scalar(1) + ap));
  b.C_gamma = lph1 * (d0 + d0 * sigma + d1 * sigma) + L * lph0 * (Scalar(1) + sigma);
  b.C_0n = lph0 * ((Scalar(1) + d0) * (g1 - gn1) + d0 * (g1 + gn1) + Scalar(2) * d1);
  b.step_cap = Scalar(0.5) / (c1 * (L + b.C_h));
  detail::check_cap(g1, b.step_cap);
  b.rhs = Scalar(2) * c1 * (V0n + b.C_0n + (sigma * sigma * L + b.C_gamma) * S2) / S1 + Scalar(2) * c0;
  return b;
}

/// Certificate for A1 (c0 + c1 <gV, h> >= ||h||^2) or A2 (d0 + d1 ||h|| >= ||gV||).
template <typename Scalar = double>
struct LinearCertificate {
  Scalar offset = 0;      // c0 or d0
  Scalar slope = 0;       // c1 or d1
  std::size_t worst = 0;  // sample where the inequality is tightest
  Scalar worst_ratio = 0; // A1: min <gV,h>/||h||^2, A2: max ||gV||/||h|| (over samples with ||h|| > guard)
  Scalar slack = 0;       // min over samples of lhs - rhs (>= 0)
  std::vector<std::pair<Scalar, Scalar>> frontier;  // (slope, smallest offset) on the scan grid
};

namespace detail {

/// Samples are pairs (a_i, b_i) with the requirement offset + slope a_i >= b_i.
template <typename Scalar>
Scalar min_offset(const std::vector<Scalar>& a, const std::vector<Scalar>& b, Scalar slope) {
  Scalar need = 0;
  for (std::size_t i = 0; i < a.size(); ++i) need = std::max(need, b[i] - slope * a[i]);
  return need;
}

template <typename Scalar>
LinearCertificate<Scalar> linear_certificate(const std::vector<Scalar>& a, const std::vector<Scalar>& b,
                                             std::optional<Scalar> slope, Scalar margin, Scalar min_slope,
                                             Scalar guard) {
  if (a.empty() || a.size() != b.size()) throw std::invalid_argument("certification needs at least one sample");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(static_cast<double>(a[i])) || !std::isfinite(static_cast<double>(b[i])))
      throw NumericalFailure("non-finite value in certification sample " + std::to_string(i));
  if (!(margin >= Scalar(0))) throw std::invalid_argument("margin must be non-negative");

  LinearCertificate<Scalar> cert;
  // worst_ratio ignores samples with b <= guard (near roots of h)
  bool zero_offset_possible = true;
  Scalar max_ratio = 0;
  Scalar min_ratio = std::numeric_limits<Scalar>::infinity();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (b[i] <= Scalar(0)) continue;
    if (a[i] <= Scalar(0)) {
      zero_offset_possible = false;
      if (b[i] > guard) min_ratio = std::min(min_ratio, a[i] / b[i]);
      continue;
    }
    max_ratio = std::max(max_ratio, b[i] / a[i]);
    if (b[i] > guard) min_ratio = std::min(min_ratio, a[i] / b[i]);
  }

  if (slope) {
    if (!(*slope > Scalar(0))) throw std::invalid_argument("slope must be positive");
    cert.slope = *slope;
    cert.offset = min_offset(a, b, cert.slope);
  } else if (zero_offset_possible) {
    cert.slope = std::max(min_slope, max_ratio);
    cert.offset = 0;
  } else {
    for (int e = -30; e <= 60; ++e) {
      const Scalar s = std::pow(Scalar(10), Scalar(e) / Scalar(10));
      cert.frontier.emplace_back(s, min_offset(a, b, s));
    }
    auto best = std::min_element(cert.frontier.begin(), cert.frontier.end(),
                                 [](const auto& x, const auto& y) { return x.second < y.second; });
    cert.slope = best->first;
    cert.offset = best->second;
  }
  if (!slope) cert.slope = std::max(min_slope, cert.slope * (Scalar(1) + margin));
  cert.offset = cert.offset * (Scalar(1) + margin);

  cert.slack = std::numeric_limits<Scalar>::infinity();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Scalar s = cert.offset + cert.slope * a[i] - b[i];
    if (s < cert.slack) cert.slack = s, cert.worst = i;
  }
  cert.worst_ratio = min_ratio;
  return cert;
}

}  // namespace detail

/// A1 from samples of grad V and h. With c1 given, c0 is the smallest offset;
/// otherwise c0 = 0 when possible (c1 = max ||h||^2 / <gV, h>), else the grid
/// point minimizing c0. `margin` inflates the constants relatively so that the
/// certificate survives a fresh sample.
template <typename Scalar>
LinearCertificate<Scalar> certify_a1(const std::vector<Vec<Scalar>>& grad_v, const std::vector<Vec<Scalar>>& h,
                                     std::optional<Scalar> c1 = std::nullopt, Scalar margin = Scalar(0)) {
  if (grad_v.size() != h.size()) throw std::invalid_argument("sample lists differ in length");
  std::vector<Scalar> a, b;
  for (std::size_t i = 0; i < h.size(); ++i) {
    a.push_back(grad_v[i].dot(h[i]));
    b.push_back(h[i].squaredNorm());
  }
  return detail::linear_certificate(a, b, c1, margin, Scalar(0), Scalar(1e-16));
}

/// A2 from samples; d1 is kept >= 1e-12.
template <typename Scalar>
LinearCertificate<Scalar> certify_a2(const std::vector<Vec<Scalar>>& grad_v, const std::vector<Vec<Scalar>>& h,
                                     std::optional<Scalar> d1 = std::nullopt, Scalar margin = Scalar(0)) {
  if (grad_v.size() != h.size()) throw std::invalid_argument("sample lists differ in length");
  std::vector<Scalar> a, b;
  for (std::size_t i = 0; i < h.size(); ++i) {
    a.push_back(h[i].norm());
    b.push_back(grad_v[i].norm());
  }
  auto cert = detail::linear_certificate(a, b, d1, margin, Scalar(1e-12), Scalar(0));
  if (cert.worst_ratio > Scalar(0) && std::isfinite(static_cast<double>(cert.worst_ratio)))
    cert.worst_ratio = Scalar(1) / cert.worst_ratio;
  return cert;
}

/// Callable form: evaluates grad_v(theta) and h(theta) at each sample.
template <typename Scalar, typename GradV, typename Field>
  requires std::invocable<GradV&, const Vec<Scalar>&> && std::invocable<Field&, const Vec<Scalar>&>
LinearCertificate<Scalar> certify_a1(const std::vector<Vec<Scalar>>& samples, GradV&& grad_v, Field&& h,
                                     std::optional<Scalar> c1 = std::nullopt, Scalar margin = Scalar(0)) {
  std::vector<Vec<Scalar>> g, f;
  for (const auto& t : samples) g.push_back(grad_v(t)), f.push_back(h(t));
  return certify_a1(g, f, c1, margin);
}

template <typename Scalar, typename GradV, typename Field>
  requires std::invocable<GradV&, const Vec<Scalar>&> && std::invocable<Field&, const Vec<Scalar>&>
LinearCertificate<Scalar> certify_a2(const std::vector<Vec<Scalar>>& samples, GradV&& grad_v, Field&& h,
                                     std::optional<Scalar> d1 = std::nullopt, Scalar margin = Scalar(0)) {
  std::vector<Vec<Scalar>> g, f;
  for (const auto& t : samples) g.push_back(grad_v(t)), f.push_back(h(t));
  return certify_a2(g, f, d1, margin);
}

namespace detail {

// rounding allowance for a certificate that is tight on its own sample
template <typename Scalar>
bool violates(Scalar lhs, Scalar rhs) {
  using std::abs;
  return lhs < rhs - Scalar(64) * std::numeric_limits<Scalar>::epsilon() * std::max({Scalar(1), abs(lhs), abs(rhs)});
}

}  // namespace detail

/// Number of samples where offset + slope * a < b fails, for re-validation.
template <typename Scalar>
std::size_t a1_violations(const LinearCertificate<Scalar>& c, const std::vector<Vec<Scalar>>& grad_v,
                          const std::vector<Vec<Scalar>>& h) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (detail::violates(c.offset + c.slope * grad_v[i].dot(h[i]), h[i].squaredNorm())) ++bad;
  return bad;
}

template <typename Scalar>
std::size_t a2_violations(const LinearCertificate<Scalar>& c, const std::vector<Vec<Scalar>>& grad_v,
                          const std::vector<Vec<Scalar>>& h) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (detail::violates(c.offset + c.slope * h[i].norm(), grad_v[i].norm())) ++bad;
  return bad;
}

template <typename Scalar = double>
struct SmoothnessCertificate {
  Scalar L = 0;
  std::size_t worst_pair = 0;
};

/// max ||gV(t) - gV(t')|| / ||t - t'|| over the pairs.
template <typename Scalar, typename GradV>
SmoothnessCertificate<Scalar> certify_smoothness(const std::vector<std::pair<Vec<Scalar>, Vec<Scalar>>>& pairs,
                                                 GradV&& grad_v) {
  SmoothnessCertificate<Scalar> c;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Scalar dist = (pairs[i].first - pairs[i].second).norm();
    if (!(dist > Scalar(0))) continue;
    const Scalar r = (Vec<Scalar>(grad_v(pairs[i].first)) - Vec<Scalar>(grad_v(pairs[i].second))).norm() / dist;
    if (!std::isfinite(static_cast<double>(r))) throw NumericalFailure("non-finite smoothness ratio");
    if (r > c.L) c.L = r, c.worst_pair = i;
  }
  return c;
}

/// Sample mean and standard error (sample standard deviation / sqrt(count)).
struct MeanSe {
  double mean = 0;
  double se = 0;
  std::size_t count = 0;
};

inline MeanSe summarize(const std::vector<double>& x) {
  MeanSe out;
  out.count = x.size();
  if (x.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(), 0};
  double sum = 0;
  for (double v : x) sum += v;
  out.mean = sum / static_cast<double>(x.size());
  if (x.size() < 2) return out;
  double ss = 0;
  for (double v : x) ss += (v - out.mean) * (v - out.mean);
  out.se = std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()));
  return out;
}

/// One-sided test on paired differences d_r = lhs_r - rhs_r.
/// Upper: lhs <= rhs passes when mean(d) <= 2 se(d); Lower: mean(d) >= -2 se(d).
enum class Side { Upper, Lower };

struct BoundCheck {
  MeanSe lhs, rhs, diff;
  bool ok = false;
};

inline BoundCheck one_sided_check(const std::vector<double>& lhs, const std::vector<double>& rhs, Side side,
                                  double z = 2.0) {
  if (lhs.size() != rhs.size()) throw std::invalid_argument("paired samples differ in length");
  std::vector<double> d(lhs.size());
  for (std::size_t i = 0; i < lhs.size(); ++i) d[i] = lhs[i] - rhs[i];
  BoundCheck c{summarize(lhs), summarize(rhs), summarize(d), false};
  c.ok = side == Side::Upper ? c.diff.mean <= z * c.diff.se : c.diff.mean >= -z * c.diff.se;
  return c;
}

/// Drift theta + Z, Z with i.i.d. coordinates of variance sigma^2; the mean
/// field is grad of ||theta||^2 / 2.
class MartingaleQuadraticSource {
 public:
  enum class Noise { Gaussian, Uniform };

  MartingaleQuadraticSource(Eigen::Index dim, double sigma, Noise noise = Noise::Gaussian)
      : dim_(dim), sigma_(sigma), noise_(noise) {
    if (dim < 1) throw std::invalid_argument("dimension must be positive");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("noise sigma must be non-negative");
  }

  Vec<double> next_drift(const Vec<double>& theta, Rng& rng) const {
    if (theta.size() != dim_) throw std::invalid_argument("parameter dimension mismatch");
    Vec<double> z(dim_);
    const double half_width = std::sqrt(3.0) * sigma_;
    for (Eigen::Index i = 0; i < dim_; ++i)
      z(i) = noise_ == Noise::Gaussian ? sigma_ * rng.normal() : rng.uniform(-half_width, half_width);
    return theta + z;
  }

  Vec<double> exact_mean_field(const Vec<double>& theta) const { return theta; }
  double lyapunov_value(const Vec<double>& theta) const { return 0.5 * theta.squaredNorm(); }

  Eigen::Index dim() const noexcept { return dim_; }
  double sigma() const noexcept { return sigma_; }
  /// sigma0^2 = dim sigma^2, sigma1 = 0
  double sigma0_sq() const noexcept { return static_cast<double>(dim_) * sigma_ * sigma_; }

 private:
  Eigen::Index dim_;
  double sigma_;
  Noise noise_;
};

/// V(t) = mu t^2 / 2 for t >= 0 and L t^2 / 2 for t < 0: mu-strongly convex,
/// L-smooth, and a pure quadratic when mu = L.
class LowerBoundSource {
 public:
  LowerBoundSource(double mu, double L, double eps_noise) : mu_(mu), L_(L), eps_(eps_noise) {
    if (!(mu > 0.0) || !(L >= mu) || !std::isfinite(L)) throw std::invalid_argument("need 0 < mu <= L");
    if (!(eps_noise >= 0.0) || !std::isfinite(eps_noise)) throw std::invalid_argument("noise width must be >= 0");
  }

  double grad(double t) const { return t >= 0.0 ? mu_ * t : L_ * t; }
  double value(double t) const { return 0.5 * (t >= 0.0 ? mu_ : L_) * t * t; }

  Vec<double> next_drift(const Vec<double>& theta, Rng& rng) const {
    Vec<double> d(1);
    d(0) = grad(theta(0)) + rng.uniform(-eps_, eps_);
    return d;
  }

  Vec<double> exact_mean_field(const Vec<double>& theta) const {
    Vec<double> h(1);
    h(0) = grad(theta(0));
    return h;
  }

  double lyapunov_value(const Vec<double>& theta) const { return value(theta(0)); }

  /// mu eps^2 / 6
  double c_lb() const { return mu_ * eps_ * eps_ / 6.0; }

 private:
  double mu_, L_, eps_;
};

struct LowerBoundPoint {
  std::size_t n = 0;
  BoundCheck check;  // lhs = E||h(theta_N)||^2, rhs = lower bound, side Lower
};

/// Replicated runs of the scalar construction; each replicate is run once to
/// the largest horizon and sliced.
inline std::vector<LowerBoundPoint> lower_bound_experiment(double mu, double L, double eps_noise,
                                                           const StepSizeSchedule<double>& schedule,
                                                           const std::vector<std::size_t>& ns, std::size_t replicates,
                                                           std::uint64_t seed, double theta0 = 1.0) {
  if (ns.empty() || replicates < 1) throw std::invalid_argument("need a non-empty grid and replicates >= 1");
  LowerBoundSource src(mu, L, eps_noise);
  const std::size_t n_max = ns.back();
  std::vector<std::vector<double>> lhs(ns.size()), rhs(ns.size());
  Vec<double> t0(1);
  t0(0) = theta0;
  for (std::size_t r = 0; r < replicates; ++r) {
    const SaTrace<double> tr = run_sa(src, schedule, n_max, t0, seed + r);
    const std::vector<double> stopped = prefix_stopped_values(schedule, *tr.mean_field_sq_norms, ns);
    double s1 = 0, s2 = 0;
    std::size_t k = 0;
    for (std::size_t g = 0; g < ns.size(); ++g) {
      for (; k <= ns[g]; ++k) {
        const double gk = schedule.gamma(k + 1);
        s1 += gk;
        s2 += gk * gk;
      }
      const double v0n = src.value(theta0) - src.value(tr.iterates(0, static_cast<Eigen::Index>(ns[g] + 1)));
      lhs[g].push_back(stopped[g]);
      rhs[g].push_back((v0n + src.c_lb() * s2) / s1);
    }
  }
  std::vector<LowerBoundPoint> out;
  for (std::size_t g = 0; g < ns.size(); ++g)
    out.push_back({ns[g], one_sided_check(lhs[g], rhs[g], Side::Lower)});
  return out;
}

struct Fit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

struct RateFit {
  Fit vs_log_n;           // log v = a log n + b
  Fit vs_log_log_rate;    // log v = a log(log n / sqrt n) + b
};

inline Fit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0)) throw std::invalid_argument("regressor has no spread");
  Fit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

/// Needs >= 4 points spanning >= 2 decades of n, all values > 0, n > 1.
inline RateFit fit_rate(const std::vector<double>& ns, const std::vector<double>& values) {
  if (ns.size() != values.size()) throw std::invalid_argument("grid and values differ in length");
  if (ns.size() < 4) throw std::invalid_argument("rate fit needs at least 4 points");
  const auto [lo, hi] = std::minmax_element(ns.begin(), ns.end());
  if (!(*lo > 1.0) || std::log10(*hi / *lo) < 2.0 - 1e-12)
    throw std::invalid_argument("rate fit needs n > 1 spanning at least two decades");
  std::vector<double> x1, x2, y;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!(values[i] > 0.0) || !std::isfinite(values[i]))
      throw std::invalid_argument("rate fit needs positive finite values");
    x1.push_back(std::log(ns[i]));
    x2.push_back(std::log(std::log(ns[i]) / std::sqrt(ns[i])));
    y.push_back(std::log(values[i]));
  }
  return {least_squares(x1, y), least_squares(x2, y)};
}

}  // namespace bsa::theory
