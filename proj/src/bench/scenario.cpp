#include "bsa/bench/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "bsa/errors.hpp"
#include "bsa/gmm.hpp"
#include "bsa/io.hpp"
#include "bsa/markov.hpp"
#include "bsa/policy_gradient.hpp"
#include "bsa/random.hpp"

namespace bsa::bench {

namespace {

using theory::Constant;
using VecD = Vec<double>;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string sample_label(std::size_t i) { return "sample " + std::to_string(i); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Model {
  std::optional<gmm::DiscreteDataDist<double>> dist;
  std::optional<io::MdpFile> mdp;
};

Model load_model(const ScenarioConfig& c) {
  Model m;
  if (c.scenario == Scenario::Gmm) m.dist = io::load_data_dist_csv(c.gmm.data, c.gmm.ybar);
  if (c.scenario == Scenario::Pg) {
    m.mdp = io::load_mdp(c.pg.mdp);
    if (c.pg.fixed_start) {
      const auto& mdp = m.mdp->mdp;
      if (c.pg.start_state < 0 || c.pg.start_state >= mdp.num_states() || c.pg.start_action < 0 ||
          c.pg.start_action >= mdp.num_actions())
        throw std::invalid_argument(c.source + ": fixed start (" + std::to_string(c.pg.start_state) + ", " +
                                    std::to_string(c.pg.start_action) + ") is outside the MDP");
    }
  }
  return m;
}

VecD initial_theta(const ScenarioConfig& c, const Model& m) {
  switch (c.scenario) {
    case Scenario::MartingaleQuadratic: return VecD::Constant(c.martingale.dim, c.martingale.theta0);
    case Scenario::LowerBound: return VecD::Constant(1, c.lowerbound.theta0);
    case Scenario::Gmm: return gmm::GmmSuffStats<double>::zero(c.gmm.M).flatten();
    case Scenario::Pg: return VecD::Constant(m.mdp->features.cols(), c.pg.theta0);
  }
  return {};
}

pg::PgSource<double> make_pg_source(const ScenarioConfig& c, const Model& m) {
  std::optional<std::pair<Eigen::Index, Eigen::Index>> start;
  if (c.pg.fixed_start) start = std::make_pair(Eigen::Index(c.pg.start_state), Eigen::Index(c.pg.start_action));
  const auto& f = *m.mdp;
  return pg::PgSource<double>(f.mdp, pg::SoftmaxPolicy<double>(f.features, f.mdp.num_actions()), c.pg.lambda,
                              start);
}

theory::MartingaleQuadraticSource make_martingale(const ScenarioConfig& c) {
  return theory::MartingaleQuadraticSource(
      c.martingale.dim, c.martingale.sigma,
      c.martingale.uniform_noise ? theory::MartingaleQuadraticSource::Noise::Uniform
                                 : theory::MartingaleQuadraticSource::Noise::Gaussian);
}

VecD uniform_box(const VecD& center, double radius, Rng& rng) {
  VecD v(center.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = center(i) + rng.uniform(-radius, radius);
  return v;
}

void add(Certification& cert, std::string name, double value, std::string worst, double slack,
         std::string provenance) {
  cert.rows.push_back({std::move(name), value, std::move(worst), slack, std::move(provenance)});
}

void check(std::vector<CheckLine>& out, std::string name, bool ok, std::string detail) {
  out.push_back({std::move(name), ok, std::move(detail)});
}

Constant<double> measured(double v) { return Constant<double>::measured(v); }
Constant<double> asserted(double v) { return Constant<double>::asserted(v); }

/// Largest c admitted by the step cap of the bound; empty when none is.
std::optional<double> auto_cap(const ScenarioConfig& c, const theory::AssumptionConstants<double>& k,
                               theory::BoundVariant variant) {
  const double c1 = k.c1->value, L = k.L->value;
  if (variant == theory::BoundVariant::Thm1) {
    const double s1 = k.sigma1 ? k.sigma1->value : 0.0;
    return 1.0 / (2.0 * c1 * L * (1.0 + s1 * s1));
  }
  const bool isqrt = c.schedule.kind == ScheduleKind::InverseSqrt;
  const double a = isqrt ? std::sqrt(2.0) : 1.0;
  const double ap_c = isqrt ? (std::sqrt(2.0) - 1.0) / std::sqrt(2.0) : 0.0;  // a' = ap_c / c
  const double d0 = k.d0->value, d1 = k.d1->value, sigma = k.sigma->value;
  const double l0 = k.L_PH0->value, l1 = k.L_PH1->value;
  const double A = l1 * (d0 + d1 * (a + 1.0) / 2.0 + a * d1 * sigma) + l0 * (L + d1);
  const double num = 0.5 - c1 * l0 * d1 * ap_c;
  if (!(num > 0.0)) return std::nullopt;
  return num / (c1 * (L + A));
}

void resolve_step(const ScenarioConfig& c, Certification& cert) {
  cert.step_cap = cert.lower_bound ? auto_cap(c, cert.constants, theory::BoundVariant::Thm1)
                                   : auto_cap(c, cert.constants, cert.variant);
  if (c.schedule.c) {
    cert.step_scale = *c.schedule.c;
    add(cert, "step_c", cert.step_scale, "-", kNaN, "config");
  } else {
    cert.step_scale = cert.step_cap ? std::min(c.schedule.c_max, *cert.step_cap) : c.schedule.c_max;
    add(cert, "step_c", cert.step_scale, "-", kNaN, cert.step_cap ? "derived" : "config");
  }
  add(cert, "step_cap", cert.step_cap ? *cert.step_cap : kNaN, "-", kNaN, "derived");
  if (c.scenario == Scenario::Gmm && cert.step_scale > 1.0)
    throw std::invalid_argument(c.source + ": the GMM scenario needs step sizes in (0, 1]");
}

// Samples shared by certification and re-validation.
struct PairSet {
  std::vector<std::pair<VecD, VecD>> pairs;
};

template <typename Draw, typename Blend>
PairSet draw_pairs(std::size_t count, Rng& rng, Draw&& draw, Blend&& blend) {
  PairSet p;
  for (std::size_t i = 0; i < count; ++i) {
    VecD a = draw(rng), b = draw(rng);
    // alternate far pairs with close ones along the same segment
    if (i % 2 == 1) b = blend(a, b, 1e-3);
    p.pairs.emplace_back(std::move(a), std::move(b));
  }
  return p;
}

VecD convex(const VecD& a, const VecD& b, double t) { return a + t * (b - a); }

// ----- martingale quadratic -------------------------------------------------

Certification certify_martingale(const ScenarioConfig& c, std::uint64_t seed) {
  Certification cert;
  const auto src = make_martingale(c);
  const std::size_t n = static_cast<std::size_t>(c.certify.samples);
  const double radius = 2.0 * std::max(1.0, std::abs(c.martingale.theta0));
  const VecD zero = VecD::Zero(c.martingale.dim);
  Rng rng(mix_seed(seed));
  std::vector<VecD> th;
  for (std::size_t i = 0; i < n; ++i) th.push_back(uniform_box(zero, radius, rng));
  auto id = [](const VecD& t) { return t; };
  const auto a1 = theory::certify_a1<double>(th, id, id, 1.0);
  const auto a2 = theory::certify_a2<double>(th, id, id, 1.0);
  const auto pairs = draw_pairs(n, rng, [&](Rng& r) { return uniform_box(zero, radius, r); }, convex);
  const auto sm = theory::certify_smoothness<double>(pairs.pairs, id);

  auto& k = cert.constants;
  k.c0 = measured(a1.offset);
  k.c1 = asserted(1.0);
  k.d0 = measured(a2.offset);
  k.d1 = asserted(1.0);
  k.L = asserted(1.0);
  k.sigma0 = asserted(std::sqrt(src.sigma0_sq()));
  k.sigma1 = asserted(0.0);
  cert.variant = theory::BoundVariant::Thm1;

  add(cert, "c0", a1.offset, sample_label(a1.worst), a1.slack, "measured");
  add(cert, "c1", 1.0, "-", kNaN, "asserted");
  add(cert, "d0", a2.offset, sample_label(a2.worst), a2.slack, "measured");
  add(cert, "d1", 1.0, "-", kNaN, "asserted");
  add(cert, "L", 1.0, "pair " + std::to_string(sm.worst_pair), 1.0 - sm.L, "asserted");
  add(cert, "sigma0", std::sqrt(src.sigma0_sq()), "-", kNaN, "asserted");
  add(cert, "sigma1", 0.0, "-", kNaN, "asserted");

  // Monte-Carlo check of E||e||^2 = dim sigma^2 at the sampled points
  std::vector<double> e2;
  for (const auto& t : th) e2.push_back((src.next_drift(t, rng) - t).squaredNorm());
  const auto ms = theory::summarize(e2);
  const double target = src.sigma0_sq();
  const bool var_ok = std::abs(ms.mean - target) <= 4.0 * ms.se + 1e-12;
  add(cert, "noise_second_moment", ms.mean, "-", target - ms.mean, "measured");

  check(cert.checks, "A1 c0 + c1 <gradV,h> >= |h|^2", a1.slack >= 0.0, "slack " + fmt(a1.slack));
  check(cert.checks, "A2 d0 + d1 |h| >= |gradV|", a2.slack >= 0.0, "slack " + fmt(a2.slack));
  check(cert.checks, "A3 smoothness <= L", sm.L <= 1.0 + 1e-12, "measured " + fmt(sm.L));
  check(cert.checks, "A4 noise second moment", var_ok,
        "mean " + fmt(ms.mean) + " vs " + fmt(target) + " (se " + fmt(ms.se) + ")");
  resolve_step(c, cert);
  return cert;
}

// ----- lower-bound construction ---------------------------------------------

Certification certify_lowerbound(const ScenarioConfig& c, std::uint64_t seed) {
  Certification cert;
  cert.lower_bound = true;
  const auto& lb = c.lowerbound;
  const theory::LowerBoundSource src(lb.mu, lb.L, lb.eps_noise);
  const std::size_t n = static_cast<std::size_t>(c.certify.samples);
  const double radius = 2.0 * std::max(1.0, std::abs(lb.theta0));
  const VecD zero = VecD::Zero(1);
  Rng rng(mix_seed(seed));
  std::vector<VecD> th;
  for (std::size_t i = 0; i < n; ++i) th.push_back(uniform_box(zero, radius, rng));
  auto field = [&](const VecD& t) { return src.exact_mean_field(t); };
  const auto a1 = theory::certify_a1<double>(th, field, field, 1.0);
  const auto pairs = draw_pairs(n, rng, [&](Rng& r) { return uniform_box(zero, radius, r); }, convex);
  const auto sm = theory::certify_smoothness<double>(pairs.pairs, field);

  auto& k = cert.constants;
  k.c0 = measured(a1.offset);
  k.c1 = asserted(1.0);
  k.L = asserted(lb.L);
  k.sigma0 = asserted(lb.eps_noise / std::sqrt(3.0));
  k.sigma1 = asserted(0.0);

  add(cert, "c0", a1.offset, sample_label(a1.worst), a1.slack, "measured");
  add(cert, "c1", 1.0, "-", kNaN, "asserted");
  add(cert, "L", lb.L, "pair " + std::to_string(sm.worst_pair), lb.L - sm.L, "asserted");
  add(cert, "mu", lb.mu, "-", kNaN, "config");
  add(cert, "sigma0", lb.eps_noise / std::sqrt(3.0), "-", kNaN, "asserted");
  add(cert, "C_lb", src.c_lb(), "-", kNaN, "derived");

  check(cert.checks, "A1 c0 + c1 <gradV,h> >= |h|^2", a1.slack >= 0.0, "slack " + fmt(a1.slack));
  check(cert.checks, "A3 smoothness <= L", sm.L <= lb.L * (1.0 + 1e-12), "measured " + fmt(sm.L));
  resolve_step(c, cert);
  return cert;
}

// ----- GMM ------------------------------------------------------------------

struct GmmSample {
  std::vector<VecD> s, h, g;
  PairSet pairs;
  double max_cond_var = 0;
  std::size_t worst_var = 0;
};

GmmSample gmm_sample(const ScenarioConfig& c, const gmm::DiscreteDataDist<double>& dist, std::uint64_t seed) {
  GmmSample out;
  const std::size_t n = static_cast<std::size_t>(c.certify.samples);
  const double ybar = dist.ybar();
  Rng rng(mix_seed(seed));
  auto draw = [&](Rng& r) {
    return (c.gmm.full_domain ? gmm::sample_suff_stats<double>(c.gmm.M, ybar, r)
                              : gmm::sample_reachable_suff_stats<double>(c.gmm.M, ybar, r))
        .flatten();
  };
  for (std::size_t i = 0; i < n; ++i) {
    const VecD s = draw(rng);
    const auto st = gmm::GmmSuffStats<double>::unflatten(s);
    out.s.push_back(s);
    out.h.push_back(gmm::mean_field(st, dist, c.gmm.eps));
    out.g.push_back(gmm::grad_lyapunov(st, dist, c.gmm.eps));
    const double v = gmm::conditional_variance(gmm::m_step(st, c.gmm.eps), dist);
    if (v > out.max_cond_var) out.max_cond_var = v, out.worst_var = i;
  }
  out.pairs = draw_pairs(n, rng, draw, convex);
  return out;
}

// Spectral norm of the finite-difference Jacobian of grad V at s, evaluated a
// hair inside the domain so the stencil stays feasible.
double gmm_jacobian_norm(const ScenarioConfig& c, const gmm::DiscreteDataDist<double>& dist, const VecD& s) {
  const Eigen::Index D = s.size();
  const Eigen::Index k = c.gmm.M - 1;
  VecD center = VecD::Zero(D);
  center.head(k).setConstant(1.0 / static_cast<double>(c.gmm.M));
  const VecD x = convex(s, center, 1e-5);
  const double step = 1e-7;
  auto gv = [&](const VecD& t) {
    return gmm::grad_lyapunov(gmm::GmmSuffStats<double>::unflatten(t), dist, c.gmm.eps);
  };
  Mat<double> J(D, D);
  for (Eigen::Index j = 0; j < D; ++j) {
    VecD hi = x, lo = x;
    hi(j) += step;
    lo(j) -= step;
    J.col(j) = (gv(hi) - gv(lo)) / (2.0 * step);
  }
  return spectral_norm(J);
}

bool gmm_feasible(const ScenarioConfig& c, const VecD& s, double ybar) {
  const auto st = gmm::GmmSuffStats<double>::unflatten(s);
  return c.gmm.full_domain ? st.in_compact_set(ybar, 0.0) : st.in_reachable_set(ybar, 0.0);
}

// sup ||grad V(s) - grad V(s')|| / ||s - s'||: the larger of the sampled pair
// ratios and a local ascent on the Jacobian norm started from the top points.
double gmm_smoothness(const ScenarioConfig& c, const gmm::DiscreteDataDist<double>& dist, const GmmSample& smp,
                      std::uint64_t seed, std::size_t* worst) {
  auto gv = [&](const VecD& s) {
    return gmm::grad_lyapunov(gmm::GmmSuffStats<double>::unflatten(s), dist, c.gmm.eps);
  };
  const auto sm = theory::certify_smoothness<double>(smp.pairs.pairs, gv);
  if (worst) *worst = sm.worst_pair;

  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < smp.s.size(); ++i) ranked.emplace_back(gmm_jacobian_norm(c, dist, smp.s[i]), i);
  const std::size_t top = std::min<std::size_t>(5, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(top), ranked.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  Rng rng(mix_seed(seed ^ 0x5a5a5a5aULL));
  const double ybar = dist.ybar();
  double best = sm.L;
  for (std::size_t t = 0; t < top; ++t) {
    VecD x = smp.s[ranked[t].second];
    double fx = ranked[t].first;
    double radius = 0.1 * ybar;
    for (int it = 0; it < 300; ++it, radius *= 0.985) {
      VecD y = x;
      for (Eigen::Index j = 0; j < y.size(); ++j) y(j) += radius * rng.uniform(-1.0, 1.0);
      if (!gmm_feasible(c, y, ybar)) continue;
      const double fy = gmm_jacobian_norm(c, dist, y);
      if (fy > fx) x = y, fx = fy;
    }
    best = std::max(best, fx);
  }
  return best;
}

Certification certify_gmm(const ScenarioConfig& c, const Model& m, std::uint64_t seed) {
  Certification cert;
  const auto& dist = *m.dist;
  const double margin = c.certify.margin;
  const GmmSample smp = gmm_sample(c, dist, seed);
  const auto a1 = theory::certify_a1<double>(smp.g, smp.h, std::nullopt, margin);
  const auto a2 = theory::certify_a2<double>(smp.g, smp.h, std::nullopt, margin);
  std::size_t worst_pair = 0;
  const double psi = gmm_smoothness(c, dist, smp, seed, &worst_pair);
  const double L = psi * (1.0 + margin);
  const double M = static_cast<double>(c.gmm.M);
  const double var_bound = 2.0 * M * dist.ybar() * dist.ybar();

  auto& k = cert.constants;
  k.c0 = measured(a1.offset);
  k.c1 = measured(a1.slope);
  k.d0 = measured(a2.offset);
  k.d1 = measured(a2.slope);
  k.L = measured(L);
  k.sigma0 = asserted(std::sqrt(var_bound));
  k.sigma1 = asserted(0.0);
  k.Upsilon = measured(a2.worst_ratio);

  add(cert, "c0", a1.offset, sample_label(a1.worst), a1.slack, "measured");
  add(cert, "c1", a1.slope, sample_label(a1.worst), a1.slack, "measured");
  add(cert, "upsilon", a1.worst_ratio, "-", kNaN, "measured");
  add(cert, "d0", a2.offset, sample_label(a2.worst), a2.slack, "measured");
  add(cert, "d1", a2.slope, sample_label(a2.worst), a2.slack, "measured");
  add(cert, "Upsilon", a2.worst_ratio, "-", kNaN, "measured");
  add(cert, "L", L, "pair " + std::to_string(worst_pair), L - psi, "measured");
  add(cert, "sigma0", std::sqrt(var_bound), sample_label(smp.worst_var), var_bound - smp.max_cond_var, "asserted");
  add(cert, "sigma1", 0.0, "-", kNaN, "asserted");
  add(cert, "Ybar", dist.ybar(), "-", kNaN, c.gmm.ybar ? "config" : "derived");

  check(cert.checks, "A1 upsilon > 0", a1.worst_ratio > 0.0, "min <gradV,h>/|h|^2 = " + fmt(a1.worst_ratio));
  check(cert.checks, "A1 c0 + c1 <gradV,h> >= |h|^2", a1.slack >= 0.0, "slack " + fmt(a1.slack));
  check(cert.checks, "A2 d0 + d1 |h| >= |gradV|", a2.slack >= 0.0, "slack " + fmt(a2.slack));
  check(cert.checks, "A3 psi finite", std::isfinite(psi) && psi > 0.0, "psi " + fmt(psi));
  check(cert.checks, "A4 conditional variance <= 2 M Ybar^2", smp.max_cond_var <= var_bound,
        "max " + fmt(smp.max_cond_var) + " vs " + fmt(var_bound));
  resolve_step(c, cert);
  return cert;
}

// ----- policy gradient ------------------------------------------------------

struct PgPoint {
  VecD theta, h, gJ;
  double rho = 0, K_R = 1;
  double l_ph0 = 0, sigma = 0, residual = 0, gap = 0;
};

PgPoint pg_point(const ScenarioConfig& c, const Model& m, const VecD& theta) {
  const auto& f = *m.mdp;
  const pg::SoftmaxPolicy<double> pol(f.features, f.mdp.num_actions(), theta);
  const auto chain = pg::analyze(f.mdp, pol);
  const auto erg = ergodicity_constants(chain.Q, static_cast<std::size_t>(c.pg.horizon));
  const auto pp = pg::pg_poisson(f.mdp, pol, c.pg.lambda);
  PgPoint p;
  p.theta = theta;
  p.h = pg::discounted_score_field(chain, c.pg.lambda);
  p.gJ = pg::discounted_score_field(chain, 1.0);
  p.rho = erg.rho;
  p.K_R = erg.K_R;
  p.l_ph0 = pp.l_ph0(c.pg.lambda);
  p.sigma = pg::pg_drift_bound(f.mdp, pp);
  p.residual = pp.residual;
  p.gap = (p.h - p.gJ).norm();
  return p;
}

struct PgSample {
  std::vector<PgPoint> points;
  PairSet pairs;
};

PgSample pg_sample(const ScenarioConfig& c, const Model& m, std::uint64_t seed) {
  PgSample out;
  const std::size_t n = static_cast<std::size_t>(c.certify.samples);
  const VecD center = VecD::Constant(m.mdp->features.cols(), c.pg.theta0);
  Rng rng(mix_seed(seed));
  auto draw = [&](Rng& r) { return uniform_box(center, c.pg.radius, r); };
  for (std::size_t i = 0; i < n; ++i) out.points.push_back(pg_point(c, m, draw(rng)));
  out.pairs = draw_pairs(n, rng, draw, convex);
  return out;
}

struct PgLipschitz {
  double upsilon = 0, l_ph1 = 0;
  std::size_t worst_upsilon = 0, worst_ph1 = 0;
};

PgLipschitz pg_lipschitz(const ScenarioConfig& c, const Model& m, const PairSet& p) {
  const auto& f = *m.mdp;
  PgLipschitz out;
  for (std::size_t i = 0; i < p.pairs.size(); ++i) {
    const auto& [a, b] = p.pairs[i];
    const double dist = (a - b).norm();
    if (!(dist > 0.0)) continue;
    const pg::SoftmaxPolicy<double> pa(f.features, f.mdp.num_actions(), a);
    const pg::SoftmaxPolicy<double> pb(f.features, f.mdp.num_actions(), b);
    const double up = (pg::exact_grad_J(f.mdp, pa) - pg::exact_grad_J(f.mdp, pb)).norm() / dist;
    if (up > out.upsilon) out.upsilon = up, out.worst_upsilon = i;
    const double ph = pg::pg_poisson_lipschitz_ratio(pg::pg_poisson(f.mdp, pa, c.pg.lambda),
                                                     pg::pg_poisson(f.mdp, pb, c.pg.lambda), c.pg.lambda, dist);
    if (ph > out.l_ph1) out.l_ph1 = ph, out.worst_ph1 = i;
  }
  return out;
}

Certification certify_pg(const ScenarioConfig& c, const Model& m, std::uint64_t seed) {
  Certification cert;
  cert.variant = theory::BoundVariant::Thm2;
  const double margin = c.certify.margin;
  const double lambda = c.pg.lambda;
  const PgSample smp = pg_sample(c, m, seed);
  const PgLipschitz lip = pg_lipschitz(c, m, smp.pairs);

  double rho = 0, K = 1, l0 = 0, sigma = 0, resid = 0;
  std::size_t w_rho = 0, w_K = 0, w_l0 = 0, w_sigma = 0;
  for (std::size_t i = 0; i < smp.points.size(); ++i) {
    const auto& p = smp.points[i];
    if (p.rho > rho) rho = p.rho, w_rho = i;
    if (p.K_R > K) K = p.K_R, w_K = i;
    if (p.l_ph0 > l0) l0 = p.l_ph0, w_l0 = i;
    if (p.sigma > sigma) sigma = p.sigma, w_sigma = i;
    resid = std::max(resid, p.residual);
  }
  const auto& mdp = m.mdp->mdp;
  const double bbar = pg::SoftmaxPolicy<double>(m.mdp->features, mdp.num_actions()).bbar();
  ErgodicityEstimate<double> erg;
  erg.rho = rho;
  erg.K_R = K;
  const double Gamma = pg::bias_constant(bbar, mdp.r_max(), erg);
  const double d0 = (1.0 - lambda) * Gamma;
  const double c0 = d0 * d0;

  std::vector<VecD> gv, hv;
  double worst_gap_slack = std::numeric_limits<double>::infinity();
  std::size_t w_gap = 0;
  for (std::size_t i = 0; i < smp.points.size(); ++i) {
    gv.push_back(smp.points[i].gJ);
    hv.push_back(smp.points[i].h);
    const double s = pg::bias_bound(bbar, mdp.r_max(), erg, lambda) - smp.points[i].gap;
    if (s < worst_gap_slack) worst_gap_slack = s, w_gap = i;
  }
  const auto a1 = theory::certify_a1<double>(gv, hv, 2.0);
  const auto a2 = theory::certify_a2<double>(gv, hv, 1.0);
  const std::size_t v1 = [&] {
    theory::LinearCertificate<double> k;
    k.offset = c0, k.slope = 2.0;
    return theory::a1_violations(k, gv, hv);
  }();
  const std::size_t v2 = [&] {
    theory::LinearCertificate<double> k;
    k.offset = d0, k.slope = 1.0;
    return theory::a2_violations(k, gv, hv);
  }();

  const double L = lip.upsilon * (1.0 + margin);
  const double l1 = lip.l_ph1 * (1.0 + margin);
  auto& k = cert.constants;
  k.c0 = asserted(c0);
  k.c1 = asserted(2.0);
  k.d0 = asserted(d0);
  k.d1 = asserted(1.0);
  k.L = measured(L);
  k.sigma = measured(sigma);
  k.L_PH0 = measured(l0);
  k.L_PH1 = measured(l1);
  k.rho = measured(rho);
  k.K_R = measured(K);
  k.lambda = asserted(lambda);
  k.Gamma = measured(Gamma);
  k.Upsilon = measured(lip.upsilon);

  add(cert, "c0", c0, sample_label(a1.worst), c0 - a1.offset, "asserted");
  add(cert, "c1", 2.0, "-", kNaN, "asserted");
  add(cert, "d0", d0, sample_label(a2.worst), d0 - a2.offset, "asserted");
  add(cert, "d1", 1.0, "-", kNaN, "asserted");
  add(cert, "L", L, "pair " + std::to_string(lip.worst_upsilon), L - lip.upsilon, "measured");
  add(cert, "sigma", sigma, sample_label(w_sigma), kNaN, "measured");
  add(cert, "L_PH0", l0, sample_label(w_l0), kNaN, "measured");
  add(cert, "L_PH1", l1, "pair " + std::to_string(lip.worst_ph1), l1 - lip.l_ph1, "measured");
  add(cert, "rho", rho, sample_label(w_rho), kNaN, "measured");
  add(cert, "K_R", K, sample_label(w_K), kNaN, "measured");
  add(cert, "lambda", lambda, "-", kNaN, "config");
  add(cert, "Gamma", Gamma, "-", kNaN, "derived");
  add(cert, "Upsilon", lip.upsilon, "pair " + std::to_string(lip.worst_upsilon), kNaN, "measured");
  add(cert, "bias_gap_bound", pg::bias_bound(bbar, mdp.r_max(), erg, lambda), sample_label(w_gap),
      worst_gap_slack, "derived");
  add(cert, "poisson_residual", resid, "-", 1e-10 - resid, "measured");

  check(cert.checks, "A1 (1-lambda)^2 Gamma^2 + 2 <gradJ,h> >= |h|^2", v1 == 0,
        std::to_string(v1) + " violations");
  check(cert.checks, "A2 |gradJ| <= |h| + (1-lambda) Gamma", v2 == 0, std::to_string(v2) + " violations");
  check(cert.checks, "bias gap <= 2 bbar Rmax K_R (1-lambda)/(1-rho)^2", worst_gap_slack >= 0.0,
        "slack " + fmt(worst_gap_slack));
  check(cert.checks, "rho < 1", rho < 1.0, "rho " + fmt(rho));
  check(cert.checks, "Poisson residual <= 1e-10", resid <= 1e-10, "residual " + fmt(resid));
  resolve_step(c, cert);
  return cert;
}

std::size_t count_if_bad(const std::vector<double>& slack) {
  return static_cast<std::size_t>(std::count_if(slack.begin(), slack.end(), [](double s) { return s < 0.0; }));
}

double value_of(const Certification& cert, const std::string& name) {
  for (const auto& r : cert.rows)
    if (r.constant == name) return r.value;
  throw std::logic_error("certificate has no constant " + name);
}

// ----- replicate runs -------------------------------------------------------

struct ReplicateOut {
  std::vector<double> value, target, v0n;
  std::optional<std::string> failure;
};

ReplicateOut run_replicate(const ScenarioConfig& c, const Model& m, const StepSizeSchedule<double>& sched,
                           const VecD& theta0, std::uint64_t seed) {
  const std::vector<std::size_t>& grid = c.n_grid;
  const std::size_t n_max = grid.back();
  ReplicateOut out;
  auto finish = [&](const SaTrace<double>& tr, const VecD& target_norms, auto&& lyap) {
    out.value = prefix_stopped_values(sched, *tr.mean_field_sq_norms, grid);
    out.target = prefix_stopped_values(sched, target_norms, grid);
    const double v0 = lyap(VecD(tr.theta(0)));
    for (std::size_t n : grid) out.v0n.push_back(v0 - lyap(VecD(tr.theta(n + 1))));
  };
  switch (c.scenario) {
    case Scenario::MartingaleQuadratic: {
      auto src = make_martingale(c);
      const auto tr = run_sa(src, sched, n_max, theta0, seed);
      finish(tr, *tr.mean_field_sq_norms, [&](const VecD& t) { return src.lyapunov_value(t); });
      break;
    }
    case Scenario::LowerBound: {
      theory::LowerBoundSource src(c.lowerbound.mu, c.lowerbound.L, c.lowerbound.eps_noise);
      const auto tr = run_sa(src, sched, n_max, theta0, seed);
      finish(tr, *tr.mean_field_sq_norms, [&](const VecD& t) { return src.lyapunov_value(t); });
      break;
    }
    case Scenario::Gmm: {
      gmm::RoemSource<double> src(*m.dist, c.gmm.eps);
      const auto tr = run_sa(src, sched, n_max, theta0, seed);
      VecD g(tr.iterates.cols() - 1);
      for (Eigen::Index k = 0; k < g.size(); ++k)
        g(k) = gmm::grad_lyapunov(gmm::GmmSuffStats<double>::unflatten(tr.iterates.col(k)), *m.dist, c.gmm.eps)
                   .squaredNorm();
      finish(tr, g, [&](const VecD& s) { return src.lyapunov_value(s); });
      break;
    }
    case Scenario::Pg: {
      auto src = make_pg_source(c, m);
      const auto tr = run_sa(src, sched, n_max, theta0, seed);
      VecD g(tr.iterates.cols() - 1);
      for (Eigen::Index k = 0; k < g.size(); ++k) g(k) = src.grad_J(tr.iterates.col(k)).squaredNorm();
      // V = -J for the descent form
      finish(tr, g, [&](const VecD& t) { return -src.average_reward_at(t); });
      break;
    }
  }
  return out;
}

}  // namespace

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

StepSizeSchedule<double> schedule_of(const ScenarioConfig& config, double scale) {
  return config.schedule.kind == ScheduleKind::Constant ? StepSizeSchedule<double>::constant(scale)
                                                        : StepSizeSchedule<double>::inverse_sqrt(scale);
}

Certification certify_scenario(const ScenarioConfig& config, std::uint64_t seed) {
  const Model m = load_model(config);
  switch (config.scenario) {
    case Scenario::MartingaleQuadratic: return certify_martingale(config, seed);
    case Scenario::LowerBound: return certify_lowerbound(config, seed);
    case Scenario::Gmm: return certify_gmm(config, m, seed);
    case Scenario::Pg: return certify_pg(config, m, seed);
  }
  throw std::logic_error("unknown scenario");
}

std::vector<CheckLine> revalidate(const ScenarioConfig& config, const Certification& cert, std::uint64_t seed) {
  std::vector<CheckLine> out;
  const Model m = load_model(config);
  const auto& k = cert.constants;
  auto a1_line = [&](const std::vector<VecD>& g, const std::vector<VecD>& h) {
    theory::LinearCertificate<double> lc;
    lc.offset = k.c0->value, lc.slope = k.c1->value;
    const std::size_t bad = theory::a1_violations(lc, g, h);
    check(out, "fresh sample: A1", bad == 0, std::to_string(bad) + " violations of c0 = " + fmt(lc.offset) +
                                                  ", c1 = " + fmt(lc.slope));
  };
  auto a2_line = [&](const std::vector<VecD>& g, const std::vector<VecD>& h) {
    theory::LinearCertificate<double> lc;
    lc.offset = k.d0->value, lc.slope = k.d1->value;
    const std::size_t bad = theory::a2_violations(lc, g, h);
    check(out, "fresh sample: A2", bad == 0, std::to_string(bad) + " violations of d0 = " + fmt(lc.offset) +
                                                  ", d1 = " + fmt(lc.slope));
  };
  auto smooth_line = [&](double measured_l) {
    check(out, "fresh sample: A3", measured_l <= k.L->value * (1.0 + 1e-12),
          "measured " + fmt(measured_l) + " vs L = " + fmt(k.L->value));
  };

  switch (config.scenario) {
    case Scenario::MartingaleQuadratic:
    case Scenario::LowerBound: {
      const Certification fresh = config.scenario == Scenario::LowerBound ? certify_lowerbound(config, seed)
                                                                          : certify_martingale(config, seed);
      for (auto line : fresh.checks) {
        line.name = "fresh sample: " + line.name;
        out.push_back(line);
      }
      if (fresh.constants.c0->value > k.c0->value)
        check(out, "fresh sample: c0 within certificate", false, "fresh c0 " + fmt(fresh.constants.c0->value));
      break;
    }
    case Scenario::Gmm: {
      const GmmSample smp = gmm_sample(config, *m.dist, seed);
      a1_line(smp.g, smp.h);
      a2_line(smp.g, smp.h);
      smooth_line(gmm_smoothness(config, *m.dist, smp, seed, nullptr));
      const double bound = k.sigma0->value * k.sigma0->value;
      check(out, "fresh sample: A4", smp.max_cond_var <= bound,
            "max conditional variance " + fmt(smp.max_cond_var) + " vs " + fmt(bound));
      break;
    }
    case Scenario::Pg: {
      const PgSample smp = pg_sample(config, m, seed);
      std::vector<VecD> g, h;
      std::vector<double> gap_slack, ph0_slack, sigma_slack;
      const double gap_bound = value_of(cert, "bias_gap_bound");
      bool rho_ok = true;
      for (const auto& p : smp.points) {
        g.push_back(p.gJ), h.push_back(p.h);
        gap_slack.push_back(gap_bound - p.gap);
        ph0_slack.push_back(k.L_PH0->value - p.l_ph0);
        sigma_slack.push_back(k.sigma->value - p.sigma);
        rho_ok = rho_ok && p.rho <= k.rho->value && p.K_R <= k.K_R->value;
      }
      a1_line(g, h);
      a2_line(g, h);
      const PgLipschitz lip = pg_lipschitz(config, m, smp.pairs);
      smooth_line(lip.upsilon);
      check(out, "fresh sample: bias gap bound", count_if_bad(gap_slack) == 0,
            std::to_string(count_if_bad(gap_slack)) + " violations");
      check(out, "fresh sample: L_PH0", count_if_bad(ph0_slack) == 0,
            std::to_string(count_if_bad(ph0_slack)) + " violations");
      check(out, "fresh sample: L_PH1", lip.l_ph1 <= k.L_PH1->value,
            "measured " + fmt(lip.l_ph1) + " vs " + fmt(k.L_PH1->value));
      check(out, "fresh sample: sigma", count_if_bad(sigma_slack) == 0,
            std::to_string(count_if_bad(sigma_slack)) + " violations");
      check(out, "fresh sample: rho, K_R", rho_ok, rho_ok ? "within certificate" : "exceeded");
      break;
    }
  }
  return out;
}

ScenarioResult run_scenario(const ScenarioConfig& config) {
  if (config.n_grid.empty()) throw std::invalid_argument("empty n grid");
  ScenarioResult res;
  const Model m = load_model(config);
  res.certification = certify_scenario(config, config.certify.seed);
  const Certification& cert = res.certification;
  const StepSizeSchedule<double> sched = schedule_of(config, cert.step_scale);
  const VecD theta0 = initial_theta(config, m);

  const std::size_t R = config.replicates;
  for (std::size_t r = 0; r < R; ++r) res.replicate_seeds.push_back(config.seed + r);

  std::vector<ReplicateOut> outs(R);
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= R) return;
      try {
        outs[r] = run_replicate(config, m, sched, theta0, res.replicate_seeds[r]);
      } catch (const NumericalFailure& e) {
        outs[r].failure = e.what();
      } catch (...) {
        std::lock_guard<std::mutex> lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        next.store(R);
        return;
      }
    }
  };
  res.threads_used = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(config.threads), R));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < res.threads_used; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (fatal) std::rethrow_exception(fatal);

  for (std::size_t r = 0; r < R; ++r)
    if (outs[r].failure) res.failures.push_back({r, *outs[r].failure});

  const double lb_clb = cert.lower_bound ? value_of(cert, "C_lb") : 0.0;
  for (std::size_t g = 0; g < config.n_grid.size(); ++g) {
    const std::size_t n = config.n_grid[g];
    RateRow row;
    row.n = n;
    row.replicates = R;
    row.failed = res.failures.size();
    std::vector<double> val, tgt, v0n, rhs;
    bool applicable = true;
    double S1 = 0, S2 = 0;
    if (cert.lower_bound) S1 = sched.sum(n), S2 = sched.sum_sq(n);
    for (std::size_t r = 0; r < R; ++r) {
      if (outs[r].failure) continue;
      val.push_back(outs[r].value[g]);
      tgt.push_back(outs[r].target[g]);
      v0n.push_back(outs[r].v0n[g]);
      if (cert.lower_bound) {
        rhs.push_back((outs[r].v0n[g] + lb_clb * S2) / S1);
      } else if (applicable) {
        try {
          rhs.push_back(theory::theorem_bound(cert.constants, sched, n, outs[r].v0n[g], cert.variant).rhs);
        } catch (const theory::BoundInapplicable&) {
          applicable = false;
        }
      }
    }
    row.value = theory::summarize(val);
    row.target = theory::summarize(tgt);
    row.v0n = theory::summarize(v0n);
    row.bound = cert.lower_bound ? "lower" : cert.variant == theory::BoundVariant::Thm1 ? "thm1" : "thm2";
    if (applicable && !val.empty()) {
      const auto bc = theory::one_sided_check(val, rhs, cert.lower_bound ? theory::Side::Lower : theory::Side::Upper);
      row.rhs = bc.rhs;
      row.diff = bc.diff;
      row.bound_ok = bc.ok;
    } else {
      row.rhs = {kNaN, kNaN, 0};
      row.diff = {kNaN, kNaN, 0};
    }
    res.rows.push_back(row);
  }
  return res;
}

}  // namespace bsa::bench
