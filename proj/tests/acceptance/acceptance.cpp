// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance <data dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "bsa/bsa.hpp"
#include "bsa/bench/config.hpp"
#include "bsa/bench/report.hpp"
#include "bsa/bench/scenario.hpp"
#include "bsa/io.hpp"

using namespace bsa;
namespace bb = bsa::bench;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Mat<double> random_kernel(Eigen::Index m, Rng& rng) {
  Mat<double> p(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) p(i, j) = 0.05 + rng.uniform01();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Vec<double> random_theta(Eigen::Index d, Rng& rng, double r) {
  Vec<double> t(d);
  for (auto& x : t) x = rng.uniform(-r, r);
  return t;
}

// 1
void poisson_residuals() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst_res = 0, worst_series = 0;
  for (int draw = 0; draw < 50; ++draw) {
    const Mat<double> p = random_kernel(10, rng);
    const FiniteKernel<double> k(p);
    Mat<double> h(10, 3);
    for (auto& x : h.reshaped()) x = rng.uniform(-1, 1);
    const Vec<double> mean = h.transpose() * stationary_distribution(k);
    const auto sol = solve_poisson(k, h, mean);
    worst_res = std::max(worst_res, sol.residual);
    Mat<double> acc = Mat<double>::Zero(10, 3), pt = h;
    const Mat<double> centre = Vec<double>::Ones(10) * mean.transpose();
    for (int t = 0; t <= 200; ++t) acc += pt - centre, pt = p * pt;
    worst_series = std::max(worst_series, (sol.H_hat - acc).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  report(1, "Poisson residual", worst_res <= 1e-10 && worst_series <= 1e-8 && secs < 1.0,
         fmt("max residual %.3g (<= 1e-10), max series gap %.3g (<= 1e-8), %.3f s (< 1 s)", worst_res, worst_series,
             secs));
}

struct TimedRun {
  bb::ScenarioResult result;
  double seconds = 0;
};

TimedRun timed(const bb::ScenarioConfig& c) {
  const auto t0 = Clock::now();
  TimedRun r{bb::run_scenario(c), 0};
  r.seconds = seconds_since(t0);
  return r;
}

std::vector<double> column(const bb::ScenarioResult& r, bool target) {
  std::vector<double> v;
  for (const auto& row : r.rows) v.push_back(target ? row.target.mean : row.value.mean);
  return v;
}

std::vector<double> grid(const bb::ScenarioResult& r) {
  std::vector<double> v;
  for (const auto& row : r.rows) v.push_back(static_cast<double>(row.n));
  return v;
}

std::string rows_summary(const bb::ScenarioResult& r) {
  std::string s;
  for (const auto& row : r.rows)
    s += fmt(" n=%zu %.4g%s%.4g", row.n, row.value.mean, row.bound == "lower" ? ">=" : "<=", row.rhs.mean);
  return s;
}

bool all_bounds_ok(const bb::ScenarioResult& r) {
  if (r.rows.empty()) return false;
  for (const auto& row : r.rows)
    if (!row.bound_ok.value_or(false) || row.failed) return false;
  return true;
}

// 2
void theorem1_validity(const TimedRun& run, const bb::ScenarioConfig& c) {
  const bool shape = c.martingale.dim == 5 && c.replicates == 200 &&
                     c.n_grid == std::vector<std::size_t>{100, 1000, 10000} && !c.schedule.c;
  const bool ok = shape && all_bounds_ok(run.result) && run.seconds < 30;
  report(2, "first-theorem validity", ok,
         fmt("step c = cap = %.6g;", run.result.certification.step_scale) + rows_summary(run.result) +
             fmt(" (2-SE slack), %.1f s (< 30 s)", run.seconds));
}

// 3
void gmm_rate(const TimedRun& run, const bb::ScenarioConfig& c) {
  const bool shape = c.gmm.M == 3 && c.gmm.eps == 0.1 && c.replicates == 100 && c.n_grid.size() == 7 &&
                     c.n_grid.front() == 100 && c.n_grid.back() == 100000;
  const auto fit = theory::fit_rate(grid(run.result), column(run.result, false));
  const double slope = fit.vs_log_n.slope, r2 = fit.vs_log_n.r2;
  const bool ok = shape && slope >= -0.75 && slope <= -0.30 && r2 >= 0.9 && run.seconds < 600;
  report(3, "GMM rate reproduction", ok,
         fmt("slope %.4f in [-0.75, -0.30], r2 %.5f (>= 0.9), %zu failed replicates, %.1f s (< 600 s)", slope, r2,
             run.result.failures.size(), run.seconds));
}

// 4
void lower_bound(const TimedRun& run, const bb::ScenarioConfig& c) {
  const bool shape = c.lowerbound.mu == 1 && c.lowerbound.L == 1 && c.lowerbound.eps_noise == 1 &&
                     c.replicates == 200 && c.n_grid.size() == 7;
  const auto fit = theory::fit_rate(grid(run.result), column(run.result, false));
  const double slope = fit.vs_log_n.slope;
  const bool ok = shape && all_bounds_ok(run.result) && slope >= -0.75 && slope <= -0.30;
  report(4, "lower bound", ok,
         fmt("LHS >= RHS at all %zu n (2-SE slack): %s; slope %.4f in [-0.75, -0.30]", run.result.rows.size(),
             all_bounds_ok(run.result) ? "yes" : "no", slope));
}

// 5
void pg_bias(const io::MdpFile& f) {
  const auto t0 = Clock::now();
  const pg::SoftmaxPolicy<double> pol(f.features, f.mdp.num_actions());
  const auto erg = ergodicity_constants(pg::joint_kernel(f.mdp, pol), 200);
  bool ok = true;
  std::vector<double> ratio;
  std::string detail;
  for (double lambda : {0.5, 0.9, 0.99}) {
    const double gap = pg::bias_gap(f.mdp, pol, lambda);
    const double bound = pg::bias_bound(pol.bbar(), f.mdp.r_max(), erg, lambda);
    ok = ok && gap <= bound;
    ratio.push_back(gap / (1 - lambda));
    detail += fmt("lambda %.2f gap %.4g <= %.4g; ", lambda, gap, bound);
  }
  const auto [lo, hi] = std::minmax_element(ratio.begin(), ratio.end());
  const double secs = seconds_since(t0);
  ok = ok && *hi / *lo <= 2.0 && secs < 5.0;
  report(5, "policy-gradient bias scaling", ok,
         detail + fmt("rho %.4f K_R %.4f; gap/(1-lambda) spread %.4f (<= 2); %.3f s (< 5 s)", erg.rho, erg.K_R,
                      *hi / *lo, secs));
}

// 6
void pg_gradient(const io::MdpFile& f) {
  pg::SoftmaxPolicy<double> pol(f.features, f.mdp.num_actions());
  Rng rng(606);
  double worst = 0;
  for (int r = 0; r < 20; ++r) {
    const auto p = pol.with_theta(random_theta(pol.dim(), rng, 1.0));
    const Vec<double> g = pg::exact_grad_J(f.mdp, p);
    Vec<double> fd(pol.dim());
    for (Eigen::Index i = 0; i < pol.dim(); ++i) {
      Vec<double> a = p.theta(), b = a;
      a(i) += 1e-5;
      b(i) -= 1e-5;
      fd(i) = (pg::average_reward(f.mdp, p.with_theta(a)) - pg::average_reward(f.mdp, p.with_theta(b))) / 2e-5;
    }
    worst = std::max(worst, (fd - g).norm() / g.norm());
  }
  report(6, "exact gradient cross-validation", worst <= 1e-6,
         fmt("max relative error %.3g over 20 parameters (<= 1e-6, h = 1e-5)", worst));
}

// 7
void pg_invariants(const io::MdpFile& f) {
  pg::SoftmaxPolicy<double> pol(f.features, f.mdp.num_actions());
  Rng rng(707);
  std::size_t score_bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = pol.with_theta(random_theta(pol.dim(), rng, 3.0));
    const auto s = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(f.mdp.num_states()));
    const auto a = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(f.mdp.num_actions()));
    score_bad += pg::grad_log_policy(p, s, a).norm() > 2 * p.bbar();
  }
  const double lambda = 0.9;
  pg::SoftmaxPolicy<double> moving = pol;
  pg::PgState<double> st{0, 0, Vec<double>::Zero(pol.dim()), lambda};
  Vec<double> theta = Vec<double>::Zero(pol.dim());
  std::size_t trace_bad = 0;
  double ln = 1;
  for (std::size_t n = 1; n <= 100000; ++n) {
    std::tie(st, theta) = pg::pg_step(st, theta, f.mdp, moving, 1e-3 / std::sqrt(static_cast<double>(n)), rng);
    ln *= lambda;
    trace_bad += st.G.norm() > 2 * pol.bbar() * (1 - ln) / (1 - lambda) * (1 + 1e-12);
  }
  report(7, "score and trace invariants", score_bad == 0 && trace_bad == 0,
         fmt("score violations %zu / 10000, trace violations %zu / 100000", score_bad, trace_bad));
}

// 8
void gmm_certificates(const bb::ScenarioConfig& c) {
  const auto dist = io::load_data_dist_csv(c.gmm.data, c.gmm.ybar);
  const double ybar = dist.ybar(), eps = c.gmm.eps;
  const Eigen::Index M = c.gmm.M;
  Rng rng(808);
  double upsilon = INFINITY;
  for (int i = 0; i < 1000; ++i) {
    const auto s = gmm::sample_reachable_suff_stats<double>(M, ybar, rng);
    const Vec<double> h = gmm::mean_field(s, dist, eps);
    if (h.norm() <= 1e-8) continue;
    upsilon = std::min(upsilon, gmm::grad_lyapunov(s, dist, eps).dot(h) / h.squaredNorm());
  }
  double stationarity = 0;
  for (int i = 0; i < 100; ++i) {
    const auto s = gmm::sample_suff_stats<double>(M, ybar, rng);
    const auto theta = gmm::m_step(s, eps);
    const Vec<double> x = theta.flatten();
    Vec<double> g(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      Vec<double> a = x, b = x;
      a(j) += 1e-6;
      b(j) -= 1e-6;
      g(j) = (gmm::penalized_objective(s, gmm::GmmParams<double>::unflatten(a, M), eps) -
              gmm::penalized_objective(s, gmm::GmmParams<double>::unflatten(b, M), eps)) /
             2e-6;
    }
    stationarity = std::max(stationarity, g.norm());
  }
  double var_ratio = 0;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Index K = 1 + i % 12;
    const Eigen::Index m = 2 + i % 4;
    const double yb = 0.5 + 4 * rng.uniform01();
    Vec<double> y(K), p(K), w(m);
    for (Eigen::Index k = 0; k < K; ++k) y(k) = rng.uniform(-yb, yb), p(k) = 0.1 + rng.uniform01();
    for (auto& x : w) x = 0.05 + rng.uniform01();
    w /= w.sum();
    const gmm::DiscreteDataDist<double> d(y, p / p.sum(), yb);
    gmm::GmmParams<double> th{w.head(m - 1), random_theta(m, rng, 2 * yb)};
    var_ratio = std::max(var_ratio, gmm::conditional_variance(th, d) / (2.0 * static_cast<double>(m) * yb * yb));
  }
  report(8, "GMM certificates", upsilon > 0 && stationarity <= 1e-6 && var_ratio <= 1,
         fmt("min <gradV,h>/|h|^2 = %.4g (> 0) on 1000 s; M-step residual %.3g (<= 1e-6) on 100 s; "
             "max variance / 2 M Ybar^2 = %.4f (<= 1) on 100 draws",
             upsilon, stationarity, var_ratio));
}

// 9
void reduction_identity() {
  Rng rng(909);
  std::size_t mismatched = 0, total = 0;
  for (int r = 0; r < 200; ++r) {
    theory::AssumptionConstants<double> k;
    const double c1 = 0.5 + rng.uniform01(), L = 0.5 + rng.uniform01(), sig = rng.uniform01();
    k.c0 = theory::Constant<double>::asserted(rng.uniform01());
    k.c1 = theory::Constant<double>::asserted(c1);
    k.L = theory::Constant<double>::asserted(L);
    k.sigma0 = theory::Constant<double>::asserted(sig);
    k.sigma = theory::Constant<double>::asserted(sig);
    k.d0 = theory::Constant<double>::asserted(rng.uniform01());
    k.d1 = theory::Constant<double>::asserted(0.5 + rng.uniform01());
    k.L_PH0 = theory::Constant<double>::asserted(0.0);
    k.L_PH1 = theory::Constant<double>::asserted(0.0);
    const auto s = r % 2 ? StepSizeSchedule<double>::inverse_sqrt(0.4 / (c1 * L))
                         : StepSizeSchedule<double>::constant(0.3 / (c1 * L));
    const std::size_t n = 1 + rng() % 5000;
    const double v0 = rng.uniform(0, 3);
    const auto a = theory::theorem_bound(k, s, n, v0, theory::BoundVariant::Thm1);
    const auto b = theory::theorem_bound(k, s, n, v0, theory::BoundVariant::Thm2);
    mismatched += !(a.rhs == b.rhs && b.C_h == 0 && b.C_gamma == 0 && b.C_0n == 0);
    ++total;
  }
  report(9, "reduction identity", mismatched == 0, fmt("%zu / %zu instances differ (exact comparison)", mismatched, total));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <data dir>\n");
    return 2;
  }
  const std::string data = argv[1];
  try {
    poisson_residuals();

    const char* names[] = {"martingale.cfg", "gmm.cfg", "lowerbound.cfg", "pg.cfg"};
    std::vector<bb::ScenarioConfig> configs;
    std::vector<TimedRun> single, multi;
    for (const char* n : names) {
      bb::ScenarioConfig c = bb::load_config(data + "/" + n);
      c.threads = 1;
      configs.push_back(c);
      single.push_back(timed(c));
    }
    theorem1_validity(single[0], configs[0]);
    gmm_rate(single[1], configs[1]);
    lower_bound(single[2], configs[2]);

    const auto mdp = io::load_mdp(configs[3].pg.mdp);
    pg_bias(mdp);
    pg_gradient(mdp);
    pg_invariants(mdp);
    gmm_certificates(configs[1]);
    reduction_identity();

    bool same = true;
    std::string detail;
    for (std::size_t i = 0; i < configs.size(); ++i) {
      bb::ScenarioConfig c8 = configs[i];
      c8.threads = 8;
      const auto again = bb::run_scenario(configs[i]);
      const auto eight = bb::run_scenario(c8);
      const std::string ref = bb::rates_csv(single[i].result) + bb::certificates_csv(single[i].result.certification);
      const bool ok1 = ref == bb::rates_csv(again) + bb::certificates_csv(again.certification);
      const bool ok8 = ref == bb::rates_csv(eight) + bb::certificates_csv(eight.certification);
      same = same && ok1 && ok8;
      detail += fmt("%s%s: rerun %s, 8 threads %s", i ? "; " : "", names[i], ok1 ? "identical" : "DIFFERS",
                    ok8 ? "identical" : "DIFFERS");
    }
    report(10, "determinism", same, detail);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
