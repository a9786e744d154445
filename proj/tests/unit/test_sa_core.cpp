#include <doctest.h>

#include <cmath>
#include <vector>

#include "bsa/sa_core.hpp"
#include "bsa/theory.hpp"

using bsa::Mat;
using bsa::Rng;
using bsa::StepSizeSchedule;
using bsa::Vec;

namespace {

struct ZeroDrift {
  Vec<double> next_drift(const Vec<double>& t, Rng&) const { return Vec<double>::Zero(t.size()); }
};

struct IdentityDrift {
  Vec<double> next_drift(const Vec<double>& t, Rng&) const { return t; }
  Vec<double> exact_mean_field(const Vec<double>& t) const { return t; }
};

struct Blowup {
  Vec<double> next_drift(const Vec<double>& t, Rng&) const { return -1e200 * t; }
};

Vec<double> scalar(double x) {
  Vec<double> v(1);
  v(0) = x;
  return v;
}

}  // namespace

TEST_CASE("stopping distribution: constant schedule is uniform") {
  const auto p = bsa::stopping_distribution(StepSizeSchedule<double>::constant(0.3), 4);
  REQUIRE(p.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(p(i) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("stopping distribution: inverse sqrt, n = 1") {
  const auto p = bsa::stopping_distribution(StepSizeSchedule<double>::inverse_sqrt(1.0), 1);
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(p(0) - 1.0 / (1.0 + r)) < 1e-15);
  CHECK(std::abs(p(1) - r / (1.0 + r)) < 1e-15);
  CHECK(std::abs(p(0) - 0.58579) < 1e-5);
  CHECK(std::abs(p(1) - 0.41421) < 1e-5);
}

TEST_CASE("stopping distribution: n = 0 and large n stay normalized") {
  const auto s = StepSizeSchedule<double>::inverse_sqrt(0.7);
  const auto p0 = bsa::stopping_distribution(s, 0);
  REQUIRE(p0.size() == 1);
  CHECK(p0(0) == 1.0);
  const auto p = bsa::stopping_distribution(s, 1000000);
  CHECK((p.array() >= 0).all());
  CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
  for (Eigen::Index l = 1; l < p.size(); l += 9973) CHECK(p(l) <= p(l - 1));
}

TEST_CASE("expected stopped value") {
  Vec<double> v(3);
  v << 4, 2, 0;
  CHECK(bsa::expected_stopped_value(StepSizeSchedule<double>::constant(1.0), v) == doctest::Approx(2.0));
  const auto s = StepSizeSchedule<double>::inverse_sqrt(1.0);
  Vec<double> ones(2);
  ones << 1, 1;
  CHECK(bsa::expected_stopped_value(s, ones) == doctest::Approx(1.0).epsilon(1e-15));
  Vec<double> two_zero(2);
  two_zero << 2, 0;
  const double w0 = 1.0 / (1.0 + 1.0 / std::sqrt(2.0));
  CHECK(std::abs(bsa::expected_stopped_value(s, two_zero) - 2 * w0) < 1e-15);
  CHECK(std::abs(bsa::expected_stopped_value(s, two_zero) - 1.17157) < 1e-5);
  CHECK_THROWS_AS(bsa::expected_stopped_value(s, Vec<double>()), std::invalid_argument);
}

TEST_CASE("prefix stopped values equal independent truncated sums") {
  const auto s = StepSizeSchedule<double>::inverse_sqrt(0.5);
  Rng rng(3);
  Vec<double> v(200);
  for (auto& x : v) x = rng.uniform01();
  const std::vector<std::size_t> grid{0, 3, 50, 199};
  const auto got = bsa::prefix_stopped_values(s, v, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double want = bsa::expected_stopped_value(s, v.head(static_cast<Eigen::Index>(grid[g] + 1)));
    CHECK(std::abs(got[g] - want) < 1e-14);
  }
  CHECK_THROWS_AS(bsa::prefix_stopped_values(s, v, std::vector<std::size_t>{5, 5}), std::invalid_argument);
  CHECK_THROWS_AS(bsa::prefix_stopped_values(s, v, std::vector<std::size_t>{200}), std::invalid_argument);
}

TEST_CASE("sample stopping index") {
  Rng rng(1);
  const auto s = StepSizeSchedule<double>::inverse_sqrt(1.0);
  for (int i = 0; i < 100; ++i) CHECK(bsa::sample_stopping_index(s, 0, rng) == 0);

  auto frequency_test = [](const StepSizeSchedule<double>& sched, std::size_t n, std::uint64_t seed) {
    const std::size_t draws = 1000000;
    const auto p = bsa::stopping_distribution(sched, n);
    std::vector<double> count(n + 1, 0.0);
    Rng r(seed);
    for (std::size_t i = 0; i < draws; ++i) count[bsa::sample_stopping_index(sched, n, r)] += 1;
    for (std::size_t l = 0; l <= n; ++l) {
      const double mean = draws * p(static_cast<Eigen::Index>(l));
      const double sd = std::sqrt(draws * p(static_cast<Eigen::Index>(l)) * (1 - p(static_cast<Eigen::Index>(l))));
      CHECK(std::abs(count[l] - mean) <= 3.5 * sd);
    }
  };
  frequency_test(StepSizeSchedule<double>::constant(0.2), 9, 11);
  frequency_test(s, 9, 12);

  Rng a(5), b(5);
  for (int i = 0; i < 50; ++i) CHECK(bsa::sample_stopping_index(s, 40, a) == bsa::sample_stopping_index(s, 40, b));
}

TEST_CASE("schedule certificates") {
  const auto inv = StepSizeSchedule<double>::inverse_sqrt(0.37);
  const auto cert = inv.certify(1000000);
  CHECK(cert.ok());
  CHECK(inv.ratio_bound() == doctest::Approx(std::sqrt(2.0)));
  CHECK(inv.decrement_bound() == doctest::Approx((std::sqrt(2.0) - 1) / (std::sqrt(2.0) * 0.37)));
  CHECK(StepSizeSchedule<double>::constant(0.1).certify(1000).ok());
  CHECK(inv.gamma(4) == doctest::Approx(0.37 / 2));
  CHECK_THROWS_AS(inv.gamma(0), std::invalid_argument);
  CHECK_THROWS_AS(StepSizeSchedule<double>::constant(0.0), std::invalid_argument);
  CHECK_THROWS_AS(StepSizeSchedule<double>::inverse_sqrt(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(StepSizeSchedule<double>::inverse_sqrt(NAN), std::invalid_argument);
  double s1 = 0, s2 = 0;
  for (int k = 1; k <= 11; ++k) s1 += inv.gamma(k), s2 += inv.gamma(k) * inv.gamma(k);
  CHECK(inv.sum(10) == doctest::Approx(s1).epsilon(1e-15));
  CHECK(inv.sum_sq(10) == doctest::Approx(s2).epsilon(1e-15));
}

TEST_CASE("run_sa: zero drift and geometric contraction") {
  ZeroDrift z;
  Vec<double> t0(3);
  t0 << 1, -2, 3;
  const auto tr = bsa::run_sa(z, StepSizeSchedule<double>::inverse_sqrt(1.0), 10, t0, 1);
  REQUIRE(tr.iterates.cols() == 12);
  for (Eigen::Index k = 0; k < tr.iterates.cols(); ++k) CHECK(tr.iterates.col(k) == t0);
  CHECK_FALSE(tr.mean_field_sq_norms.has_value());
  CHECK_THROWS_AS(bsa::expected_stopped_value(tr), std::invalid_argument);

  IdentityDrift id;
  const auto g = bsa::run_sa(id, StepSizeSchedule<double>::constant(0.5), 5, scalar(1.0), 1);
  double want = 1.0;
  for (Eigen::Index k = 0; k < g.iterates.cols(); ++k, want *= 0.5) CHECK(g.iterates(0, k) == want);
  REQUIRE(g.mean_field_sq_norms);
  CHECK((*g.mean_field_sq_norms)(2) == 0.0625);
}

TEST_CASE("run_sa: martingale source matches a scripted replay bit for bit") {
  bsa::theory::MartingaleQuadraticSource src(4, 0.8);
  const auto sched = StepSizeSchedule<double>::inverse_sqrt(0.4);
  Vec<double> t0 = Vec<double>::Constant(4, 1.5);
  const auto tr = bsa::run_sa(src, sched, 300, t0, 99);

  // Independent re-execution: same generator, same draw order.
  Rng rng(99);
  Vec<double> t = t0;
  for (std::size_t k = 0; k <= 300; ++k) {
    Vec<double> z(4);
    for (int i = 0; i < 4; ++i) z(i) = 0.8 * rng.normal();
    const Vec<double> drift = t + z;
    CHECK(tr.drifts.col(static_cast<Eigen::Index>(k)) == drift);
    t = t - sched.gamma(k + 1) * drift;
    CHECK(tr.iterates.col(static_cast<Eigen::Index>(k + 1)) == t);
  }

  // Recursion identity at every step.
  double worst = 0;
  for (Eigen::Index k = 0; k + 1 < tr.iterates.cols(); ++k) {
    const Vec<double> r = tr.iterates.col(k + 1) - tr.iterates.col(k) +
                          sched.gamma(static_cast<std::size_t>(k) + 1) * tr.drifts.col(k);
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-15);

  const auto again = bsa::run_sa(src, sched, 300, t0, 99);
  CHECK(again.iterates == tr.iterates);
  CHECK(again.drifts == tr.drifts);
  const auto other = bsa::run_sa(src, sched, 300, t0, 100);
  CHECK(other.iterates != tr.iterates);
}

TEST_CASE("run_sa: errors") {
  Blowup b;
  try {
    (void)bsa::run_sa(b, StepSizeSchedule<double>::constant(1.0), 100, scalar(1.0), 1);
    FAIL("expected NonFiniteIterate");
  } catch (const bsa::NonFiniteIterate& e) {
    CHECK(e.index() == 2);
  }
  ZeroDrift z;
  CHECK_THROWS_AS(bsa::run_sa(z, StepSizeSchedule<double>::constant(1.0), 0, scalar(1.0), 1), std::invalid_argument);
  CHECK_THROWS_AS(bsa::run_sa(z, StepSizeSchedule<double>::constant(1.0), 3, Vec<double>(), 1),
                  std::invalid_argument);
}

TEST_CASE("rng: adjacent seeds give unrelated streams") {
  Rng a(1000), b(1001);
  int equal = 0;
  for (int i = 0; i < 1000; ++i) equal += a() == b();
  CHECK(equal == 0);
  CHECK(bsa::replicate_rng(10, 3).seed() == 13);
  Rng u(4);
  for (int i = 0; i < 10000; ++i) {
    const double x = u.uniform01();
    CHECK((x >= 0.0 && x < 1.0));
  }
}
