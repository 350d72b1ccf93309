#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "takeup/demand.hpp"
#include "takeup/dist.hpp"
#include "takeup/equilibrium.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace takeup;

namespace {

// Two households, unit wealth sensitivity removed: the equilibrium condition
// collapses to pi = F(pi).
Village logistic_toy_village() {
  return testutil::make_village(1, {testutil::make_household(1, 1, 0.0, 0.0),
                                    testutil::make_household(2, 1, 0.0, 0.0)});
}

IndexParams logistic_toy_params() {
  IndexParams p;
  p.c1 = -1.0;
  p.c2 = 0.0;
  p.alpha = 1.0;
  p.intercepts = Intercepts::pooled(0.0);
  p.error = ErrorDist::logit;
  return p;
}

}  // namespace

TEST_CASE("fixed point iteration on elementary maps") {
  FixedPointResult r = fixed_point_iterate([](double) { return 0.5; }, 0.1);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.iterations <= 3);

  r = fixed_point_iterate([](double x) { return 0.5 + 0.25 * x; }, 0.0);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(2.0 / 3.0).epsilon(1e-11));
  CHECK(std::abs(r.residual) < 1e-12);

  r = fixed_point_iterate([](double x) { return cdf(ErrorDist::logit, x); }, 0.5);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(0.659046068407407).epsilon(1e-11));
  const double root = oracle::bisect(
      [](double x) { return x - oracle::logistic_cdf(x); }, 0.0, 1.0);
  CHECK(r.value == doctest::Approx(root).epsilon(1e-10));
}

TEST_CASE("oscillating map falls back to bisection") {
  // x -> 1 - x flips forever under plain iteration; the fixed point is 0.5.
  const FixedPointResult r = fixed_point_iterate([](double x) { return 1.0 - x; }, 0.1);
  CHECK(r.converged);
  CHECK(r.used_bisection);
  CHECK(r.value == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("iteration rejects bad options and hopeless maps") {
  FixedPointOptions bad;
  bad.damping = 0.0;
  CHECK_THROWS_AS((void)fixed_point_iterate([](double x) { return x; }, 0.5, bad), input_error);
  bad.damping = 1.5;
  CHECK_THROWS_AS((void)fixed_point_iterate([](double x) { return x; }, 0.5, bad), input_error);

  // A map escaping [0,1] with no root in the interval defeats both stages.
  CHECK_THROWS_AS((void)fixed_point_iterate([](double x) { return x + 2.0; }, 0.5, {}),
                  solver_error);
}

TEST_CASE("two-household village reproduces the logistic fixed point") {
  const Village v = logistic_toy_village();
  const IndexParams p = logistic_toy_params();

  const FixedPointResult r = solve_pi_baseline(v, p, 0.0);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(0.659046068407407).epsilon(1e-10));
  CHECK(std::abs(r.residual) < 1e-12);

  // same root from every starting point on a coarse grid
  auto rhs = [&](double pi) {
    return village_take_up_rhs(v, p, [](const Household&) { return 0.0; }, pi);
  };
  for (int i = 0; i <= 10; ++i) {
    const FixedPointResult ri = fixed_point_iterate(rhs, 0.1 * i);
    CHECK(ri.converged);
    CHECK(ri.value == doctest::Approx(r.value).epsilon(1e-9));
  }
}

TEST_CASE("alpha = 0 yields the explicit average-demand solution") {
  std::mt19937_64 rng(7);
  const Village v = testutil::random_village(rng, 3, 40);
  IndexParams p = testutil::random_contraction_params(rng, ErrorDist::logit);
  p.alpha = 0.0;

  const FixedPointResult r = solve_pi_baseline(v, p, 120.0);
  const double direct =
      village_take_up_rhs(v, p, [](const Household&) { return 120.0; }, 0.33);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(direct).epsilon(1e-14));
}

TEST_CASE("random villages: residuals, oracle agreement, unique root") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 20; ++rep) {
    const ErrorDist e = rep % 2 == 0 ? ErrorDist::logit : ErrorDist::probit;
    const Village v = testutil::random_village(rng, rep + 1, 60);
    const IndexParams p = testutil::random_contraction_params(rng, e);
    REQUIRE(contraction_holds(p.alpha, e));

    const double price = 100.0 + 200.0 * (rep % 3);
    const FixedPointResult r = solve_pi_baseline(v, p, price);
    CHECK(r.converged);

    auto price_of = [price](const Household&) { return price; };
    const double recheck = village_take_up_rhs(v, p, price_of, r.value) - r.value;
    CHECK(std::abs(recheck) < 1e-10);

    const double root = oracle::bisect(
        [&](double pi) { return pi - village_take_up_rhs(v, p, price_of, pi); }, 0.0, 1.0);
    CHECK(r.value == doctest::Approx(root).epsilon(1e-9));

    const UniquenessReport u = uniqueness_scan(v, p, price);
    CHECK(u.roots.size() == 1);
    CHECK(u.roots[0] == doctest::Approx(r.value).epsilon(1e-9));
    CHECK(u.objective_grid.size() == 1001);
  }
}

TEST_CASE("policy solver nests the baseline at extreme eligibility cutoffs") {
  std::mt19937_64 rng(99);
  const Village v = testutil::random_village(rng, 5, 50);
  const IndexParams p = testutil::random_contraction_params(rng, ErrorDist::logit);

  PolicyScenario nobody{250.0, 50.0, -std::numeric_limits<double>::infinity()};
  PolicyScenario everybody{250.0, 50.0, std::numeric_limits<double>::infinity()};

  const FixedPointResult base0 = solve_pi_baseline(v, p, 250.0);
  const FixedPointResult base1 = solve_pi_baseline(v, p, 50.0);
  const FixedPointResult pol0 = solve_pi_policy(v, p, nobody);
  const FixedPointResult pol1 = solve_pi_policy(v, p, everybody);

  CHECK(pol0.value == base0.value);  // identical code path, bitwise equal
  CHECK(pol1.value == base1.value);
}

TEST_CASE("subsidies raise equilibrium take-up") {
  std::mt19937_64 rng(123);
  for (int rep = 0; rep < 10; ++rep) {
    const Village v = testutil::random_village(rng, rep + 1, 50);
    IndexParams p = testutil::random_contraction_params(rng, ErrorDist::logit);
    p.alpha = std::abs(p.alpha);  // alpha >= 0 and c1 < 0 by construction

    // tau at the median wealth: about half the village becomes eligible
    std::vector<double> wealth;
    for (const auto& h : v.households) wealth.push_back(h.wealth);
    std::sort(wealth.begin(), wealth.end());
    const PolicyScenario s{250.0, 50.0, wealth[wealth.size() / 2]};

    const FixedPointResult r0 = solve_pi_baseline(v, p, s.p0);
    const FixedPointResult r1 = solve_pi_policy(v, p, s);
    CHECK(r1.value >= r0.value);
  }
}

TEST_CASE("solution is invariant under household permutation") {
  std::mt19937_64 rng(55);
  Village v = testutil::random_village(rng, 9, 64);
  const IndexParams p = testutil::random_contraction_params(rng, ErrorDist::probit);

  const double before = solve_pi_baseline(v, p, 180.0).value;
  std::shuffle(v.households.begin(), v.households.end(), rng);
  const double after = solve_pi_baseline(v, p, 180.0).value;
  CHECK(before == doctest::Approx(after).epsilon(1e-9));
}

TEST_CASE("uniqueness scan surfaces multiple equilibria when the slope exceeds one") {
  // Logit with alpha = 4.5 > 4 and a symmetric intercept: pi = F(4.5 pi - 2.25)
  // has roots at 0.5 and two mirror points.
  Village v = testutil::make_village(1, {testutil::make_household(1, 1, 0.0, 0.0)});
  IndexParams p;
  p.c1 = -1.0;
  p.alpha = 4.5;
  p.intercepts = Intercepts::pooled(-2.25);
  p.error = ErrorDist::logit;

  const UniquenessReport u = uniqueness_scan(v, p, 0.0);
  REQUIRE(u.roots.size() == 3);
  CHECK(u.roots[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(u.roots[0] == doctest::Approx(1.0 - u.roots[2]).epsilon(1e-8));
  CHECK(std::is_sorted(u.roots.begin(), u.roots.end()));
  for (double root : u.roots) {
    const double g =
        root - village_take_up_rhs(v, p, [](const Household&) { return 0.0; }, root);
    CHECK(g * g < 1e-16);
  }
}

TEST_CASE("uniqueness scan validates the grid and reports the objective") {
  Village v = logistic_toy_village();
  const IndexParams p = logistic_toy_params();
  CHECK_THROWS_AS((void)uniqueness_scan(v, p, 0.0, 2), input_error);

  const UniquenessReport u = uniqueness_scan(v, p, 0.0, 101);
  CHECK(u.objective_grid.size() == 101);
  CHECK(u.objective_grid.front().first == 0.0);
  CHECK(u.objective_grid.back().first == doctest::Approx(1.0).epsilon(1e-15));
  REQUIRE(u.roots.size() == 1);
  CHECK(u.roots[0] == doctest::Approx(0.659046068407407).epsilon(1e-9));
}

TEST_CASE("contraction condition checks") {
  CHECK(contraction_holds(2.4, ErrorDist::logit));
  // 2.4 / sqrt(2*pi) = 0.957... < 1: 2.4 sits inside the normal-error bound
  // as well. Only values in (sqrt(2*pi), 4) separate the two distributions.
  CHECK(contraction_holds(2.4, ErrorDist::probit));
  CHECK(contraction_margin(2.4, ErrorDist::probit) ==
        doctest::Approx(0.1066282746310005).epsilon(1e-12));
  CHECK(contraction_holds(2.6, ErrorDist::logit));
  CHECK_FALSE(contraction_holds(2.6, ErrorDist::probit));
  CHECK(contraction_margin(2.6, ErrorDist::probit) < 0.0);

  CHECK(contraction_holds(-2.4, ErrorDist::logit));
  CHECK(contraction_margin(2.4, ErrorDist::logit) == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(contraction_margin(4.0, ErrorDist::logit) == 0.0);
  CHECK_FALSE(contraction_holds(4.0, ErrorDist::logit));
}

TEST_CASE("village rhs requires participants and honors the flag") {
  Village v = testutil::make_village(
      1, {testutil::make_household(1, 1, 0.0, 0.0, {}, 0, false)});
  const IndexParams p = logistic_toy_params();
  CHECK_THROWS_AS(
      (void)village_take_up_rhs(v, p, [](const Household&) { return 0.0; }, 0.5),
      input_error);

  // a nonparticipant row does not move the average
  Village mixed = logistic_toy_village();
  mixed.households.push_back(testutil::make_household(3, 1, 0.0, 1e9, {}, 0, false));
  const double with_extra =
      village_take_up_rhs(mixed, p, [](const Household&) { return 0.0; }, 0.4);
  const double without =
      village_take_up_rhs(logistic_toy_village(), p, [](const Household&) { return 0.0; }, 0.4);
  CHECK(with_extra == without);
}
