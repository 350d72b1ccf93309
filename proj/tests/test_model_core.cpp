#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "takeup/demand.hpp"
#include "takeup/dist.hpp"
#include "takeup/parallel.hpp"
#include "takeup/quadrature.hpp"
#include "takeup/rng.hpp"
#include "takeup/types.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>

using namespace takeup;

TEST_CASE("logistic cdf matches reference values") {
  CHECK(cdf(ErrorDist::logit, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(cdf(ErrorDist::logit, -1.3) == doctest::Approx(0.214165016957441).epsilon(1e-12));
  CHECK(cdf(ErrorDist::logit, -1.0) == doctest::Approx(0.268941421369995).epsilon(1e-12));
  CHECK(cdf(ErrorDist::logit, 1.0) == doctest::Approx(0.731058578630005).epsilon(1e-12));
  // extreme arguments stay finite and ordered
  CHECK(cdf(ErrorDist::logit, -750.0) >= 0.0);
  CHECK(cdf(ErrorDist::logit, 750.0) <= 1.0);
  CHECK(cdf(ErrorDist::logit, 750.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("normal cdf matches reference values") {
  CHECK(cdf(ErrorDist::probit, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(cdf(ErrorDist::probit, 1.0) == doctest::Approx(0.841344746068543).epsilon(1e-12));
  CHECK(cdf(ErrorDist::probit, 2.0) == doctest::Approx(0.977249868051821).epsilon(1e-12));
  CHECK(cdf(ErrorDist::probit, 1.96) == doctest::Approx(0.975002104851780).epsilon(1e-12));
}

TEST_CASE("cdf symmetry and monotonicity") {
  for (ErrorDist e : {ErrorDist::logit, ErrorDist::probit}) {
    double prev = -1.0;
    for (double x = -8.0; x <= 8.0; x += 0.25) {
      const double c = cdf(e, x);
      CHECK(c == doctest::Approx(1.0 - cdf(e, -x)).epsilon(1e-14));
      CHECK(c > prev);
      prev = c;
    }
  }
}

TEST_CASE("pdf is the derivative of cdf") {
  const double h = 1e-6;
  for (ErrorDist e : {ErrorDist::logit, ErrorDist::probit}) {
    for (double x : {-2.0, -0.7, 0.0, 0.3, 1.9}) {
      const double fd = (cdf(e, x + h) - cdf(e, x - h)) / (2.0 * h);
      CHECK(pdf(e, x) == doctest::Approx(fd).epsilon(1e-8));
    }
  }
}

TEST_CASE("density suprema and contraction bounds") {
  CHECK(sup_density(ErrorDist::logit) == 0.25);
  CHECK(sup_density(ErrorDist::probit) == doctest::Approx(0.398942280401433).epsilon(1e-14));
  CHECK(contraction_bound(ErrorDist::logit) == 4.0);
  CHECK(contraction_bound(ErrorDist::probit) ==
        doctest::Approx(2.50662827463100050242).epsilon(1e-15));
  // the bound is exactly the reciprocal of the density supremum
  for (ErrorDist e : {ErrorDist::logit, ErrorDist::probit})
    CHECK(contraction_bound(e) * sup_density(e) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("demand probability evaluates the linear index") {
  IndexParams p;
  p.c1 = -0.01;
  p.c2 = 0.0001;
  p.c3 = Eigen::VectorXd(2);
  p.c3 << 0.5, -0.2;
  p.alpha = 1.5;
  p.intercepts = Intercepts::pooled(0.3);
  p.error = ErrorDist::logit;

  Eigen::VectorXd z(2);
  z << 1.0, 4.0;
  // 0.3 - 0.01*250 + 0.0001*8000 + 0.5 - 0.8 + 1.5*0.4 = -1.1
  CHECK(linear_index(p, 250.0, 8000.0, z, 0.4, p.intercepts.value_for(0)) ==
        doctest::Approx(-1.1).epsilon(1e-14));
  CHECK(demand_probability(p, 250.0, 8000.0, z, 0.4, 0.3) ==
        doctest::Approx(oracle::logistic_cdf(-1.1)).epsilon(1e-15));

  p.error = ErrorDist::probit;
  CHECK(demand_probability(p, 250.0, 8000.0, z, 0.4, 0.3) ==
        doctest::Approx(oracle::normal_cdf(-1.1)).epsilon(1e-15));

  Eigen::VectorXd bad(3);
  bad << 1.0, 4.0, 2.0;
  CHECK_THROWS_AS((void)demand_probability(p, 250.0, 8000.0, bad, 0.4, 0.3), input_error);
}

TEST_CASE("structural slopes from index coefficients") {
  IndexParams p;
  p.c1 = -0.01;
  p.c2 = 0.0001;
  const Betas b = structural_betas(p);
  CHECK(b.beta1 == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(b.beta0 == doctest::Approx(0.0099).epsilon(1e-15));

  IndexParams flat;  // c1 = 0 -> beta1 = 0: price must matter
  CHECK_THROWS_AS((void)structural_betas(flat), welfare_error);

  IndexParams crossed;
  crossed.c1 = -0.01;
  crossed.c2 = 0.02;  // beta0 = -0.01 < 0
  CHECK_THROWS_AS((void)structural_betas(crossed), welfare_error);
}

TEST_CASE("spillover split bounds") {
  const SpilloverSplit s = spillover_split(2.0, 0.5);
  CHECK(s.alpha1 == 0.5);
  CHECK(s.alpha0 == doctest::Approx(-1.5).epsilon(1e-15));
  CHECK(s.alpha() == doctest::Approx(2.0).epsilon(1e-15));

  CHECK(spillover_split(0.0, 0.0).alpha() == 0.0);
  CHECK(spillover_split(2.0, 2.0).alpha0 == 0.0);
  CHECK_THROWS_AS((void)spillover_split(2.0, -0.1), input_error);
  CHECK_THROWS_AS((void)spillover_split(2.0, 2.1), input_error);
}

TEST_CASE("participation scaling factor") {
  Village v = testutil::make_village(1, {}, 226);
  for (int i = 0; i < 181; ++i)
    v.households.push_back(testutil::make_household(i, 1, 250.0, 1000.0));
  CHECK(participation_scale(v) == doctest::Approx(0.8).epsilon(1e-15));

  Village small = testutil::make_village(2,
                                         {testutil::make_household(1, 2, 250.0, 1.0),
                                          testutil::make_household(2, 2, 250.0, 2.0)},
                                         3);
  CHECK(participation_scale(small) == doctest::Approx(0.5).epsilon(1e-15));

  Village full = testutil::make_village(3,
                                        {testutil::make_household(1, 3, 250.0, 1.0),
                                         testutil::make_household(2, 3, 250.0, 2.0)},
                                        2);
  CHECK(participation_scale(full) == 1.0);

  Village inconsistent = testutil::make_village(4,
                                                {testutil::make_household(1, 4, 250.0, 1.0),
                                                 testutil::make_household(2, 4, 250.0, 2.0)},
                                                1);
  CHECK_THROWS_AS((void)participation_scale(inconsistent), input_error);

  Village lone = testutil::make_village(5, {testutil::make_household(1, 5, 250.0, 1.0)}, 1);
  CHECK_THROWS_AS((void)participation_scale(lone), input_error);
}

TEST_CASE("intercept block: pooled and per-village") {
  const Intercepts pooled = Intercepts::pooled(0.3);
  CHECK(pooled.is_pooled());
  CHECK(pooled.c0() == 0.3);
  CHECK(pooled.value_for(7) == 0.3);

  const Intercepts fe = Intercepts::per_village({{1, 0.1}, {2, -0.2}});
  CHECK_FALSE(fe.is_pooled());
  CHECK(fe.value_for(2) == -0.2);
  CHECK_THROWS_AS((void)fe.value_for(99), input_error);
  CHECK_THROWS_AS((void)fe.c0(), input_error);
}

TEST_CASE("policy scenario validation") {
  PolicyScenario s{250.0, 50.0, 8000.0};
  s.validate();
  CHECK(s.eligible(8000.0));
  CHECK_FALSE(s.eligible(8000.5));

  PolicyScenario bad{50.0, 250.0, 8000.0};
  CHECK_THROWS_AS(bad.validate(), input_error);

  PolicyScenario no_change{250.0, 250.0, 8000.0};
  no_change.validate();  // degenerate but legal: no price change

  PolicyScenario nobody{250.0, 50.0, -std::numeric_limits<double>::infinity()};
  nobody.validate();
  CHECK_FALSE(nobody.eligible(0.0));
}

TEST_CASE("adaptive quadrature on known integrals") {
  CHECK(integrate([](double x) { return x * x; }, 0.0, 1.0) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(integrate([](double x) { return x * x * x; }, 0.0, 1.0) ==
        doctest::Approx(0.25).epsilon(1e-14));
  CHECK(integrate([](double x) { return std::sin(x); }, 0.0, std::acos(-1.0)) ==
        doctest::Approx(2.0).epsilon(1e-12));
  CHECK(integrate([](double x) { return std::exp(x); }, 0.0, 1.0) ==
        doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-12));
  // orientation and the empty interval
  CHECK(integrate([](double x) { return x; }, 1.0, 1.0) == 0.0);
  CHECK(integrate([](double x) { return x; }, 1.0, 0.0) ==
        doctest::Approx(-0.5).epsilon(1e-14));
  // agreement with the dense-grid oracle on a lumpy integrand
  auto lumpy = [](double x) { return std::exp(-x * x) * std::cos(5.0 * x); };
  CHECK(integrate(lumpy, -2.0, 2.0) ==
        doctest::Approx(oracle::trapezoid(lumpy, -2.0, 2.0)).epsilon(1e-9));
}

TEST_CASE("seeded substreams are reproducible and distinct") {
  auto a = substream(42, 0);
  auto b = substream(42, 0);
  auto c = substream(42, 1);
  bool all_equal = true;
  bool any_diff_from_c = false;
  for (int i = 0; i < 32; ++i) {
    const auto x = a();
    all_equal = all_equal && (x == b());
    any_diff_from_c = any_diff_from_c || (x != c());
  }
  CHECK(all_equal);
  CHECK(any_diff_from_c);
}

TEST_CASE("thread count honors the environment override") {
  setenv("TAKEUP_THREADS", "3", 1);
  CHECK(thread_count() == 3);
  setenv("TAKEUP_THREADS", "0", 1);  // nonsense value falls back
  CHECK(thread_count() >= 1);
  unsetenv("TAKEUP_THREADS");
  CHECK(thread_count() >= 1);
}

TEST_CASE("parallel_for covers the range exactly once") {
  setenv("TAKEUP_THREADS", "4", 1);
  const std::size_t n = 10'000;
  std::vector<std::atomic<int>> hits(n);
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) hits[i].fetch_add(1);
  });
  bool ok = true;
  for (std::size_t i = 0; i < n; ++i) ok = ok && hits[i].load() == 1;
  CHECK(ok);
  parallel_for(0, [&](std::size_t, std::size_t) { CHECK(false); });
  unsetenv("TAKEUP_THREADS");
}
