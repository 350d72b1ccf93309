#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "takeup/demand.hpp"
#include "takeup/dist.hpp"
#include "takeup/estimation.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace takeup;

namespace {

// True parameters shared by the recovery tests. Tied villages 1 and 11 share
// the same unobserved effect by construction.
IndexParams recovery_truth(int n_villages, ErrorDist error, double alpha) {
  IndexParams p;
  p.error = error;
  p.c1 = -0.015;
  p.c2 = 2e-5;
  p.c3 = Eigen::VectorXd(2);
  p.c3 << -0.3, 0.05;
  p.alpha = alpha;
  std::map<int, double> xi;
  std::mt19937_64 rng(4711);
  std::uniform_real_distribution<double> u(-0.4, 0.6);
  for (int v = 1; v <= n_villages; ++v) xi[v] = u(rng);
  if (n_villages > 1) xi[n_villages] = xi[1];  // tied pair (1, n)
  p.intercepts = Intercepts::per_village(xi);
  return p;
}

Dataset belief_fixture() {
  // Two villages with hand-set outcomes and partial participation.
  std::vector<Household> v1, v2;
  for (int i = 0; i < 4; ++i) {
    Household h = testutil::make_household(i + 1, 1, 100.0, 1000.0, {0.0, 0.0});
    h.outcome = i < 2 ? 1 : 0;  // mean 0.5
    v1.push_back(h);
  }
  for (int i = 0; i < 5; ++i) {
    Household h = testutil::make_household(i + 10, 2, 100.0, 1000.0, {0.0, 0.0});
    h.outcome = 0;
    v2.push_back(h);
  }
  Dataset d;
  d.covariate_names = {"children", "female_edu"};
  d.villages.push_back(testutil::make_village(1, v1, 4));
  d.villages.push_back(testutil::make_village(2, v2, 9));  // scale (5-1)/(9-1)=0.5
  return d;
}

}  // namespace

TEST_CASE("village belief estimates: averages and scaling") {
  const Dataset d = belief_fixture();
  const auto scaled = estimate_village_beliefs(d, true);
  const auto raw = estimate_village_beliefs(d, false);

  CHECK(raw.at(1) == 0.5);
  CHECK(scaled.at(1) == 0.5);  // full participation: scale 1
  CHECK(raw.at(2) == 0.0);
  CHECK(scaled.at(2) == 0.0);  // all outcomes zero stay zero

  // half participation halves the belief
  Dataset d2 = d;
  for (auto& h : d2.villages[1].households) h.outcome = 1;
  CHECK(estimate_village_beliefs(d2, false).at(2) == 1.0);
  CHECK(estimate_village_beliefs(d2, true).at(2) == doctest::Approx(0.5).epsilon(1e-15));

  // the arithmetic of scale x mean
  Dataset d3 = d;
  d3.villages[0].households[1].outcome = 0;          // mean 0.25
  d3.villages[0].total_households = 7;               // scale 3/6 = 0.5
  CHECK(estimate_village_beliefs(d3, true).at(1) == doctest::Approx(0.125).epsilon(1e-15));

  Dataset empty = d;
  for (auto& h : empty.villages[0].households) h.participant = false;
  CHECK_THROWS_AS((void)estimate_village_beliefs(empty, false), input_error);
}

TEST_CASE("design matrices: column layout per scheme") {
  // Six villages so the village-constant columns of the correlated-random-
  // effects design (four means plus the constant) can be independent.
  const IndexParams truth = recovery_truth(6, ErrorDist::logit, 1.0);
  const Dataset data = testutil::simulate_iid_dataset(truth, 6, 30, 11);
  const auto beliefs = estimate_village_beliefs(data, true);

  FitSpec spec;
  Design plain = build_design(data, spec, beliefs);
  CHECK(plain.names == std::vector<std::string>{"price", "wealth", "children", "female_edu",
                                                "belief", "const"});
  CHECK(plain.X.rows() == 180);
  CHECK(plain.idx_belief == 4);
  CHECK(plain.idx_intercept == 5);

  spec.fixed_effects = FixedEffectScheme::dummies_homogeneity;
  Design fe = build_design(data, spec, beliefs);
  CHECK(fe.names == std::vector<std::string>{"price", "wealth", "children", "female_edu",
                                             "village_1", "village_2", "village_3", "village_4",
                                             "village_5", "village_6"});
  CHECK(fe.idx_belief == -1);  // absorbed by the dummies
  // each row carries exactly one dummy
  for (int r = 0; r < fe.X.rows(); ++r)
    CHECK(fe.X.row(r).segment(4, 6).sum() == 1.0);

  spec.fixed_effects = FixedEffectScheme::correlated_re;
  Design cre = build_design(data, spec, beliefs);
  CHECK(cre.names == std::vector<std::string>{"price", "wealth", "children", "female_edu",
                                              "vmean_price", "vmean_wealth", "vmean_children",
                                              "vmean_female_edu", "belief", "const"});
}

TEST_CASE("design matrices: rank deficiency is reported by column name") {
  const IndexParams truth = recovery_truth(2, ErrorDist::logit, 1.0);
  Dataset data = testutil::simulate_iid_dataset(truth, 2, 25, 13);
  // duplicate the first covariate into the second
  for (auto& v : data.villages)
    for (auto& h : v.households) h.covariates(1) = h.covariates(0);
  const auto beliefs = estimate_village_beliefs(data, true);
  FitSpec spec;
  try {
    (void)build_design(data, spec, beliefs);
    FAIL("expected input_error");
  } catch (const input_error& e) {
    // either member of the identical pair may be flagged as dependent
    const std::string msg = e.what();
    const bool named = msg.find("children") != std::string::npos ||
                       msg.find("female_edu") != std::string::npos;
    CHECK(named);
  }
}

TEST_CASE("analytic score and Hessian match finite differences") {
  const IndexParams truth = recovery_truth(2, ErrorDist::logit, 1.0);
  const Dataset data = testutil::simulate_iid_dataset(truth, 2, 40, 17);
  const auto beliefs = estimate_village_beliefs(data, true);
  const Design d = build_design(data, FitSpec{}, beliefs);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (ErrorDist error : {ErrorDist::logit, ErrorDist::probit}) {
    Eigen::VectorXd b(d.X.cols());
    for (int j = 0; j < b.size(); ++j) b(j) = 0.02 * u(rng);

    const Eigen::VectorXd g = binary_score(d.X, d.y, error, b);
    const Eigen::MatrixXd H = binary_neg_hessian(d.X, d.y, error, b);
    for (int j = 0; j < b.size(); ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(b(j)));
      Eigen::VectorXd hi = b, lo = b;
      hi(j) += h;
      lo(j) -= h;
      const double fd =
          (binary_loglik(d.X, d.y, error, hi) - binary_loglik(d.X, d.y, error, lo)) / (2.0 * h);
      CHECK(g(j) == doctest::Approx(fd).epsilon(1e-5));
      const Eigen::VectorXd fd_row =
          (binary_score(d.X, d.y, error, hi) - binary_score(d.X, d.y, error, lo)) / (2.0 * h);
      for (int i = 0; i < b.size(); ++i)
        CHECK(-H(i, j) == doctest::Approx(fd_row(i)).epsilon(1e-4));
    }
  }
}

TEST_CASE("log-likelihood is invariant under row permutation") {
  const IndexParams truth = recovery_truth(2, ErrorDist::probit, 0.8);
  const Dataset data = testutil::simulate_iid_dataset(truth, 2, 50, 23);
  const auto beliefs = estimate_village_beliefs(data, true);
  const Design d = build_design(data, FitSpec{}, beliefs);

  Eigen::VectorXd b = Eigen::VectorXd::Constant(d.X.cols(), 0.01);
  const double base = binary_loglik(d.X, d.y, ErrorDist::probit, b);

  std::vector<int> perm(static_cast<std::size_t>(d.X.rows()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  Eigen::MatrixXd Xp(d.X.rows(), d.X.cols());
  Eigen::VectorXd yp(d.X.rows());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    Xp.row(static_cast<Eigen::Index>(i)) = d.X.row(perm[i]);
    yp(static_cast<Eigen::Index>(i)) = d.y(perm[i]);
  }
  CHECK(binary_loglik(Xp, yp, ErrorDist::probit, b) == doctest::Approx(base).epsilon(1e-13));
}

TEST_CASE("pooled MLE recovers a no-spillover logit DGP") {
  IndexParams truth;
  truth.error = ErrorDist::logit;
  truth.c1 = -0.012;
  truth.c2 = 5e-5;
  truth.c3 = Eigen::VectorXd(2);
  truth.c3 << -0.4, 0.08;
  truth.alpha = 0.0;
  truth.intercepts = Intercepts::pooled(0.4);

  const Dataset data = testutil::simulate_iid_dataset(truth, 4, 1500, 31);
  FitSpec spec;
  spec.include_belief_regressor = false;
  const FitResult fit = fit_br(data, spec);

  CHECK(fit.converged);
  CHECK(fit.gradient_norm < 1e-6);
  const std::vector<double> want = {truth.c1, truth.c2, truth.c3(0), truth.c3(1), 0.4};
  for (int j = 0; j < 5; ++j) {
    CHECK(std::abs(fit.coefficients(j) - want[static_cast<std::size_t>(j)]) <
          3.0 * fit.std_errors(j));
  }
  // reported params mirror the coefficient vector
  CHECK(fit.params.c1 == fit.coefficients(0));
  CHECK(fit.params.intercepts.c0() == fit.coefficients(4));
}

TEST_CASE("separation is detected and named") {
  IndexParams truth;
  truth.error = ErrorDist::logit;
  truth.c1 = -0.01;
  truth.c2 = 0.0;
  truth.c3 = Eigen::VectorXd(0);
  truth.intercepts = Intercepts::pooled(0.0);

  Dataset data;
  data.covariate_names = {};
  std::vector<Household> hh;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Household h = testutil::make_household(i + 1, 1, 50.0 + 200.0 * u(rng), 1000.0 * u(rng), {});
    h.outcome = h.price < 150.0 ? 1 : 0;  // outcome is a deterministic price threshold
    hh.push_back(h);
  }
  data.villages.push_back(testutil::make_village(1, hh));

  FitSpec spec;
  spec.include_belief_regressor = false;
  CHECK_THROWS_AS((void)fit_br(data, spec), solver_error);
}

TEST_CASE("homogeneity solve: linear identification of alpha") {
  const std::map<int, double> gammas{{1, 1.0}, {2, 2.0}};
  const std::map<int, double> pis{{1, 0.2}, {2, 0.7}};
  const auto [alpha, xi] = solve_fixed_effects_homogeneity(gammas, pis, {1, 2});
  CHECK(alpha == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(xi.at(1) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(xi.at(2) == doctest::Approx(0.6).epsilon(1e-14));

  const auto [alpha0, xi0] =
      solve_fixed_effects_homogeneity({{1, 1.5}, {2, 1.5}}, pis, {1, 2});
  CHECK(alpha0 == 0.0);
  CHECK(xi0.at(1) == 1.5);
  CHECK(xi0.at(2) == 1.5);

  CHECK_THROWS_AS((void)solve_fixed_effects_homogeneity(gammas, {{1, 0.5}, {2, 0.5 + 1e-9}},
                                                        {1, 2}),
                  input_error);
  CHECK_THROWS_AS((void)solve_fixed_effects_homogeneity(gammas, pis, {1, 9}), input_error);
}

TEST_CASE("fixed-effect fit recovers the spillover DGP") {
  const int V = 11;
  const IndexParams truth = recovery_truth(V, ErrorDist::logit, 2.0);
  const Dataset data = testutil::simulate_iid_dataset(truth, V, 600, 101);

  FitSpec spec;
  spec.fixed_effects = FixedEffectScheme::dummies_homogeneity;
  spec.tied_pair = {1, V};
  const FitResult fit = fit_br(data, spec);

  CHECK(fit.converged);
  CHECK(fit.gradient_norm < 1e-6);
  REQUIRE(fit.names.size() == static_cast<std::size_t>(4 + 1 + V));
  CHECK(fit.names[4] == "alpha");

  const std::vector<double> want = {truth.c1, truth.c2, truth.c3(0), truth.c3(1), truth.alpha};
  for (int j = 0; j < 5; ++j)
    CHECK(std::abs(fit.coefficients(j) - want[static_cast<std::size_t>(j)]) <
          3.0 * fit.std_errors(j));
  for (int v = 1; v <= V; ++v) {
    const double xi_true = truth.intercepts.value_for(v);
    const int col = 5 + v - 1;
    CHECK(std::abs(fit.village_intercepts.at(v) - xi_true) < 3.0 * fit.std_errors(col));
  }
  // tied villages share their recovered effect by construction
  CHECK(fit.village_intercepts.at(1) ==
        doctest::Approx(fit.village_intercepts.at(V)).epsilon(1e-12));

  // a missing tie is rejected
  FitSpec no_tie = spec;
  no_tie.tied_pair = {3, 3};
  CHECK_THROWS_AS((void)fit_br(data, no_tie), input_error);
}

TEST_CASE("correlated-random-effects fit recovers a compatible DGP") {
  // xi_v built from village means only (no residual), per the CRE assumption.
  const int V = 8;
  IndexParams truth;
  truth.error = ErrorDist::probit;
  truth.c1 = -0.008;
  truth.c2 = 3e-5;
  truth.c3 = Eigen::VectorXd(2);
  truth.c3 << -0.2, 0.04;
  truth.alpha = 1.0;

  // First pass with zero effects to learn the village means the DGP induces.
  std::map<int, double> xi;
  for (int v = 1; v <= V; ++v) xi[v] = 0.0;
  truth.intercepts = Intercepts::per_village(xi);
  Dataset probe = testutil::simulate_iid_dataset(truth, V, 800, 211);
  for (auto& v : probe.villages) {
    double wbar = 0.0;
    for (const auto& h : v.households) wbar += h.wealth;
    wbar /= static_cast<double>(v.households.size());
    xi[v.id] = 0.2 + 1e-4 * (wbar - 3000.0);  // delta' Zbar_v with delta on wealth
  }
  truth.intercepts = Intercepts::per_village(xi);
  const Dataset data = testutil::simulate_iid_dataset(truth, V, 800, 211);

  FitSpec spec;
  spec.estimator = Estimator::cre;
  spec.error = ErrorDist::probit;
  const FitResult fit = fit_cre(data, spec);
  CHECK(fit.converged);
  const std::vector<double> want = {truth.c1, truth.c2, truth.c3(0), truth.c3(1)};
  for (int j = 0; j < 4; ++j)
    CHECK(std::abs(fit.coefficients(j) - want[static_cast<std::size_t>(j)]) <
          3.5 * fit.std_errors(j));
  CHECK(fit.params.intercepts.is_pooled() == false);
}

TEST_CASE("nested-fixed-point objective: analytic score matches finite differences") {
  const int V = 3;
  const IndexParams truth = recovery_truth(V, ErrorDist::logit, 1.5);
  Dataset data = testutil::simulate_iid_dataset(truth, V, 80, 307);
  // Rescale regressors to O(1) so central differences stay in their accurate
  // range; the derivative identity under test is scale-free.
  for (auto& v : data.villages)
    for (auto& h : v.households) {
      h.price /= 100.0;
      h.wealth /= 10000.0;
    }

  FitSpec spec;
  spec.estimator = Estimator::fpl;
  spec.fixed_effects = FixedEffectScheme::dummies_homogeneity;
  spec.tied_pair = {1, V};
  const FplObjective obj(data, spec);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 3; ++rep) {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(obj.dim());
    theta(0) = -0.5 * (1.0 + 0.2 * u(rng));
    theta(1) = 0.2 * u(rng);
    theta(2) = 0.1 * u(rng);
    theta(3) = 0.05 * u(rng);
    theta(obj.alpha_index()) = 0.8 + 0.5 * u(rng);
    for (int c = obj.alpha_index() + 1; c < obj.dim(); ++c) theta(c) = 0.3 * u(rng);

    const Eigen::VectorXd g = obj.score(theta);
    for (int j = 0; j < obj.dim(); ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta(j)));
      Eigen::VectorXd hi = theta, lo = theta;
      hi(j) += h;
      lo(j) -= h;
      const double fd = (obj.loglik(hi) - obj.loglik(lo)) / (2.0 * h);
      CHECK(g(j) == doctest::Approx(fd).epsilon(2e-5));
    }
  }
}

TEST_CASE("nested-fixed-point fit recovers the spillover DGP") {
  const int V = 6;
  const IndexParams truth = recovery_truth(V, ErrorDist::logit, 2.0);
  const Dataset data = testutil::simulate_iid_dataset(truth, V, 700, 401);

  FitSpec spec;
  spec.estimator = Estimator::fpl;
  spec.fixed_effects = FixedEffectScheme::dummies_homogeneity;
  spec.tied_pair = {1, V};
  const FitResult fit = fit_fpl(data, spec);

  CHECK(fit.converged);
  CHECK_FALSE(fit.alpha_at_boundary);
  const std::vector<double> want = {truth.c1, truth.c2, truth.c3(0), truth.c3(1)};
  for (int j = 0; j < 4; ++j)
    CHECK(std::abs(fit.coefficients(j) - want[static_cast<std::size_t>(j)]) <
          3.0 * fit.std_errors(j));
  const int ia = 4;
  CHECK(fit.names[static_cast<std::size_t>(ia)] == "alpha");
  CHECK(std::abs(fit.coefficients(ia) - truth.alpha) < 3.0 * fit.std_errors(ia));
  // inner equilibria at the estimate are near the observed take-up rates
  const auto raw = estimate_village_beliefs(data, false);
  for (const auto& [id, pi] : fit.beliefs) CHECK(std::abs(pi - raw.at(id)) < 0.1);
}

TEST_CASE("alpha pinned at zero reproduces the plain fit") {
  IndexParams truth;
  truth.error = ErrorDist::logit;
  truth.c1 = -0.01;
  truth.c2 = 4e-5;
  truth.c3 = Eigen::VectorXd(2);
  truth.c3 << -0.3, 0.05;
  truth.alpha = 0.0;
  truth.intercepts = Intercepts::pooled(0.2);
  const Dataset data = testutil::simulate_iid_dataset(truth, 3, 400, 47);

  FitSpec br_spec;
  br_spec.include_belief_regressor = false;
  const FitResult br = fit_br(data, br_spec);

  FitSpec fpl_spec;
  fpl_spec.estimator = Estimator::fpl;
  fpl_spec.fix_alpha_zero = true;
  const FitResult fpl = fit_fpl(data, fpl_spec);

  CHECK(fpl.converged);
  // same argmax: compare (c1, c2, c3, const) across the two layouts
  CHECK(fpl.coefficients(0) == doctest::Approx(br.coefficients(0)).epsilon(1e-6));
  CHECK(fpl.coefficients(1) == doctest::Approx(br.coefficients(1)).epsilon(1e-6));
  CHECK(fpl.coefficients(2) == doctest::Approx(br.coefficients(2)).epsilon(1e-6));
  CHECK(fpl.coefficients(3) == doctest::Approx(br.coefficients(3)).epsilon(1e-6));
  CHECK(fpl.coefficients(5) == doctest::Approx(br.coefficients(4)).epsilon(1e-6));
  CHECK(fpl.loglik == doctest::Approx(br.loglik).epsilon(1e-10));
}

TEST_CASE("standard errors: duplication, analytic information, non-PD rejection") {
  const IndexParams truth = recovery_truth(2, ErrorDist::logit, 0.5);
  Dataset data = testutil::simulate_iid_dataset(truth, 2, 300, 53);
  FitSpec spec;
  spec.include_belief_regressor = true;
  const FitResult fit = fit_br(data, spec);

  Dataset doubled = data;
  for (auto& v : doubled.villages) {
    auto copy = v.households;
    for (auto& h : copy) h.id += 100000;
    v.households.insert(v.households.end(), copy.begin(), copy.end());
    v.total_households *= 2;
  }
  const FitResult fit2 = fit_br(doubled, spec);
  for (int j = 0; j < fit.std_errors.size(); ++j)
    CHECK(fit2.std_errors(j) ==
          doctest::Approx(fit.std_errors(j) / std::sqrt(2.0)).epsilon(1e-6));

  // single-regressor logit against the closed-form Fisher information
  Eigen::MatrixXd X(6, 1);
  X << -2.0, -1.0, -0.5, 0.5, 1.0, 2.0;
  Eigen::VectorXd y(6);
  y << 0, 0, 1, 0, 1, 1;
  const double b = 0.7;
  double info = 0.0;
  for (int i = 0; i < 6; ++i) {
    const double p = oracle::logistic_cdf(b * X(i, 0));
    info += p * (1.0 - p) * X(i, 0) * X(i, 0);
  }
  FitResult manual;
  manual.neg_hessian = binary_neg_hessian(X, y, ErrorDist::logit, Eigen::VectorXd::Constant(1, b));
  const Eigen::VectorXd se = standard_errors(manual);
  CHECK(se(0) == doctest::Approx(1.0 / std::sqrt(info)).epsilon(1e-8));

  FitResult bad;
  bad.neg_hessian = Eigen::MatrixXd::Zero(2, 2);
  bad.neg_hessian(0, 0) = 1.0;
  bad.neg_hessian(1, 1) = -0.5;
  CHECK_THROWS_AS((void)standard_errors(bad), numerical_error);

  FitResult hollow;
  CHECK_THROWS_AS((void)standard_errors(hollow), input_error);
}

TEST_CASE("village relabeling leaves the fit invariant") {
  const IndexParams truth = recovery_truth(3, ErrorDist::logit, 1.2);
  Dataset data = testutil::simulate_iid_dataset(truth, 3, 200, 61);

  FitSpec spec;
  spec.fixed_effects = FixedEffectScheme::dummies_homogeneity;
  spec.tied_pair = {1, 3};
  const FitResult base = fit_br(data, spec);

  Dataset relabeled = data;
  for (auto& v : relabeled.villages) {
    const int new_id = v.id == 1 ? 7 : v.id == 2 ? 5 : 9;
    v.id = new_id;
    for (auto& h : v.households) h.village_id = new_id;
  }
  FitSpec spec2 = spec;
  spec2.tied_pair = {7, 9};
  const FitResult moved = fit_br(relabeled, spec2);

  CHECK(moved.loglik == doctest::Approx(base.loglik).epsilon(1e-10));
  for (int j = 0; j < 5; ++j)
    CHECK(moved.coefficients(j) == doctest::Approx(base.coefficients(j)).epsilon(1e-8));
  CHECK(moved.village_intercepts.at(7) ==
        doctest::Approx(base.village_intercepts.at(1)).epsilon(1e-8));
}
