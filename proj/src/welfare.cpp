#include "takeup/welfare.hpp"

#include "takeup/demand.hpp"
#include "takeup/equilibrium.hpp"
#include "takeup/parallel.hpp"
#include "takeup/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace takeup {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void validate_welfare_inputs(const IndexParams& params, const SpilloverSplit& split, double pi0,
                             double pi1, const PolicyScenario& scenario) {
  scenario.validate();
  (void)structural_betas(params);  // throws welfare_error when beta1 or beta0 <= 0
  if (params.alpha < 0.0)
    throw welfare_error("welfare: alpha must be nonnegative, got " +
                        std::to_string(params.alpha));
  if (split.alpha1 < -1e-12 || split.alpha0 > 1e-12)
    throw welfare_error("welfare: split requires alpha1 >= 0 >= alpha0");
  if (std::abs(split.alpha() - params.alpha) > 1e-9 * std::max(1.0, std::abs(params.alpha)))
    throw welfare_error("welfare: spillover split does not add up to alpha");
  for (double pi : {pi0, pi1})
    if (!(pi >= -1e-12 && pi <= 1.0 + 1e-12))
      throw welfare_error("welfare: take-up rate outside [0,1]: " + std::to_string(pi));
}

/// Closed-form skeleton of one CV distribution: support thresholds plus the
/// interior CDF. All public welfare quantities are derived from this.
struct CvStructure {
  double lo = 0.0;
  double hi = 0.0;
  CvRegime regime = CvRegime::pi_up;
  CvGroup group = CvGroup::eligible;
  std::function<double(double)> interior;  // CDF value on [lo, hi)
};

CvStructure cv_structure(const IndexParams& params, const SpilloverSplit& split, double y,
                         const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                         double pi1, double intercept, CvGroup group) {
  validate_welfare_inputs(params, split, pi0, pi1, scenario);
  const Betas betas = structural_betas(params);
  const double dpi = pi1 - pi0;
  const double p_pre = scenario.p0;
  const double p_post = group == CvGroup::eligible ? scenario.p1 : scenario.p0;

  // Support thresholds: t1 is where the always-buyer branch saturates, t2 the
  // never-buyer branch. Their order selects the interior formula.
  const double t1 = (p_post - p_pre) - (split.alpha1 / betas.beta1) * dpi;
  const double t2 = -(split.alpha0 / betas.beta0) * dpi;

  // Shifted belief arguments; at alpha = 0 both are defined as pi0 (their
  // limit), and alpha multiplies them in the index so the value is inert.
  const double pi_tilde =
      params.alpha > 0.0 ? pi0 + (split.alpha1 / params.alpha) * dpi : pi0;
  const double pi_check =
      params.alpha > 0.0 ? pi0 + ((params.alpha - split.alpha1) / params.alpha) * dpi : pi0;

  CvStructure s;
  s.group = group;
  if (t1 <= t2) {
    s.lo = t1;
    s.hi = t2;
    s.regime = dpi > 0.0 ? CvRegime::pi_up : CvRegime::pi_down_branch_a;
    s.interior = [params, y, z, pi_tilde, intercept, p_post](double a) {
      return demand_probability(params, p_post - a, y, z, pi_tilde, intercept);
    };
  } else {
    s.lo = t2;
    s.hi = t1;
    s.regime = CvRegime::pi_down_branch_b;
    s.interior = [params, y, z, pi_check, intercept, p_pre](double a) {
      return 1.0 - demand_probability(params, p_pre + a, y + a, z, pi_check, intercept);
    };
  }
  return s;
}

CvCdf sample_cdf(const CvStructure& s) {
  CvCdf out;
  out.support_lo = s.lo;
  out.support_hi = s.hi;
  out.regime = s.regime;
  out.group = s.group;
  if (!(s.hi > s.lo)) {
    out.grid = {{s.lo, 1.0}};
    return out;
  }
  constexpr int kPoints = 401;
  out.grid.reserve(kPoints);
  double prev = 0.0;
  for (int i = 0; i < kPoints; ++i) {
    const double a = s.lo + (s.hi - s.lo) * i / (kPoints - 1);
    double prob = i == kPoints - 1 ? 1.0 : std::clamp(s.interior(a), 0.0, 1.0);
    prob = std::max(prob, prev);  // analytic monotonicity, shielded from rounding
    out.grid.emplace_back(a, prob);
    prev = prob;
  }
  return out;
}

/// E[S] from the CDF: int_0^inf (1 - CDF) da - int_-inf^0 CDF da, with the
/// range split exactly at the support endpoints so each piece is smooth.
double mean_from_tails(const CvStructure& s) {
  if (!(s.hi > s.lo)) return s.lo;  // unit atom
  double positive = 0.0;
  if (s.lo > 0.0) positive += s.lo;  // CDF is 0 below lo
  const double upper_from = std::max(s.lo, 0.0);
  if (s.hi > upper_from)
    positive += integrate([&](double a) { return 1.0 - s.interior(a); }, upper_from, s.hi);
  double negative = 0.0;
  if (s.lo < 0.0) {
    negative += integrate(s.interior, s.lo, std::min(s.hi, 0.0));
    if (s.hi < 0.0) negative += -s.hi;  // CDF is 1 between hi and 0
  }
  return positive - negative;
}

/// E[S] by the price-domain displays (rising take-up only): the first term
/// integrates demand over the post-policy-to-saturation price band, the
/// second the complementary band below the post price.
double mean_price_domain(const IndexParams& params, const SpilloverSplit& split, double y,
                         const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                         double pi1, double intercept, CvGroup group) {
  const Betas betas = structural_betas(params);
  const double dpi = pi1 - pi0;
  const double p_pre = scenario.p0;
  const double p_post = group == CvGroup::eligible ? scenario.p1 : scenario.p0;
  const double pi_tilde =
      params.alpha > 0.0 ? pi0 + (split.alpha1 / params.alpha) * dpi : pi0;
  auto q1 = [&](double p) { return demand_probability(params, p, y, z, pi_tilde, intercept); };
  const double term1 =
      integrate(q1, p_post, p_pre + (split.alpha1 / betas.beta1) * dpi);
  const double term2 = integrate([&](double p) { return 1.0 - q1(p); },
                                 p_post + (split.alpha0 / betas.beta0) * dpi, p_post);
  return -term1 + term2;
}

double mean_cv_impl(const IndexParams& params, const SpilloverSplit& split, double y,
                    const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                    double pi1, double intercept, CvGroup group) {
  const CvStructure s = cv_structure(params, split, y, z, scenario, pi0, pi1, intercept, group);
  if (s.regime == CvRegime::pi_up)
    return mean_price_domain(params, split, y, z, scenario, pi0, pi1, intercept, group);
  return mean_from_tails(s);
}

SpilloverSplit split_at(const IndexParams& params, double alpha1) {
  return spillover_split(params.alpha, alpha1);
}

/// Flattened participant view used by the dataset-level aggregates.
struct HouseholdRef {
  const Household* h = nullptr;
  double pi0 = 0.0;
  double pi1 = 0.0;
  double intercept = 0.0;
};

std::vector<HouseholdRef> participant_view(const Dataset& data, const IndexParams& params,
                                           const std::map<int, double>& pi0s,
                                           const std::map<int, double>& pi1s) {
  std::vector<HouseholdRef> rows;
  for (const auto& v : data.villages) {
    const auto it0 = pi0s.find(v.id);
    const auto it1 = pi1s.find(v.id);
    if (it0 == pi0s.end() || it1 == pi1s.end())
      throw input_error("welfare: no solved take-up pair for village " + std::to_string(v.id));
    const double intercept = params.intercepts.value_for(v.id);
    for (const auto& h : v.households)
      if (h.participant) rows.push_back({&h, it0->second, it1->second, intercept});
  }
  if (rows.empty()) throw input_error("welfare: dataset has no participant households");
  return rows;
}

}  // namespace

CvCdf cv_cdf_eligible(const IndexParams& params, const SpilloverSplit& split, double y,
                      const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                      double pi1, double village_intercept) {
  return sample_cdf(cv_structure(params, split, y, z, scenario, pi0, pi1, village_intercept,
                                 CvGroup::eligible));
}

CvCdf cv_cdf_ineligible(const IndexParams& params, const SpilloverSplit& split, double y,
                        const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                        double pi1, double village_intercept) {
  return sample_cdf(cv_structure(params, split, y, z, scenario, pi0, pi1, village_intercept,
                                 CvGroup::ineligible));
}

double mean_cv_eligible(const IndexParams& params, const SpilloverSplit& split, double y,
                        const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                        double pi1, double village_intercept) {
  return mean_cv_impl(params, split, y, z, scenario, pi0, pi1, village_intercept,
                      CvGroup::eligible);
}

double mean_cv_ineligible(const IndexParams& params, const SpilloverSplit& split, double y,
                          const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                          double pi1, double village_intercept) {
  return mean_cv_impl(params, split, y, z, scenario, pi0, pi1, village_intercept,
                      CvGroup::ineligible);
}

double mean_cv_from_cdf(const IndexParams& params, const SpilloverSplit& split, double y,
                        const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                        double pi1, double village_intercept, CvGroup group) {
  return mean_from_tails(
      cv_structure(params, split, y, z, scenario, pi0, pi1, village_intercept, group));
}

WelfareBounds welfare_bounds(const IndexParams& params, double y, const Eigen::VectorXd& z,
                             const PolicyScenario& scenario, double pi0, double pi1,
                             double village_intercept, CvGroup group,
                             const std::vector<double>& alpha1_grid) {
  std::vector<double> grid = {0.0, 0.5 * params.alpha, params.alpha};
  grid.insert(grid.end(), alpha1_grid.begin(), alpha1_grid.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-12; }),
             grid.end());

  WelfareBounds out;
  auto value_at = [&](double alpha1) {
    return mean_cv_impl(params, split_at(params, alpha1), y, z, scenario, pi0, pi1,
                        village_intercept, group);
  };
  out.curve.reserve(grid.size());
  for (double alpha1 : grid) out.curve.emplace_back(alpha1, value_at(alpha1));
  out.lower = -value_at(0.0);
  out.symmetric = -value_at(0.5 * params.alpha);
  out.upper = -value_at(params.alpha);
  return out;
}

double net_cv(const Village& village, const IndexParams& params, const SpilloverSplit& split,
              const PolicyScenario& scenario, double pi0, double pi1) {
  std::vector<const Household*> rows;
  for (const auto& h : village.households)
    if (h.participant) rows.push_back(&h);
  if (rows.empty())
    throw input_error("net_cv: village " + std::to_string(village.id) + " has no participants");
  const double intercept = params.intercepts.value_for(village.id);
  const double total = parallel_sum(rows.size(), [&](std::size_t i) {
    const Household& h = *rows[i];
    return scenario.eligible(h.wealth)
               ? mean_cv_eligible(params, split, h.wealth, h.covariates, scenario, pi0, pi1,
                                  intercept)
               : mean_cv_ineligible(params, split, h.wealth, h.covariates, scenario, pi0, pi1,
                                    intercept);
  });
  return total / static_cast<double>(rows.size());
}

double net_cv(const Dataset& data, const IndexParams& params, const SpilloverSplit& split,
              const PolicyScenario& scenario, const std::map<int, double>& pi0s,
              const std::map<int, double>& pi1s) {
  const auto rows = participant_view(data, params, pi0s, pi1s);
  const double total = parallel_sum(rows.size(), [&](std::size_t i) {
    const auto& r = rows[i];
    return scenario.eligible(r.h->wealth)
               ? mean_cv_eligible(params, split, r.h->wealth, r.h->covariates, scenario, r.pi0,
                                  r.pi1, r.intercept)
               : mean_cv_ineligible(params, split, r.h->wealth, r.h->covariates, scenario,
                                    r.pi0, r.pi1, r.intercept);
  });
  return total / static_cast<double>(rows.size());
}

double subsidy_spending(const Dataset& data, const IndexParams& params,
                        const PolicyScenario& scenario, const std::map<int, double>& pi1s) {
  scenario.validate();
  const auto rows = participant_view(data, params, pi1s, pi1s);
  const double total = parallel_sum(rows.size(), [&](std::size_t i) {
    const auto& r = rows[i];
    if (!scenario.eligible(r.h->wealth)) return 0.0;
    return demand_probability(params, scenario.p1, r.h->wealth, r.h->covariates, r.pi1,
                              r.intercept);
  });
  return (scenario.p0 - scenario.p1) * total / static_cast<double>(rows.size());
}

double deadweight_loss(const Dataset& data, const IndexParams& params,
                       const SpilloverSplit& split, const PolicyScenario& scenario,
                       const std::map<int, double>& pi0s, const std::map<int, double>& pi1s) {
  return subsidy_spending(data, params, scenario, pi1s) +
         net_cv(data, params, split, scenario, pi0s, pi1s);
}

double deadweight_loss_no_spillover(const Dataset& data, const IndexParams& params,
                                    const PolicyScenario& scenario) {
  IndexParams no_spill = params;
  no_spill.alpha = 0.0;
  std::map<int, double> zeros;
  for (const auto& v : data.villages) zeros[v.id] = 0.0;
  const SpilloverSplit split{0.0, 0.0};
  // Ineligible welfare is identically zero without spillover, so net reduces
  // to the eligible consumer-surplus term; spending likewise loses the
  // belief argument.
  return subsidy_spending(data, no_spill, scenario, zeros) +
         net_cv(data, no_spill, split, scenario, zeros, zeros);
}

PolicyReport policy_report(const Dataset& data, const IndexParams& params,
                           const PolicyScenario& scenario, const std::map<int, double>& pi0s,
                           const std::map<int, double>& pi1s) {
  const SpilloverSplit at_alpha = split_at(params, params.alpha);
  const SpilloverSplit at_zero = split_at(params, 0.0);

  PolicyReport report;
  double sum_low = 0.0, sum_high = 0.0;
  long long n_total = 0;
  for (const auto& v : data.villages) {
    const auto it0 = pi0s.find(v.id);
    const auto it1 = pi1s.find(v.id);
    if (it0 == pi0s.end() || it1 == pi1s.end())
      throw input_error("policy_report: no solved take-up pair for village " +
                        std::to_string(v.id));
    const double intercept = params.intercepts.value_for(v.id);

    VillagePolicyRow row;
    row.village_id = v.id;
    row.pi0 = it0->second;
    row.pi1 = it1->second;
    double elig_low = 0.0, elig_high = 0.0, inelig_low = 0.0, inelig_high = 0.0;
    long long n_elig = 0, n_inelig = 0;
    for (const auto& h : v.households) {
      if (!h.participant) continue;
      if (scenario.eligible(h.wealth)) {
        elig_low += mean_cv_eligible(params, at_alpha, h.wealth, h.covariates, scenario,
                                     row.pi0, row.pi1, intercept);
        elig_high += mean_cv_eligible(params, at_zero, h.wealth, h.covariates, scenario,
                                      row.pi0, row.pi1, intercept);
        ++n_elig;
      } else {
        inelig_low += mean_cv_ineligible(params, at_alpha, h.wealth, h.covariates, scenario,
                                         row.pi0, row.pi1, intercept);
        inelig_high += mean_cv_ineligible(params, at_zero, h.wealth, h.covariates, scenario,
                                          row.pi0, row.pi1, intercept);
        ++n_inelig;
      }
    }
    const long long n_village = n_elig + n_inelig;
    if (n_village == 0)
      throw input_error("policy_report: village " + std::to_string(v.id) +
                        " has no participants");
    row.eligible_share = static_cast<double>(n_elig) / static_cast<double>(n_village);
    row.eligible_cv_low = n_elig > 0 ? elig_low / static_cast<double>(n_elig) : kNaN;
    row.eligible_cv_high = n_elig > 0 ? elig_high / static_cast<double>(n_elig) : kNaN;
    row.ineligible_cv_low = n_inelig > 0 ? inelig_low / static_cast<double>(n_inelig) : kNaN;
    row.ineligible_cv_high = n_inelig > 0 ? inelig_high / static_cast<double>(n_inelig) : kNaN;
    report.villages.push_back(row);

    sum_low += elig_low + inelig_low;
    sum_high += elig_high + inelig_high;
    n_total += n_village;
  }

  report.net_cv_low = sum_low / static_cast<double>(n_total);
  report.net_cv_high = sum_high / static_cast<double>(n_total);

  // Aggregation check: the pooled route must reproduce the row-accumulated
  // net values (same integrals, different summation path).
  const double direct_low = net_cv(data, params, at_alpha, scenario, pi0s, pi1s);
  const double direct_high = net_cv(data, params, at_zero, scenario, pi0s, pi1s);
  const double tol = 1e-9;
  if (std::abs(direct_low - report.net_cv_low) > tol * std::max(1.0, std::abs(direct_low)) ||
      std::abs(direct_high - report.net_cv_high) > tol * std::max(1.0, std::abs(direct_high)))
    throw numerical_error("policy_report: net welfare aggregation mismatch");

  report.subsidy_spending = subsidy_spending(data, params, scenario, pi1s);
  report.dwl_low = report.subsidy_spending + report.net_cv_low;
  report.dwl_high = report.subsidy_spending + report.net_cv_high;
  return report;
}

std::vector<ComparativeStaticsRow> comparative_statics(const Dataset& data,
                                                       const IndexParams& params,
                                                       const PolicyScenario& scenario_template,
                                                       const std::vector<double>& shares) {
  for (double s : shares)
    if (!(s > 0.0 && s < 1.0))
      throw input_error("comparative_statics: shares must lie in (0,1), got " +
                        std::to_string(s));

  std::vector<double> wealth;
  for (const auto& v : data.villages)
    for (const auto& h : v.households)
      if (h.participant) wealth.push_back(h.wealth);
  if (wealth.empty()) throw input_error("comparative_statics: no participant households");
  std::sort(wealth.begin(), wealth.end());

  // Baseline equilibria do not depend on tau; solve them once.
  std::map<int, double> pi0s;
  for (const auto& v : data.villages)
    pi0s[v.id] = solve_pi_baseline(v, params, scenario_template.p0).value;

  const SpilloverSplit at_alpha = split_at(params, params.alpha);
  const SpilloverSplit at_zero = split_at(params, 0.0);

  std::vector<ComparativeStaticsRow> out;
  out.reserve(shares.size());
  for (double share : shares) {
    const auto k = static_cast<std::size_t>(
        std::ceil(share * static_cast<double>(wealth.size())));
    const double tau = wealth[std::max<std::size_t>(k, 1) - 1];

    PolicyScenario scn = scenario_template;
    scn.tau = tau;
    std::map<int, double> pi1s;
    for (const auto& v : data.villages)
      pi1s[v.id] = solve_pi_policy(v, params, scn).value;

    ComparativeStaticsRow row;
    row.share = share;
    row.tau = tau;

    const auto rows = participant_view(data, params, pi0s, pi1s);
    row.take_up_pre = parallel_sum(rows.size(), [&](std::size_t i) {
                        const auto& r = rows[i];
                        return demand_probability(params, scn.p0, r.h->wealth, r.h->covariates,
                                                  r.pi0, r.intercept);
                      }) /
                      static_cast<double>(rows.size());
    row.take_up_post = parallel_sum(rows.size(), [&](std::size_t i) {
                         const auto& r = rows[i];
                         const double price = scn.eligible(r.h->wealth) ? scn.p1 : scn.p0;
                         return demand_probability(params, price, r.h->wealth, r.h->covariates,
                                                   r.pi1, r.intercept);
                       }) /
                       static_cast<double>(rows.size());

    double elig_low = 0.0, elig_high = 0.0, inelig_low = 0.0, inelig_high = 0.0;
    long long n_elig = 0, n_inelig = 0;
    for (const auto& r : rows) {
      if (scn.eligible(r.h->wealth)) {
        elig_low += mean_cv_eligible(params, at_alpha, r.h->wealth, r.h->covariates, scn, r.pi0,
                                     r.pi1, r.intercept);
        elig_high += mean_cv_eligible(params, at_zero, r.h->wealth, r.h->covariates, scn, r.pi0,
                                      r.pi1, r.intercept);
        ++n_elig;
      } else {
        inelig_low += mean_cv_ineligible(params, at_alpha, r.h->wealth, r.h->covariates, scn,
                                         r.pi0, r.pi1, r.intercept);
        inelig_high += mean_cv_ineligible(params, at_zero, r.h->wealth, r.h->covariates, scn,
                                          r.pi0, r.pi1, r.intercept);
        ++n_inelig;
      }
    }
    row.eligible_cv_low = n_elig > 0 ? elig_low / static_cast<double>(n_elig) : kNaN;
    row.eligible_cv_high = n_elig > 0 ? elig_high / static_cast<double>(n_elig) : kNaN;
    row.ineligible_cv_low = n_inelig > 0 ? inelig_low / static_cast<double>(n_inelig) : kNaN;
    row.ineligible_cv_high = n_inelig > 0 ? inelig_high / static_cast<double>(n_inelig) : kNaN;
    row.net_cv_low = (elig_low + inelig_low) / static_cast<double>(rows.size());
    row.net_cv_high = (elig_high + inelig_high) / static_cast<double>(rows.size());
    row.spending = subsidy_spending(data, params, scn, pi1s);
    row.dwl_low = row.spending + row.net_cv_low;
    row.dwl_high = row.spending + row.net_cv_high;
    out.push_back(row);
  }
  return out;
}

}  // namespace takeup
