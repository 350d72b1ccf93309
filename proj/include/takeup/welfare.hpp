#pragma once

#include "takeup/types.hpp"

#include <map>
#include <utility>
#include <vector>

namespace takeup {

/// Which closed-form branch generated a compensating-variation distribution.
/// pi_up: post-policy take-up above baseline. The two pi_down branches cover
/// falling take-up, split by which support threshold comes first (ties go to
/// branch A).
enum class CvRegime { pi_up, pi_down_branch_a, pi_down_branch_b };

enum class CvGroup { eligible, ineligible };

/// Distribution of the compensating variation S for one household type.
/// Negative S is a welfare gain: S is the transfer that restores pre-policy
/// utility, so beneficiaries need money taken away. The distribution has
/// atoms at both support endpoints and is continuous in between.
struct CvCdf {
  double support_lo = 0.0;
  double support_hi = 0.0;
  /// (a, P(S <= a)) pairs: 401 equally spaced points spanning the support
  /// (a single point when the support is degenerate).
  std::vector<std::pair<double, double>> grid;
  CvRegime regime = CvRegime::pi_up;
  CvGroup group = CvGroup::eligible;
};

/// Partial-identification summary of one household's welfare across the
/// unidentified spillover split. lower/symmetric/upper are the welfare GAIN
/// (-E[S]) at alpha1 = 0, alpha/2, alpha; the gain is nondecreasing in
/// alpha1, so these bracket the truth. curve keeps the raw mean CV per
/// alpha1 grid point.
struct WelfareBounds {
  double lower = 0.0;
  double symmetric = 0.0;
  double upper = 0.0;
  std::vector<std::pair<double, double>> curve;  // (alpha1, mean CV)
};

/// Per-village policy outcome. Mean-CV aggregates average over the village's
/// participant households; `low` is the value at alpha1 = alpha and `high`
/// at alpha1 = 0 (mean CV is nonincreasing in alpha1). Aggregates over an
/// empty group are NaN.
struct VillagePolicyRow {
  int village_id = 0;
  double pi0 = 0.0;
  double pi1 = 0.0;
  double eligible_share = 0.0;
  double eligible_cv_low = 0.0;
  double eligible_cv_high = 0.0;
  double ineligible_cv_low = 0.0;
  double ineligible_cv_high = 0.0;
};

/// Dataset-level policy outcome: per-village rows plus pooled net mean CV,
/// the deadweight-loss interval, and expected subsidy spending per
/// participant household.
struct PolicyReport {
  std::vector<VillagePolicyRow> villages;
  double net_cv_low = 0.0;   // at alpha1 = alpha
  double net_cv_high = 0.0;  // at alpha1 = 0
  double dwl_low = 0.0;      // spending + net_cv_low
  double dwl_high = 0.0;     // spending + net_cv_high
  double subsidy_spending = 0.0;
};

/// One row of the eligibility-threshold sweep.
struct ComparativeStaticsRow {
  double share = 0.0;
  double tau = 0.0;
  double take_up_pre = 0.0;
  double take_up_post = 0.0;
  double eligible_cv_low = 0.0;
  double eligible_cv_high = 0.0;
  double ineligible_cv_low = 0.0;
  double ineligible_cv_high = 0.0;
  double net_cv_low = 0.0;
  double net_cv_high = 0.0;
  double dwl_low = 0.0;
  double dwl_high = 0.0;
  double spending = 0.0;
};

/// CDF of the compensating variation for an eligible household at (y, z) in a
/// village with baseline take-up pi0, policy take-up pi1, and the given
/// intercept. Throws welfare_error when the structural preconditions fail
/// (beta1, beta0 > 0; alpha >= 0; split consistent; beliefs in [0,1]).
CvCdf cv_cdf_eligible(const IndexParams& params, const SpilloverSplit& split, double y,
                      const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                      double pi1, double village_intercept);

/// Same for a household above the eligibility threshold (price unchanged;
/// only the belief shift matters).
CvCdf cv_cdf_ineligible(const IndexParams& params, const SpilloverSplit& split, double y,
                        const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                        double pi1, double village_intercept);

/// Mean compensating variation E[S] for an eligible household. Negative
/// values are gains. Computed by price-domain quadrature when take-up rises
/// and by CDF tail integrals when it falls.
double mean_cv_eligible(const IndexParams& params, const SpilloverSplit& split, double y,
                        const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                        double pi1, double village_intercept);

double mean_cv_ineligible(const IndexParams& params, const SpilloverSplit& split, double y,
                          const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                          double pi1, double village_intercept);

/// Mean CV evaluated from the CDF's tail integrals,
///   E[S] = int_0^inf (1 - CDF) da - int_{-inf}^0 CDF da,
/// split exactly at the support endpoints. Independent route used to
/// cross-check the quadrature displays; must agree with mean_cv_* tightly.
double mean_cv_from_cdf(const IndexParams& params, const SpilloverSplit& split, double y,
                        const Eigen::VectorXd& z, const PolicyScenario& scenario, double pi0,
                        double pi1, double village_intercept, CvGroup group);

/// Mean CV over the alpha1 grid ({0, alpha/2, alpha} merged with any user
/// grid). Throws input_error when a user grid point falls outside [0, alpha].
/// alpha = 0 yields degenerate (equal) bounds.
WelfareBounds welfare_bounds(const IndexParams& params, double y, const Eigen::VectorXd& z,
                             const PolicyScenario& scenario, double pi0, double pi1,
                             double village_intercept, CvGroup group,
                             const std::vector<double>& alpha1_grid = {});

/// Village-average mean CV over participants:
///   avg[ 1{y<=tau} E[S|eligible] + 1{y>tau} E[S|ineligible] ].
double net_cv(const Village& village, const IndexParams& params, const SpilloverSplit& split,
              const PolicyScenario& scenario, double pi0, double pi1);

/// Pooled version: participant-weighted average across villages. pi0s/pi1s
/// map village id to its solved baseline/policy take-up; a missing id is an
/// input_error.
double net_cv(const Dataset& data, const IndexParams& params, const SpilloverSplit& split,
              const PolicyScenario& scenario, const std::map<int, double>& pi0s,
              const std::map<int, double>& pi1s);

/// Expected subsidy spending per participant household:
///   (p0 - p1) * avg[ 1{y<=tau} q1(p1, y, z, pi1_v) ].
double subsidy_spending(const Dataset& data, const IndexParams& params,
                        const PolicyScenario& scenario, const std::map<int, double>& pi1s);

/// Deadweight loss at one spillover split: spending minus the net welfare
/// gain, i.e. spending + net_cv. Can be negative when spillovers amplify the
/// gain beyond the outlay.
double deadweight_loss(const Dataset& data, const IndexParams& params,
                       const SpilloverSplit& split, const PolicyScenario& scenario,
                       const std::map<int, double>& pi0s, const std::map<int, double>& pi1s);

/// Deadweight loss under the no-spillover model: alpha forced to zero, demand
/// evaluated without the belief term, ineligible welfare identically zero.
double deadweight_loss_no_spillover(const Dataset& data, const IndexParams& params,
                                    const PolicyScenario& scenario);

/// Full policy summary: per-village rows plus pooled net CV at the two split
/// extremes, the deadweight-loss interval, and spending. Recomputes the net
/// value through the pooled route as an internal aggregation check
/// (numerical_error on mismatch).
PolicyReport policy_report(const Dataset& data, const IndexParams& params,
                           const PolicyScenario& scenario, const std::map<int, double>& pi0s,
                           const std::map<int, double>& pi1s);

/// Sweep of eligibility generosity: for each share s in (0,1), tau is set to
/// the pooled participant wealth quantile at s, equilibria are re-solved, and
/// demand/welfare/deadweight-loss aggregates are reported.
std::vector<ComparativeStaticsRow> comparative_statics(const Dataset& data,
                                                       const IndexParams& params,
                                                       const PolicyScenario& scenario_template,
                                                       const std::vector<double>& shares);

}  // namespace takeup
