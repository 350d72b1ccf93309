#pragma once

#include "takeup/types.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace takeup {

struct FixedPointOptions {
  double tol = 1e-12;       ///< convergence test on |map(x) - x|
  int max_iter = 10'000;    ///< damped-iteration budget
  double damping = 1.0;     ///< x <- (1-damping)*x + damping*map(x); in (0,1]
  int bisect_max_iter = 200;  ///< fallback bisection budget
};

struct FixedPointResult {
  double value = 0.0;
  double residual = 0.0;  ///< map(value) - value at the returned point
  int iterations = 0;     ///< total map evaluations, both stages
  bool converged = false;
  bool used_bisection = false;
};

/// Every root of pi = RHS(pi) found on [0,1], plus the scanned objective.
struct UniquenessReport {
  std::vector<double> roots;  ///< ascending
  std::vector<std::pair<double, double>> objective_grid;  ///< (pi, squared residual)
};

/// Solves x = map(x) for map: [0,1] -> [0,1] by damped iteration; on a stall,
/// oscillation, or an exhausted budget it falls back to bisection on
/// x - map(x) over [0,1]. Throws solver_error (carrying the last residual)
/// when both stages fail, and input_error for damping outside (0,1].
FixedPointResult fixed_point_iterate(const std::function<double(double)>& map, double init,
                                     const FixedPointOptions& opts = {});

/// Mean take-up over the village's participant households when everyone holds
/// belief pi and household h faces price price_of(h). This is the fixed-point
/// right-hand side for every equilibrium below; the village empirical
/// distribution carries equal weights.
double village_take_up_rhs(const Village& village, const IndexParams& params,
                           const std::function<double(const Household&)>& price_of, double pi);

/// Equilibrium take-up when every household faces the common price p0.
FixedPointResult solve_pi_baseline(const Village& village, const IndexParams& params, double p0,
                                   const FixedPointOptions& opts = {});

/// Equilibrium take-up under the subsidy: wealth <= tau buys at p1, the rest
/// at p0. Shares the baseline code path, so tau = -inf reproduces
/// solve_pi_baseline(p0) and tau = +inf reproduces solve_pi_baseline(p1)
/// exactly.
FixedPointResult solve_pi_policy(const Village& village, const IndexParams& params,
                                 const PolicyScenario& scenario,
                                 const FixedPointOptions& opts = {});

/// Scans [pi - RHS(pi)]^2 on a uniform grid, brackets every sign change of
/// pi - RHS(pi) and polishes each bracket by bisection. An empty root list is
/// a valid report. grid_size must be >= 3.
UniquenessReport uniqueness_scan(const Village& village, const IndexParams& params,
                                 const std::function<double(const Household&)>& price_of,
                                 int grid_size = 1001, double root_tol = 1e-10);

/// Common-price and subsidy conveniences for the scanner.
UniquenessReport uniqueness_scan(const Village& village, const IndexParams& params, double p0,
                                 int grid_size = 1001, double root_tol = 1e-10);
UniquenessReport uniqueness_scan(const Village& village, const IndexParams& params,
                                 const PolicyScenario& scenario, int grid_size = 1001,
                                 double root_tol = 1e-10);

/// True when |alpha| * sup f < 1, the condition that makes the equilibrium
/// map a contraction (and the fixed point unique).
bool contraction_holds(double alpha, ErrorDist error);

/// contraction_bound(error) - |alpha|; positive iff the contraction holds.
double contraction_margin(double alpha, ErrorDist error);

}  // namespace takeup
