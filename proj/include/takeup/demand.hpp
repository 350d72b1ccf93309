#pragma once

#include "takeup/dist.hpp"
#include "takeup/types.hpp"

namespace takeup {

/// Structural take-up probability at (p, y, z, pi):
///   F(intercept + c1*p + c2*y + c3'z + alpha*pi).
/// The village intercept is passed explicitly so pooled and fixed-effect
/// analyses share this code path.
/// Throws input_error when z and c3 lengths differ.
double demand_probability(const IndexParams& params, double p, double y,
                          const Eigen::VectorXd& z, double pi, double village_intercept);

/// Linear index without the F() wrapper (shared by solvers and likelihoods).
double linear_index(const IndexParams& params, double p, double y,
                    const Eigen::VectorXd& z, double pi, double village_intercept);

/// Utility slopes implied by the index coefficients: beta1 = -c1 (price side),
/// beta0 = -c1 - c2 (outside side).
struct Betas {
  double beta1 = 0.0;
  double beta0 = 0.0;
};

/// Maps (c1, c2) to (beta1, beta0). Throws welfare_error when either slope is
/// non-positive: the welfare layer cannot run on such parameters.
Betas structural_betas(const IndexParams& params);

/// Builds the (alpha1, alpha0 = alpha1 - alpha) decomposition.
/// Throws input_error unless 0 <= alpha1 <= alpha.
SpilloverSplit spillover_split(double alpha, double alpha1);

/// Scaling factor (N_participants - 1) / (N_total - 1) that converts the
/// participant-sample take-up average into a belief about the whole village
/// (members outside the sample could not buy, so they count as zeros).
/// Throws input_error when total_households < participant count or <= 1.
double participation_scale(const Village& village);

}  // namespace takeup
