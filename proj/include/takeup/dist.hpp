#pragma once

#include "takeup/types.hpp"

namespace takeup {

/// CDF of the index error distribution (standard logistic / standard normal).
double cdf(ErrorDist d, double x);

/// Density of the index error distribution.
double pdf(ErrorDist d, double x);

/// sup_x f(x): 1/4 for the logistic, 1/sqrt(2*pi) for the normal.
double sup_density(ErrorDist d);

/// Largest |alpha| for which the take-up fixed-point map is a contraction:
/// 1 / sup f, i.e. 4 (logit) and sqrt(2*pi) (probit).
double contraction_bound(ErrorDist d);

/// Standard normal CDF / density (used directly by the spatial layer).
double norm_cdf(double x);
double norm_pdf(double x);

/// log F(x), stable for arguments far in either tail.
double log_cdf(ErrorDist d, double x);

/// Score factor s(a, x) = d/dx log[F(x)^a (1-F(x))^(1-a)] for outcome a in
/// {0,1}: the per-observation log-likelihood derivative w.r.t. the index.
/// Logit: a - F(x). Probit: the (signed) inverse Mills ratio.
double score_factor(ErrorDist d, int a, double x);

/// -d/dx s(a, x) >= 0: the per-observation negative-Hessian weight.
/// Logit: F(1-F). Probit: s*(s+x).
double hessian_weight(ErrorDist d, int a, double x);

}  // namespace takeup
