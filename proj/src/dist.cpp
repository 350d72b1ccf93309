#include "takeup/dist.hpp"

#include <cmath>

namespace takeup {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kSqrt2Pi = 2.50662827463100050242;
}  // namespace

double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double cdf(ErrorDist d, double x) {
  if (d == ErrorDist::logit) {
    // Branch on sign to keep exp() bounded for large |x|.
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
  return norm_cdf(x);
}

double pdf(ErrorDist d, double x) {
  if (d == ErrorDist::logit) {
    const double p = cdf(ErrorDist::logit, x);
    return p * (1.0 - p);
  }
  return norm_pdf(x);
}

double sup_density(ErrorDist d) { return d == ErrorDist::logit ? 0.25 : kInvSqrt2Pi; }

double contraction_bound(ErrorDist d) { return d == ErrorDist::logit ? 4.0 : kSqrt2Pi; }

namespace {

// phi(x)/Phi(x): exact through erfc down to x ~ -34, then the asymptotic
// expansion -x - 1/x + 2/x^3 (relative error < 1e-9 there).
double mills_lower(double x) {
  if (x > -34.0) return norm_pdf(x) / norm_cdf(x);
  return -x - 1.0 / x + 2.0 / (x * x * x);
}

}  // namespace

double log_cdf(ErrorDist d, double x) {
  if (d == ErrorDist::logit) {
    // log(1/(1+e^-x)) = -log1p(e^-x) for x >= 0; x - log1p(e^x) otherwise.
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  }
  if (x > -34.0) return std::log(norm_cdf(x));
  // log phi - log(phi/Phi) in the far tail
  return -0.5 * x * x - std::log(kSqrt2Pi) - std::log(mills_lower(x));
}

double score_factor(ErrorDist d, int a, double x) {
  if (d == ErrorDist::logit) return static_cast<double>(a) - cdf(ErrorDist::logit, x);
  // a=1: phi/Phi evaluated at x; a=0: -phi(x)/(1-Phi(x)) = -mills_lower(-x)
  return a == 1 ? mills_lower(x) : -mills_lower(-x);
}

double hessian_weight(ErrorDist d, int a, double x) {
  if (d == ErrorDist::logit) {
    const double p = cdf(ErrorDist::logit, x);
    return p * (1.0 - p);
  }
  const double s = score_factor(ErrorDist::probit, a, x);
  return s * (s + x);
}

}  // namespace takeup
