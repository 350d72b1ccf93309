// Independent reference implementations used only by tests. Everything here
// is deliberately written without calling the library's solvers or quadrature
// so that agreement between the two is evidence, not circularity.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

namespace oracle {

// Plain bisection for f(x) = 0 on [lo, hi]; requires a sign change.
inline double bisect(const std::function<double(double)>& f, double lo, double hi,
                     int max_iter = 400) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if (flo * fhi > 0.0) throw std::runtime_error("oracle::bisect: no sign change");
  double mid = lo;
  for (int i = 0; i < max_iter; ++i) {
    mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) break;
    if ((fm > 0.0) == (fhi > 0.0)) {
      hi = mid;
      fhi = fm;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  return mid;
}

// Dense-grid trapezoid rule: slow and simple on purpose. n is the number of
// panels (>= 1).
inline double trapezoid(const std::function<double(double)>& f, double a, double b,
                        long n = 2'000'000) {
  const double h = (b - a) / static_cast<double>(n);
  double sum = 0.5 * (f(a) + f(b));
  for (long i = 1; i < n; ++i) sum += f(a + h * static_cast<double>(i));
  return sum * h;
}

// Standard logistic and normal CDFs, written directly.
inline double logistic_cdf(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::acos(-1.0));
}

// Antiderivatives of the CDFs: d/dx softplus(x) = logistic_cdf(x) and
// d/dx [x Phi(x) + phi(x)] = Phi(x). Used for closed-form integrals of the
// choice probability over a price interval.
inline double softplus(double x) {
  return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double normal_cdf_antiderivative(double x) { return x * normal_cdf(x) + normal_pdf(x); }

// Exact integral of F(k + slope * p) over p in [pa, pb] for the two error
// families (slope != 0).
inline double logistic_prob_integral(double k, double slope, double pa, double pb) {
  return (softplus(k + slope * pb) - softplus(k + slope * pa)) / slope;
}
inline double normal_prob_integral(double k, double slope, double pa, double pb) {
  return (normal_cdf_antiderivative(k + slope * pb) - normal_cdf_antiderivative(k + slope * pa)) /
         slope;
}

// One simulated draw of the compensating variation S for a household under a
// price-subsidy policy, computed straight from the two random utilities: S
// solves max(post-policy utilities, each reduced by beta * S) =
// max(pre-policy utilities). Negative S is a welfare gain. delta1 collects
// every deterministic utility-1 shifter (intercept, covariates); the utility-0
// baseline is normalized to zero and eps is the utility-1 error draw.
struct CvDrawInputs {
  double delta1 = 0.0;   // intercept + covariate terms entering utility 1
  double beta1 = 1.0;    // marginal utility of money when buying
  double beta0 = 1.0;    // marginal utility of money when not buying
  double alpha1 = 0.0;   // belief weight in utility 1 (>= 0)
  double alpha0 = 0.0;   // belief weight in utility 0 (<= 0)
  double y = 0.0;        // wealth
  double p_pre = 0.0;    // price faced before the policy
  double p_post = 0.0;   // price faced after the policy
  double pi_pre = 0.0;   // equilibrium take-up before
  double pi_post = 0.0;  // equilibrium take-up after
};

inline double cv_draw(const CvDrawInputs& in, double eps) {
  const double post1 = in.delta1 + in.beta1 * (in.y - in.p_post) + in.alpha1 * in.pi_post + eps;
  const double post0 = in.beta0 * in.y + in.alpha0 * in.pi_post;
  const double pre1 = in.delta1 + in.beta1 * (in.y - in.p_pre) + in.alpha1 * in.pi_pre + eps;
  const double pre0 = in.beta0 * in.y + in.alpha0 * in.pi_pre;
  const double pre_best = std::max(pre1, pre0);
  return std::min((pre_best - post1) / in.beta1, (pre_best - post0) / in.beta0);
}

}  // namespace oracle
