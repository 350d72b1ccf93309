#include "takeup/demand.hpp"

#include <string>

namespace takeup {

double linear_index(const IndexParams& params, double p, double y,
                    const Eigen::VectorXd& z, double pi, double village_intercept) {
  if (z.size() != params.c3.size())
    throw input_error("demand: covariate vector length " + std::to_string(z.size()) +
                      " does not match c3 length " + std::to_string(params.c3.size()));
  double idx = village_intercept + params.c1 * p + params.c2 * y + params.alpha * pi;
  if (z.size() > 0) idx += params.c3.dot(z);
  return idx;
}

double demand_probability(const IndexParams& params, double p, double y,
                          const Eigen::VectorXd& z, double pi, double village_intercept) {
  return cdf(params.error, linear_index(params, p, y, z, pi, village_intercept));
}

Betas structural_betas(const IndexParams& params) {
  Betas b;
  b.beta1 = -params.c1;
  b.beta0 = -params.c1 - params.c2;
  if (!(b.beta1 > 0.0))
    throw welfare_error("structural_betas: beta1 = -c1 = " + std::to_string(b.beta1) +
                        " must be positive for welfare analysis");
  if (!(b.beta0 > 0.0))
    throw welfare_error("structural_betas: beta0 = -c1 - c2 = " + std::to_string(b.beta0) +
                        " must be positive for welfare analysis");
  return b;
}

SpilloverSplit spillover_split(double alpha, double alpha1) {
  if (!(alpha1 >= 0.0) || !(alpha1 <= alpha))
    throw input_error("spillover_split: alpha1 = " + std::to_string(alpha1) +
                      " outside [0, alpha = " + std::to_string(alpha) + "]");
  return SpilloverSplit{alpha1, alpha1 - alpha};
}

double participation_scale(const Village& village) {
  const long long n_part = village.participant_count();
  const long long n_total = village.total_households;
  if (n_total <= 1)
    throw input_error("participation_scale: village " + std::to_string(village.id) +
                      " needs total_households > 1");
  if (n_total < n_part)
    throw input_error("participation_scale: village " + std::to_string(village.id) +
                      " has fewer total households than participants");
  return static_cast<double>(n_part - 1) / static_cast<double>(n_total - 1);
}

}  // namespace takeup
