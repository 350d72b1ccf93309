#pragma once

#include "takeup/estimation.hpp"
#include "takeup/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace takeup {

// ---------------------------------------------------------------------------
// Spatially correlated errors. Households live on a square region whose side
// grows with the sample at fixed density; the latent index error is a
// Gaussian field with exponential correlogram in the L1 (taxicab) metric.
// Beliefs become a surface over (location, own error) instead of one scalar
// per village. The marginal error law is standard normal throughout this
// layer: the correlated field is built from Gaussian conditionals, so the
// logistic option of the IID layer does not carry over.
// ---------------------------------------------------------------------------

struct Location {
  double x = 0.0;
  double y = 0.0;
};

/// L1 distance in kilometres, the metric of the correlogram.
double l1_distance(const Location& a, const Location& b);

/// Sampling design for one region.
struct SpatialConfig {
  int n_households = 0;    ///< N >= 2
  double density_c = 1.0;  ///< households per km^2; region side = sqrt(N / c)
  double phi = 1.0;        ///< correlogram range: corr(d) = exp(-d / phi), > 0
  std::uint64_t seed = 0;

  [[nodiscard]] double side() const;
  void validate() const;  ///< throws input_error on a bad field
};

/// Converged conditional-belief surface psi(l_h, e): household h's expected
/// regional take-up rate given its own error draw e, stored on a uniform
/// e-grid (piecewise linear in between, flat outside). Row h is household h.
struct BeliefField {
  Eigen::VectorXd e_grid;  ///< G nodes, uniform on [-6, 6]
  Eigen::MatrixXd psi;     ///< N x G, entries in [0, 1], nondecreasing along each row
  double residual = 0.0;   ///< sup-norm change under one further operator application
  int sweeps = 0;          ///< operator applications used (excluding the re-check)
  double pi_bar = 0.0;     ///< zero-correlation scalar fixed point at the same inputs
};

/// One row of a belief-convergence experiment: the distance between the
/// conditional surface and the scalar fixed point at region size n,
/// averaged over independently sampled regions.
struct ConvergenceRow {
  int n = 0;
  double lambda = 0.0;        ///< region side length sqrt(n / density_c)
  double mean_abs_dev = 0.0;  ///< normal-density-weighted mean of |psi - pi_bar|
  double sup_dev = 0.0;       ///< sup of |psi - pi_bar|
  int seeds = 0;              ///< regions averaged over
};

/// N locations iid uniform on [0, side]^2. Deterministic in config.seed.
std::vector<Location> sample_region(const SpatialConfig& config);

/// One draw of the error field at the given locations: multivariate normal
/// with unit variances and corr(i, j) = exp(-d_ij / phi). The covariance is
/// factored by Cholesky with an escalating diagonal jitter (1e-10, growing
/// tenfold up to 1e-6); throws numerical_error if it still fails. Coincident
/// locations therefore receive draws identical up to the jitter scale.
Eigen::VectorXd sample_gp(const std::vector<Location>& locations, double phi,
                          std::uint64_t seed);

/// H(e_tilde | e, d): conditional law of a neighbour's error at distance d
/// given own error e. Bivariate-normal conditional with correlation
/// exp(-d / phi); d = 0 degenerates to a unit step at e.
double conditional_cdf_H(double e_tilde, double e, double d, double phi);

/// Solves the conditional belief system
///
///   psi(l_h, e) = (1/N) sum_k integral 1{ b_k + alpha * psi(l_k, t) + t >= 0 }
///                                dH(t | e, d_hk)
///
/// by sweep iteration from the flat start psi == pi_bar, where b_k is the
/// non-social part of household k's index (intercept + c1*p + c2*y + c3'z).
/// The h = k term enters through the marginal law: beliefs are about the
/// regional population, and a household is not its own neighbour, so its own
/// error carries no distance-zero conditioning information.
///
/// Each integral reduces to 1 - H(t*_k | e, d_hk) at the crossing t*_k of the
/// strictly increasing map t -> b_k + alpha * psi(l_k, t) + t, solved exactly
/// on the piecewise-linear belief row. Convergence is guaranteed when
/// alpha * sup_{pairs} conditional density < 1 (coincident distinct
/// households violate it); a non-converging system surfaces as solver_error
/// after max_sweeps. After convergence the residual is re-verified by one
/// further operator application, whose result is the returned surface.
///
/// Sweeps parallelize over households; results are thread-count independent.
BeliefField solve_conditional_beliefs(const std::vector<Location>& locations,
                                      const Eigen::VectorXd& base_index, double alpha,
                                      double phi, int e_grid_size = 129, double tol = 1e-8,
                                      int max_sweeps = 5000);

/// Crossing e* of e -> base + alpha * psi_row_h(e) + e: take-up iff the own
/// error is >= e*. Uses the field's piecewise-linear row with flat tails.
double belief_crossing(const BeliefField& field, int h, double base_index_h, double alpha);

/// P(take-up) for household h: the take-up indicator integrated against the
/// marginal standard-normal error law, i.e. 1 - Phi(e*).
double sd_choice_probability(const BeliefField& field, int h, double base_index_h,
                             double alpha);

/// The experiment's randomized price list: 22 evenly spaced prices over
/// 0..300 KSh. Simulators draw each household's price uniformly from it.
std::vector<double> default_price_menu();

/// IID benchmark simulator: n_villages of n_per_village households with
/// independent errors, village take-up beliefs at the solved equilibrium,
/// Bernoulli outcomes. Villages are numbered 1..n_villages; params.intercepts
/// must cover them (a pooled block always does). Bit-identical in seed.
Dataset simulate_game(const IndexParams& params, int n_villages, int n_per_village,
                      std::uint64_t seed, const std::vector<double>& price_menu = {});

/// Spatial simulator: per village, locations from sample_region, one error
/// field from sample_gp, beliefs from solve_conditional_beliefs, take-up by
/// crossing the field draw against e*. config.n_households applies per
/// village and config.seed drives every stream. Requires params.error ==
/// probit. Bit-identical in config.seed.
Dataset simulate_game(const SpatialConfig& config, const IndexParams& params, int n_villages,
                      const std::vector<double>& price_menu = {});

/// Solves one region per (n, seed) pair and tabulates |psi - pi_bar|, mean
/// (weighted by the standard-normal density over the e-grid) and sup, each
/// averaged over `seeds` independent regions. Household prices, wealth and
/// covariates are drawn as in the spatial simulator. n_list must be strictly
/// increasing and seeds >= 10 (the deviation statistics are noisy below
/// that); params.error must be probit.
std::vector<ConvergenceRow> convergence_study(const std::vector<int>& n_list, int seeds,
                                              double phi, const IndexParams& params,
                                              double density_c = 1.0, std::uint64_t seed = 1,
                                              const std::vector<double>& price_menu = {});

/// Spatial-diffusion MLE on located data: the likelihood of each outcome is
/// sd_choice_probability under the belief surface re-solved at every
/// parameter evaluation (one region per village, warm-started between
/// evaluations). Free parameters are c1, c2, every covariate coefficient,
/// alpha and an intercept block that mirrors init.intercepts: a pooled block
/// fits one shared constant (cross-village belief contrasts then identify
/// alpha, as in the fixed-effect homogeneity logic), a per-village block
/// fits one effect per village and leaves alpha to the within-village
/// surface variation, which fades as phi shrinks. Reported in the fit_fpl
/// basis ("price", "wealth", covariates..., "alpha", then "const" or
/// "xi_<id>"...). phi is taken as known. Finite-difference BFGS at desk
/// scale (N up to ~2000); standard errors come from a finite-difference
/// Hessian at the optimum and are NaN when that matrix is not positive
/// definite. Probit only.
FitResult fit_sd(const Dataset& data, const IndexParams& init, double phi,
                 double grad_tol = 1e-4, int e_grid_size = 129);

}  // namespace takeup
