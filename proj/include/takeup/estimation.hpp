#pragma once

#include "takeup/types.hpp"

#include <Eigen/Core>

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace takeup {

enum class Estimator { br, fpl, cre };

enum class FixedEffectScheme {
  none,                 ///< one pooled intercept
  dummies_homogeneity,  ///< village dummies + tied-pair identification of alpha
  correlated_re,        ///< village-mean controls (Chamberlain device)
};

struct FitSpec {
  Estimator estimator = Estimator::br;
  ErrorDist error = ErrorDist::logit;
  FixedEffectScheme fixed_effects = FixedEffectScheme::none;
  /// Village ids assumed to share the same unobserved effect. Required by
  /// dummies_homogeneity; never auto-selected.
  std::pair<int, int> tied_pair{0, 0};
  bool include_belief_regressor = true;
  /// Rescale village take-up averages by participation_scale().
  bool scale_beliefs = true;
  /// FPL only: pin alpha to zero (the belief term drops out identically, so
  /// the argmax coincides with fit_br without the belief regressor).
  bool fix_alpha_zero = false;
};

struct MleOptions {
  double grad_tol = 1e-9;  ///< sup-norm test on the standardized-space score
  int max_iter = 200;
  double separation_threshold = 50.0;  ///< on standardized coefficients
};

struct FitResult {
  IndexParams params;

  /// Reported coefficient basis: names[i] labels coefficients[i],
  /// std_errors[i], and row/column i of covariance.
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd std_errors;
  Eigen::MatrixXd covariance;
  /// Negative Hessian of the log-likelihood in the reported basis; empty when
  /// the reported basis is a transformation of the maximized one.
  Eigen::MatrixXd neg_hessian;

  double loglik = 0.0;
  double gradient_norm = 0.0;  ///< Euclidean norm of the final optimizer score
  bool converged = false;
  bool alpha_at_boundary = false;  ///< FPL only: alpha ended on the box edge

  std::map<int, double> village_intercepts;  ///< gamma_v or xi_bar_v
  std::map<int, double> beliefs;             ///< pi_hat_v used by the fit
};

/// pi_hat_v = [participation scale x] mean outcome over participants, per
/// village. Throws input_error on a village without participants.
std::map<int, double> estimate_village_beliefs(const Dataset& data, bool scale = true);

// ---------------------------------------------------------------------------
// Design matrices and the generic binary-response MLE (exposed so tests can
// check scores and information matrices directly).
// ---------------------------------------------------------------------------

struct Design {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::string> names;
  std::vector<int> village_of_row;
  std::vector<int> village_ids;  ///< order of any dummy columns
  int idx_belief = -1;           ///< column of pi_hat (or -1)
  int idx_intercept = -1;        ///< pooled intercept column (or -1)
  int idx_dummy0 = -1;           ///< first dummy column (or -1)
};

/// Regressor matrix for fit_br / fit_cre. Throws input_error on rank
/// deficiency (naming the dependent columns) and propagates belief errors.
Design build_design(const Dataset& data, const FitSpec& spec,
                    const std::map<int, double>& beliefs);

double binary_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, ErrorDist error,
                     const Eigen::VectorXd& coef);
Eigen::VectorXd binary_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, ErrorDist error,
                             const Eigen::VectorXd& coef);
Eigen::MatrixXd binary_neg_hessian(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   ErrorDist error, const Eigen::VectorXd& coef);

/// Newton ascent on the binary log-likelihood with internal standardization.
/// Throws solver_error on separation or a stalled search.
struct MleFit {
  Eigen::VectorXd coef;
  double loglik = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
};
MleFit maximize_binary_loglik(const Design& design, ErrorDist error, const MleOptions& opts = {});

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

/// Reduced-form MLE with the belief regressor and/or village dummies. With
/// dummies, alpha and the village effects are recovered afterwards through
/// solve_fixed_effects_homogeneity and the reported basis becomes
/// (..., alpha, xi_bar per village) with delta-method standard errors.
FitResult fit_br(const Dataset& data, const FitSpec& spec, const MleOptions& opts = {});

/// alpha = (gamma_a - gamma_b) / (pi_a - pi_b) for the tied pair, then
/// xi_bar_v = gamma_v - alpha * pi_v. Throws input_error when the tied pair's
/// beliefs are closer than 1e-8 (not identified).
std::pair<double, std::map<int, double>> solve_fixed_effects_homogeneity(
    const std::map<int, double>& gammas, const std::map<int, double>& pis,
    std::pair<int, int> tied);

/// Chamberlain-style fit: individual regressors plus village means of
/// (price, wealth, covariates) plus the belief regressor. Village-mean
/// columns with no between-village variation are dropped.
FitResult fit_cre(const Dataset& data, const FitSpec& spec, const MleOptions& opts = {});

/// Nested-fixed-point MLE: beliefs are re-solved per village at every
/// objective evaluation; the score uses implicit differentiation of the inner
/// fixed point. alpha is constrained to [0, contraction_bound - 1e-6].
FitResult fit_fpl(const Dataset& data, const FitSpec& spec, const MleOptions& opts = {});

/// Square roots of the inverse negative-Hessian diagonal. Uses neg_hessian
/// when present (throwing numerical_error with the smallest eigenvalue if it
/// is not positive definite), otherwise the stored covariance diagonal.
Eigen::VectorXd standard_errors(const FitResult& fit);

// ---------------------------------------------------------------------------
// FPL objective, exposed for derivative checks
// ---------------------------------------------------------------------------

/// The nested-fixed-point log-likelihood as a plain function of theta in the
/// basis [c1, c2, c3..., alpha, intercept block]. Evaluations reuse the last
/// village fixed points as warm starts; results are independent of call
/// order because the inner solver always iterates to tolerance.
class FplObjective {
 public:
  FplObjective(const Dataset& data, const FitSpec& spec);

  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }

  double loglik(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd score(const Eigen::VectorXd& theta) const;
  /// Equilibrium beliefs at theta, keyed by village id.
  [[nodiscard]] std::map<int, double> beliefs(const Eigen::VectorXd& theta) const;
  /// Largest inner-solver residual at the last evaluation.
  [[nodiscard]] double last_inner_residual() const { return last_residual_; }

  [[nodiscard]] int alpha_index() const { return idx_alpha_; }
  [[nodiscard]] double alpha_box_max() const { return alpha_max_; }
  /// village id -> intercept-block column of theta (tied villages share one).
  [[nodiscard]] const std::map<int, int>& block_columns() const { return block_col_; }

 private:
  struct VillageBlock {
    int id = 0;
    Eigen::MatrixXd W;       ///< rows: households; cols: price, wealth, covs
    Eigen::VectorXd y;
    std::vector<int> dummy;  ///< intercept-block column per household's village
  };

  void solve_villages(const Eigen::VectorXd& theta) const;

  std::vector<VillageBlock> blocks_;
  std::vector<std::string> names_;
  ErrorDist error_ = ErrorDist::logit;
  int dim_ = 0;
  int n_base_ = 0;      ///< price + wealth + covariates
  int idx_alpha_ = -1;
  int idx_block0_ = -1;  ///< first intercept-block column
  std::map<int, int> block_col_;
  double alpha_max_ = 0.0;
  mutable std::vector<double> pi_star_;     ///< per block, warm-started
  mutable double last_residual_ = 0.0;
};

}  // namespace takeup
