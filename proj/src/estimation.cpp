#include "takeup/estimation.hpp"

#include "takeup/demand.hpp"
#include "takeup/dist.hpp"
#include "takeup/equilibrium.hpp"
#include "takeup/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace takeup {

namespace {

std::vector<int> sorted_village_ids(const Dataset& data) {
  std::vector<int> ids;
  ids.reserve(data.villages.size());
  for (const auto& v : data.villages) ids.push_back(v.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

long long count_participants(const Dataset& data) {
  long long n = 0;
  for (const auto& v : data.villages) n += v.participant_count();
  return n;
}

}  // namespace

std::map<int, double> estimate_village_beliefs(const Dataset& data, bool scale) {
  std::map<int, double> out;
  for (const auto& v : data.villages) {
    double sum = 0.0;
    long long n = 0;
    for (const auto& h : v.households) {
      if (!h.participant) continue;
      sum += h.outcome;
      ++n;
    }
    if (n == 0)
      throw input_error("estimate_village_beliefs: village " + std::to_string(v.id) +
                        " has no participants");
    double pi = sum / static_cast<double>(n);
    if (scale) pi *= participation_scale(v);
    out[v.id] = pi;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Design construction
// ---------------------------------------------------------------------------

Design build_design(const Dataset& data, const FitSpec& spec,
                    const std::map<int, double>& beliefs) {
  if (data.villages.empty()) throw input_error("build_design: empty dataset");
  const int n_cov = static_cast<int>(data.covariate_names.size());
  const long long n_rows = count_participants(data);
  if (n_rows == 0) throw input_error("build_design: no participant households");

  const bool dummies = spec.fixed_effects == FixedEffectScheme::dummies_homogeneity;
  const bool cre = spec.fixed_effects == FixedEffectScheme::correlated_re;
  const bool belief_col = spec.include_belief_regressor && !dummies;

  Design d;
  d.village_ids = sorted_village_ids(data);
  const int n_villages = static_cast<int>(d.village_ids.size());

  d.names = {"price", "wealth"};
  for (const auto& c : data.covariate_names) d.names.push_back(c);

  // Village means over participants, needed only for the CRE block.
  std::map<int, Eigen::VectorXd> vmeans;
  std::vector<std::string> vmean_names;
  std::vector<int> vmean_keep;
  if (cre) {
    for (const auto& v : data.villages) {
      Eigen::VectorXd m = Eigen::VectorXd::Zero(2 + n_cov);
      long long n = 0;
      for (const auto& h : v.households) {
        if (!h.participant) continue;
        if (h.covariates.size() != n_cov)
          throw input_error("build_design: household covariate length mismatch");
        m(0) += h.price;
        m(1) += h.wealth;
        m.tail(n_cov) += h.covariates;
        ++n;
      }
      vmeans[v.id] = m / static_cast<double>(n);
    }
    vmean_names = {"vmean_price", "vmean_wealth"};
    for (const auto& c : data.covariate_names) vmean_names.push_back("vmean_" + c);
    // Drop columns with no between-village variation.
    for (int j = 0; j < 2 + n_cov; ++j) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto& [id, m] : vmeans) {
        lo = std::min(lo, m(j));
        hi = std::max(hi, m(j));
      }
      if (hi - lo > 1e-12) vmean_keep.push_back(j);
    }
    for (int j : vmean_keep) d.names.push_back(vmean_names[static_cast<std::size_t>(j)]);
  }

  if (belief_col) {
    d.idx_belief = static_cast<int>(d.names.size());
    d.names.emplace_back("belief");
  }
  if (dummies) {
    d.idx_dummy0 = static_cast<int>(d.names.size());
    for (int id : d.village_ids) d.names.push_back("village_" + std::to_string(id));
  } else {
    d.idx_intercept = static_cast<int>(d.names.size());
    d.names.emplace_back("const");
  }

  const int k = static_cast<int>(d.names.size());
  d.X.resize(n_rows, k);
  d.y.resize(n_rows);
  d.village_of_row.reserve(static_cast<std::size_t>(n_rows));

  long long r = 0;
  for (const auto& v : data.villages) {
    double pi = 0.0;
    if (belief_col) {
      auto it = beliefs.find(v.id);
      if (it == beliefs.end())
        throw input_error("build_design: no belief supplied for village " + std::to_string(v.id));
      pi = it->second;
    }
    const int dummy_col =
        dummies ? d.idx_dummy0 + static_cast<int>(std::lower_bound(d.village_ids.begin(),
                                                                   d.village_ids.end(), v.id) -
                                                  d.village_ids.begin())
                : -1;
    for (const auto& h : v.households) {
      if (!h.participant) continue;
      if (h.covariates.size() != n_cov)
        throw input_error("build_design: household covariate length mismatch");
      d.X(r, 0) = h.price;
      d.X(r, 1) = h.wealth;
      for (int j = 0; j < n_cov; ++j) d.X(r, 2 + j) = h.covariates(j);
      int col = 2 + n_cov;
      if (cre) {
        const Eigen::VectorXd& m = vmeans[v.id];
        for (int j : vmean_keep) d.X(r, col++) = m(j);
      }
      if (belief_col) d.X(r, col++) = pi;
      if (dummies) {
        d.X.row(r).segment(d.idx_dummy0, n_villages).setZero();
        d.X(r, dummy_col) = 1.0;
      } else {
        d.X(r, d.idx_intercept) = 1.0;
      }
      d.y(r) = h.outcome;
      d.village_of_row.push_back(v.id);
      ++r;
    }
  }

  // Rank check on unit-norm columns; report the dependent ones by name.
  Eigen::MatrixXd Xn = d.X;
  for (int j = 0; j < k; ++j) {
    const double nrm = Xn.col(j).norm();
    if (nrm > 0.0) Xn.col(j) /= nrm;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xn);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    const auto perm = qr.colsPermutation().indices();
    std::ostringstream msg;
    msg << "build_design: rank-deficient design; dependent columns:";
    for (int j = static_cast<int>(qr.rank()); j < k; ++j)
      msg << ' ' << d.names[static_cast<std::size_t>(perm(j))];
    throw input_error(msg.str());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Binary-response likelihood, score, Hessian
// ---------------------------------------------------------------------------

double binary_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, ErrorDist error,
                     const Eigen::VectorXd& coef) {
  const Eigen::VectorXd eta = X * coef;
  const std::size_t n = static_cast<std::size_t>(X.rows());
  Eigen::VectorXd terms(X.rows());
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      terms(r) = y(r) > 0.5 ? log_cdf(error, eta(r)) : log_cdf(error, -eta(r));
    }
  });
  return terms.sum();
}

Eigen::VectorXd binary_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, ErrorDist error,
                             const Eigen::VectorXd& coef) {
  const Eigen::VectorXd eta = X * coef;
  const std::size_t n = static_cast<std::size_t>(X.rows());
  Eigen::VectorXd s(X.rows());
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      s(r) = score_factor(error, y(r) > 0.5 ? 1 : 0, eta(r));
    }
  });
  return X.transpose() * s;
}

Eigen::MatrixXd binary_neg_hessian(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   ErrorDist error, const Eigen::VectorXd& coef) {
  const Eigen::VectorXd eta = X * coef;
  const std::size_t n = static_cast<std::size_t>(X.rows());
  Eigen::VectorXd w(X.rows());
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      w(r) = hessian_weight(error, y(r) > 0.5 ? 1 : 0, eta(r));
    }
  });
  return X.transpose() * w.asDiagonal() * X;
}

// ---------------------------------------------------------------------------
// Newton MLE with internal standardization
// ---------------------------------------------------------------------------

namespace {

struct Standardizer {
  // Affine map between a standardized coefficient vector and the raw one.
  std::vector<bool> scaled;  // per column
  Eigen::VectorXd mu, sd;    // per column (1/0 where unscaled)
  std::vector<int> shift_cols;  // intercept-like columns receiving the mean shift

  Eigen::VectorXd to_raw(const Eigen::VectorXd& b) const {
    Eigen::VectorXd out = b;
    double shift = 0.0;
    for (int j = 0; j < b.size(); ++j) {
      if (!scaled[static_cast<std::size_t>(j)]) continue;
      out(j) = b(j) / sd(j);
      shift += b(j) * mu(j) / sd(j);
    }
    for (int j : shift_cols) out(j) -= shift;
    return out;
  }

  // Linear part of to_raw (the map is linear in b: shift is b-dependent).
  Eigen::MatrixXd jacobian() const {
    const int k = static_cast<int>(mu.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(k, k);
    for (int j = 0; j < k; ++j) {
      if (!scaled[static_cast<std::size_t>(j)]) continue;
      A(j, j) = 1.0 / sd(j);
      for (int c : shift_cols) A(c, j) = -mu(j) / sd(j);
    }
    return A;
  }
};

Standardizer make_standardizer(const Design& design) {
  const int k = static_cast<int>(design.X.cols());
  const auto n = static_cast<double>(design.X.rows());
  Standardizer s;
  s.scaled.assign(static_cast<std::size_t>(k), true);
  s.mu = Eigen::VectorXd::Zero(k);
  s.sd = Eigen::VectorXd::Ones(k);
  if (design.idx_intercept >= 0) {
    s.scaled[static_cast<std::size_t>(design.idx_intercept)] = false;
    s.shift_cols.push_back(design.idx_intercept);
  }
  if (design.idx_dummy0 >= 0) {
    for (std::size_t j = 0; j < design.village_ids.size(); ++j) {
      s.scaled[static_cast<std::size_t>(design.idx_dummy0) + j] = false;
      s.shift_cols.push_back(design.idx_dummy0 + static_cast<int>(j));
    }
  }
  for (int j = 0; j < k; ++j) {
    if (!s.scaled[static_cast<std::size_t>(j)]) continue;
    const double mean = design.X.col(j).sum() / n;
    const double var = (design.X.col(j).array() - mean).square().sum() / n;
    if (var < 1e-24)
      throw input_error("standardization: column " + design.names[static_cast<std::size_t>(j)] +
                        " is constant");
    s.mu(j) = mean;
    s.sd(j) = std::sqrt(var);
  }
  return s;
}

Eigen::MatrixXd standardized_matrix(const Design& design, const Standardizer& s) {
  Eigen::MatrixXd Xs = design.X;
  for (int j = 0; j < Xs.cols(); ++j)
    if (s.scaled[static_cast<std::size_t>(j)]) Xs.col(j) = (Xs.col(j).array() - s.mu(j)) / s.sd(j);
  return Xs;
}

}  // namespace

MleFit maximize_binary_loglik(const Design& design, ErrorDist error, const MleOptions& opts) {
  const Standardizer std_map = make_standardizer(design);
  const Eigen::MatrixXd Xs = standardized_matrix(design, std_map);
  const int k = static_cast<int>(Xs.cols());

  Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
  double ll = binary_loglik(Xs, design.y, error, b);
  double gnorm_inf = std::numeric_limits<double>::infinity();

  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Eigen::VectorXd g = binary_score(Xs, design.y, error, b);
    gnorm_inf = g.lpNorm<Eigen::Infinity>();
    if (gnorm_inf < opts.grad_tol) break;

    const Eigen::MatrixXd negH = binary_neg_hessian(Xs, design.y, error, b);
    Eigen::LLT<Eigen::MatrixXd> llt(negH);
    if (llt.info() != Eigen::Success)
      throw numerical_error("maximize_binary_loglik: negative Hessian is not positive definite");
    const Eigen::VectorXd dir = llt.solve(g);

    double t = 1.0;
    bool accepted = false;
    const double slope = g.dot(dir);
    for (int h = 0; h < 60; ++h) {
      const Eigen::VectorXd cand = b + t * dir;
      const double llc = binary_loglik(Xs, design.y, error, cand);
      if (llc >= ll + 1e-4 * t * slope) {
        b = cand;
        ll = llc;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // No ascent left: accept if we are at the numerical noise floor.
      if (gnorm_inf < 1e-7) break;
      throw solver_error("maximize_binary_loglik: line search stalled; gradient sup-norm " +
                         std::to_string(gnorm_inf));
    }

    for (int j = 0; j < k; ++j) {
      if (std::abs(b(j)) > opts.separation_threshold)
        throw solver_error("maximize_binary_loglik: separation suspected; coefficient on " +
                           design.names[static_cast<std::size_t>(j)] +
                           " diverged past " + std::to_string(opts.separation_threshold) +
                           " on the standardized scale");
    }
  }
  if (gnorm_inf >= 1e-7)
    throw solver_error("maximize_binary_loglik: no convergence after " +
                       std::to_string(opts.max_iter) + " iterations; gradient sup-norm " +
                       std::to_string(gnorm_inf));

  MleFit fit;
  fit.coef = std_map.to_raw(b);
  fit.loglik = ll;
  fit.gradient_norm = binary_score(Xs, design.y, error, b).norm();
  fit.iterations = it;
  return fit;
}

// ---------------------------------------------------------------------------
// fit_br / solve_fixed_effects_homogeneity / fit_cre
// ---------------------------------------------------------------------------

namespace {

IndexParams params_from_flat(const Design& d, const Eigen::VectorXd& coef, ErrorDist error,
                             int n_cov) {
  IndexParams p;
  p.error = error;
  p.c1 = coef(0);
  p.c2 = coef(1);
  p.c3 = coef.segment(2, n_cov);
  p.alpha = d.idx_belief >= 0 ? coef(d.idx_belief) : 0.0;
  if (d.idx_intercept >= 0) p.intercepts = Intercepts::pooled(coef(d.idx_intercept));
  return p;
}

FitResult finish_plain_fit(const Dataset& data, const Design& design, ErrorDist error,
                           const MleFit& mle, const std::map<int, double>& beliefs) {
  FitResult out;
  out.names = design.names;
  out.coefficients = mle.coef;
  out.loglik = mle.loglik;
  out.gradient_norm = mle.gradient_norm;
  out.converged = true;
  out.beliefs = beliefs;
  out.neg_hessian = binary_neg_hessian(design.X, design.y, error, mle.coef);
  out.std_errors = standard_errors(out);  // fills from neg_hessian
  Eigen::LLT<Eigen::MatrixXd> llt(out.neg_hessian);
  out.covariance = llt.solve(Eigen::MatrixXd::Identity(design.X.cols(), design.X.cols()));
  out.params = params_from_flat(design, mle.coef, error,
                                static_cast<int>(data.covariate_names.size()));
  return out;
}

}  // namespace

std::pair<double, std::map<int, double>> solve_fixed_effects_homogeneity(
    const std::map<int, double>& gammas, const std::map<int, double>& pis,
    std::pair<int, int> tied) {
  auto need = [](const std::map<int, double>& m, int id, const char* what) {
    auto it = m.find(id);
    if (it == m.end())
      throw input_error(std::string("solve_fixed_effects_homogeneity: no ") + what +
                        " for village " + std::to_string(id));
    return it->second;
  };
  const double ga = need(gammas, tied.first, "intercept");
  const double gb = need(gammas, tied.second, "intercept");
  const double pa = need(pis, tied.first, "belief");
  const double pb = need(pis, tied.second, "belief");
  if (std::abs(pa - pb) < 1e-8)
    throw input_error(
        "solve_fixed_effects_homogeneity: tied villages have indistinguishable take-up "
        "rates (|difference| < 1e-8); alpha is not identified from this pair");
  const double alpha = (ga - gb) / (pa - pb);
  std::map<int, double> xi;
  for (const auto& [id, g] : gammas) xi[id] = g - alpha * need(pis, id, "belief");
  return {alpha, xi};
}

FitResult fit_br(const Dataset& data, const FitSpec& spec, const MleOptions& opts) {
  if (spec.estimator != Estimator::br) throw input_error("fit_br: spec.estimator must be BR");
  if (spec.fixed_effects == FixedEffectScheme::correlated_re)
    throw input_error("fit_br: use fit_cre for the correlated-random-effects scheme");

  const std::map<int, double> beliefs = estimate_village_beliefs(data, spec.scale_beliefs);
  const Design design = build_design(data, spec, beliefs);
  const MleFit mle = maximize_binary_loglik(design, spec.error, opts);

  if (spec.fixed_effects == FixedEffectScheme::none) {
    FitResult out = finish_plain_fit(data, design, spec.error, mle, beliefs);
    for (const auto& v : data.villages)
      out.village_intercepts[v.id] = out.params.intercepts.value_for(v.id);
    return out;
  }

  // Dummies + homogeneity: recover alpha and the village effects, then report
  // in the (slopes, alpha, xi_bar...) basis with delta-method errors.
  if (spec.tied_pair.first == spec.tied_pair.second)
    throw input_error("fit_br: dummies_homogeneity requires a tied pair of distinct villages");

  const int n_cov = static_cast<int>(data.covariate_names.size());
  const int n_base = 2 + n_cov;
  const int n_villages = static_cast<int>(design.village_ids.size());

  std::map<int, double> gammas;
  for (int j = 0; j < n_villages; ++j)
    gammas[design.village_ids[static_cast<std::size_t>(j)]] = mle.coef(design.idx_dummy0 + j);

  const auto [alpha, xi] = solve_fixed_effects_homogeneity(gammas, beliefs, spec.tied_pair);

  const int k_old = static_cast<int>(design.X.cols());
  const int k_new = n_base + 1 + n_villages;
  const auto col_of = [&](int id) {
    return design.idx_dummy0 +
           static_cast<int>(std::lower_bound(design.village_ids.begin(), design.village_ids.end(),
                                             id) -
                            design.village_ids.begin());
  };
  const double dpi = beliefs.at(spec.tied_pair.first) - beliefs.at(spec.tied_pair.second);

  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k_new, k_old);
  for (int j = 0; j < n_base; ++j) T(j, j) = 1.0;
  T(n_base, col_of(spec.tied_pair.first)) = 1.0 / dpi;
  T(n_base, col_of(spec.tied_pair.second)) = -1.0 / dpi;
  for (int j = 0; j < n_villages; ++j) {
    const int id = design.village_ids[static_cast<std::size_t>(j)];
    T.row(n_base + 1 + j) = -beliefs.at(id) * T.row(n_base);
    T(n_base + 1 + j, design.idx_dummy0 + j) += 1.0;
  }

  const Eigen::MatrixXd negH = binary_neg_hessian(design.X, design.y, spec.error, mle.coef);
  const Eigen::MatrixXd cov_old =
      Eigen::LLT<Eigen::MatrixXd>(negH).solve(Eigen::MatrixXd::Identity(k_old, k_old));

  FitResult out;
  out.names.assign(design.names.begin(), design.names.begin() + n_base);
  out.names.emplace_back("alpha");
  for (int id : design.village_ids) out.names.push_back("xi_" + std::to_string(id));
  out.coefficients = T * mle.coef;
  out.coefficients(n_base) = alpha;  // identical by construction; keep exact
  for (int j = 0; j < n_villages; ++j)
    out.coefficients(n_base + 1 + j) = xi.at(design.village_ids[static_cast<std::size_t>(j)]);
  out.covariance = T * cov_old * T.transpose();
  out.std_errors = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.loglik = mle.loglik;
  out.gradient_norm = mle.gradient_norm;
  out.converged = true;
  out.beliefs = beliefs;
  out.village_intercepts = xi;

  out.params.error = spec.error;
  out.params.c1 = mle.coef(0);
  out.params.c2 = mle.coef(1);
  out.params.c3 = mle.coef.segment(2, n_cov);
  out.params.alpha = alpha;
  out.params.intercepts = Intercepts::per_village(xi);
  return out;
}

FitResult fit_cre(const Dataset& data, const FitSpec& spec, const MleOptions& opts) {
  if (spec.estimator != Estimator::cre) throw input_error("fit_cre: spec.estimator must be CRE");
  FitSpec local = spec;
  local.fixed_effects = FixedEffectScheme::correlated_re;

  const std::map<int, double> beliefs = estimate_village_beliefs(data, spec.scale_beliefs);
  const Design design = build_design(data, local, beliefs);
  const MleFit mle = maximize_binary_loglik(design, spec.error, opts);

  FitResult out = finish_plain_fit(data, design, spec.error, mle, beliefs);

  // Composite per-village intercept: const + delta' vmeans, the fitted stand-in
  // for the unobserved village effect.
  const int n_cov = static_cast<int>(data.covariate_names.size());
  const int first_vmean = 2 + n_cov;
  const int n_vmean = design.idx_belief >= 0
                          ? design.idx_belief - first_vmean
                          : design.idx_intercept - first_vmean;
  std::map<int, double> composite;
  for (const auto& v : data.villages) {
    // Recover this village's vmean regressor values from any of its rows.
    long long row = -1;
    for (std::size_t r = 0; r < design.village_of_row.size(); ++r)
      if (design.village_of_row[r] == v.id) {
        row = static_cast<long long>(r);
        break;
      }
    double c = mle.coef(design.idx_intercept);
    for (int j = 0; j < n_vmean; ++j)
      c += mle.coef(first_vmean + j) * design.X(row, first_vmean + j);
    composite[v.id] = c;
  }
  out.village_intercepts = composite;
  out.params.intercepts = Intercepts::per_village(composite);
  return out;
}

// ---------------------------------------------------------------------------
// FPL: nested-fixed-point likelihood
// ---------------------------------------------------------------------------

FplObjective::FplObjective(const Dataset& data, const FitSpec& spec) {
  if (spec.fixed_effects == FixedEffectScheme::correlated_re)
    throw input_error("FplObjective: correlated_re is not a nested-fixed-point scheme");
  error_ = spec.error;
  const int n_cov = static_cast<int>(data.covariate_names.size());
  n_base_ = 2 + n_cov;
  alpha_max_ = contraction_bound(error_) - 1e-6;

  const bool dummies = spec.fixed_effects == FixedEffectScheme::dummies_homogeneity;
  std::vector<int> ids = sorted_village_ids(data);
  if (dummies) {
    if (spec.tied_pair.first == spec.tied_pair.second)
      throw input_error("FplObjective: dummies_homogeneity requires a tied pair");
    for (int side : {spec.tied_pair.first, spec.tied_pair.second})
      if (std::find(ids.begin(), ids.end(), side) == ids.end())
        throw input_error("FplObjective: tied village " + std::to_string(side) +
                          " is not in the dataset");
  }

  names_ = {"price", "wealth"};
  for (const auto& c : data.covariate_names) names_.push_back(c);
  idx_alpha_ = static_cast<int>(names_.size());
  names_.emplace_back("alpha");
  idx_block0_ = static_cast<int>(names_.size());

  // Map village id -> intercept-block column.
  if (!dummies) {
    names_.emplace_back("const");
    for (int id : ids) block_col_[id] = idx_block0_;
  } else {
    const int a = std::min(spec.tied_pair.first, spec.tied_pair.second);
    const int b = std::max(spec.tied_pair.first, spec.tied_pair.second);
    for (int id : ids) {
      if (id == b) continue;  // shares a's column
      names_.push_back(id == a ? "xi_" + std::to_string(a) + "_" + std::to_string(b)
                               : "xi_" + std::to_string(id));
      block_col_[id] = static_cast<int>(names_.size()) - 1;
    }
    block_col_[b] = block_col_[a];
  }
  dim_ = static_cast<int>(names_.size());

  for (const auto& v : data.villages) {
    VillageBlock blk;
    blk.id = v.id;
    const long long n = v.participant_count();
    if (n == 0)
      throw input_error("FplObjective: village " + std::to_string(v.id) + " has no participants");
    blk.W.resize(n, n_base_);
    blk.y.resize(n);
    blk.dummy.assign(static_cast<std::size_t>(n), block_col_.at(v.id));
    long long r = 0;
    for (const auto& h : v.households) {
      if (!h.participant) continue;
      if (h.covariates.size() != n_cov)
        throw input_error("FplObjective: household covariate length mismatch");
      blk.W(r, 0) = h.price;
      blk.W(r, 1) = h.wealth;
      for (int j = 0; j < n_cov; ++j) blk.W(r, 2 + j) = h.covariates(j);
      blk.y(r) = h.outcome;
      ++r;
    }
    blocks_.push_back(std::move(blk));
  }
  pi_star_.assign(blocks_.size(), 0.5);
}

void FplObjective::solve_villages(const Eigen::VectorXd& theta) const {
  if (theta.size() != dim_) throw input_error("FplObjective: theta dimension mismatch");
  const double alpha = theta(idx_alpha_);
  last_residual_ = 0.0;
  FixedPointOptions opts;
  opts.tol = 1e-13;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const VillageBlock& blk = blocks_[b];
    const Eigen::VectorXd base =
        blk.W * theta.head(n_base_) +
        Eigen::VectorXd::Constant(blk.W.rows(), theta(blk.dummy.front()));
    const double inv_n = 1.0 / static_cast<double>(blk.W.rows());
    auto rhs = [&](double pi) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < base.size(); ++i) s += cdf(error_, base(i) + alpha * pi);
      return s * inv_n;
    };
    const FixedPointResult r = fixed_point_iterate(rhs, pi_star_[b], opts);
    pi_star_[b] = r.value;
    last_residual_ = std::max(last_residual_, std::abs(r.residual));
  }
}

double FplObjective::loglik(const Eigen::VectorXd& theta) const {
  solve_villages(theta);
  const double alpha = theta(idx_alpha_);
  double ll = 0.0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const VillageBlock& blk = blocks_[b];
    const Eigen::VectorXd eta =
        blk.W * theta.head(n_base_) +
        Eigen::VectorXd::Constant(blk.W.rows(), theta(blk.dummy.front()) + alpha * pi_star_[b]);
    for (Eigen::Index i = 0; i < eta.size(); ++i)
      ll += blk.y(i) > 0.5 ? log_cdf(error_, eta(i)) : log_cdf(error_, -eta(i));
  }
  return ll;
}

Eigen::VectorXd FplObjective::score(const Eigen::VectorXd& theta) const {
  solve_villages(theta);
  const double alpha = theta(idx_alpha_);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const VillageBlock& blk = blocks_[b];
    const double pi = pi_star_[b];
    const int dcol = blk.dummy.front();
    const auto n = static_cast<double>(blk.W.rows());
    const Eigen::VectorXd eta =
        blk.W * theta.head(n_base_) +
        Eigen::VectorXd::Constant(blk.W.rows(), theta(dcol) + alpha * pi);

    Eigen::VectorXd s(eta.size()), f(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      s(i) = score_factor(error_, blk.y(i) > 0.5 ? 1 : 0, eta(i));
      f(i) = pdf(error_, eta(i));
    }

    // dpi*/dtheta by implicit differentiation of pi = RHS(pi; theta)
    const double fbar = f.sum() / n;
    const double denom = 1.0 - alpha * fbar;
    Eigen::VectorXd dpi = Eigen::VectorXd::Zero(dim_);
    dpi.head(n_base_) = (blk.W.transpose() * f) / n;
    dpi(idx_alpha_) = pi * fbar;
    dpi(dcol) += fbar;
    dpi /= denom;

    const double s_sum = s.sum();
    g.head(n_base_) += blk.W.transpose() * s;
    g(idx_alpha_) += pi * s_sum;
    g(dcol) += s_sum;
    g += (alpha * s_sum) * dpi;
  }
  return g;
}

std::map<int, double> FplObjective::beliefs(const Eigen::VectorXd& theta) const {
  solve_villages(theta);
  std::map<int, double> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) out[blocks_[b].id] = pi_star_[b];
  return out;
}

namespace {

// Standardized copy of the dataset (price, wealth, covariates centered and
// scaled over participants) plus the affine coefficient map back to raw.
struct StandardizedData {
  Dataset data;
  Eigen::VectorXd mu, sd;  // length 2 + n_cov
};

StandardizedData standardize_dataset(const Dataset& data) {
  const int n_cov = static_cast<int>(data.covariate_names.size());
  const int m = 2 + n_cov;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(m), sumsq = Eigen::VectorXd::Zero(m);
  long long n = 0;
  for (const auto& v : data.villages)
    for (const auto& h : v.households) {
      if (!h.participant) continue;
      Eigen::VectorXd x(m);
      x(0) = h.price;
      x(1) = h.wealth;
      x.tail(n_cov) = h.covariates;
      sum += x;
      sumsq += x.cwiseProduct(x);
      ++n;
    }
  StandardizedData out;
  out.mu = sum / static_cast<double>(n);
  out.sd = (sumsq / static_cast<double>(n) - out.mu.cwiseProduct(out.mu))
               .cwiseMax(0.0)
               .cwiseSqrt();
  for (int j = 0; j < m; ++j)
    if (out.sd(j) < 1e-12)
      throw input_error("fit_fpl: regressor column " + std::to_string(j) + " is constant");
  out.data = data;
  for (auto& v : out.data.villages)
    for (auto& h : v.households) {
      h.price = (h.price - out.mu(0)) / out.sd(0);
      h.wealth = (h.wealth - out.mu(1)) / out.sd(1);
      for (int j = 0; j < n_cov; ++j)
        h.covariates(j) = (h.covariates(j) - out.mu(2 + j)) / out.sd(2 + j);
    }
  return out;
}

}  // namespace

FitResult fit_fpl(const Dataset& data, const FitSpec& spec, const MleOptions& opts) {
  if (spec.estimator != Estimator::fpl) throw input_error("fit_fpl: spec.estimator must be FPL");

  const StandardizedData sd = standardize_dataset(data);
  const FplObjective obj(sd.data, spec);
  const int k = obj.dim();
  const int ia = obj.alpha_index();
  const double a_max = spec.fix_alpha_zero ? 0.0 : obj.alpha_box_max();

  auto clamp_alpha = [&](Eigen::VectorXd th) {
    th(ia) = std::clamp(th(ia), 0.0, a_max);
    return th;
  };

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(k);
  theta(ia) = std::min(1.0, 0.5 * std::max(a_max, 1e-12));
  theta = clamp_alpha(theta);

  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(k, k);  // inverse-Hessian approx
  double ll = obj.loglik(theta);
  Eigen::VectorXd g = obj.score(theta);

  const double gtol = opts.grad_tol;
  const int max_iter = std::max(500, opts.max_iter);
  bool converged = false;
  auto masked_inf_norm = [&](const Eigen::VectorXd& grad, const Eigen::VectorXd& th) {
    double m = 0.0;
    for (int j = 0; j < k; ++j) {
      if (j == ia) {
        if (th(ia) <= 0.0 && grad(ia) < 0.0) continue;       // pinned at the lower edge
        if (th(ia) >= a_max && grad(ia) > 0.0) continue;     // pinned at the upper edge
      }
      m = std::max(m, std::abs(grad(j)));
    }
    return m;
  };

  int it = 0;
  bool b_is_identity = true;
  for (; it < max_iter; ++it) {
    const double m_now = masked_inf_norm(g, theta);
    if (m_now < gtol) {
      converged = true;
      break;
    }
    if (m_now < 1e-4) break;  // close enough for the Newton polish to take over
    Eigen::VectorXd dir = B * g;  // ascent direction
    if (dir.dot(g) <= 0.0) {
      B = Eigen::MatrixXd::Identity(k, k);
      b_is_identity = true;
      dir = g;
    }
    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd theta_new;
    double ll_new = 0.0;
    for (int h = 0; h < 60; ++h) {
      theta_new = clamp_alpha(theta + t * dir);
      ll_new = obj.loglik(theta_new);
      const double rise = g.dot(theta_new - theta);
      if (ll_new >= ll + 1e-4 * rise && (theta_new - theta).norm() > 0.0) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!b_is_identity) {  // curvature model went bad: retry as gradient ascent
        B = Eigen::MatrixXd::Identity(k, k);
        b_is_identity = true;
        continue;
      }
      break;  // at the line-search noise floor: hand over to the Newton polish
    }
    const Eigen::VectorXd gn = obj.score(theta_new);
    const Eigen::VectorXd step = theta_new - theta;
    const Eigen::VectorXd y = g - gn;  // curvature pair for -loglik
    if (step.dot(y) > 1e-12 * step.norm() * y.norm()) {
      const double rho = 1.0 / step.dot(y);
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
      B = (I - rho * step * y.transpose()) * B * (I - rho * y * step.transpose()) +
          rho * step * step.transpose();
      b_is_identity = false;
    }
    theta = theta_new;
    ll = ll_new;
    g = gn;
  }

  // Newton polish on the free coordinates with curvature from central
  // differences of the analytic score. The line search above stalls once
  // log-likelihood improvements drop below double rounding, but the score is
  // computed directly and stays accurate, so a few Newton steps reach a much
  // tighter stationary point.
  const double fd_step = 1e-5;
  auto free_coords = [&](const Eigen::VectorXd& grad, const Eigen::VectorXd& th) {
    std::vector<int> free;
    for (int j = 0; j < k; ++j) {
      if (j == ia) {
        if (a_max <= 0.0) continue;  // degenerate box: alpha held at zero
        if (th(ia) <= 0.0 && grad(ia) < 0.0) continue;
        if (th(ia) >= a_max && grad(ia) > 0.0) continue;
      }
      free.push_back(j);
    }
    return free;
  };
  for (int polish = 0; polish < 20 && masked_inf_norm(g, theta) >= gtol; ++polish) {
    const std::vector<int> free = free_coords(g, theta);
    if (free.empty()) break;
    const int kf = static_cast<int>(free.size());
    Eigen::MatrixXd neg_hess(kf, kf);
    Eigen::VectorXd g_free(kf);
    for (int c = 0; c < kf; ++c) {
      Eigen::VectorXd hi = theta, lo = theta;
      hi(free[static_cast<std::size_t>(c)]) += fd_step;
      lo(free[static_cast<std::size_t>(c)]) -= fd_step;
      const Eigen::VectorXd col = (obj.score(lo) - obj.score(hi)) / (2.0 * fd_step);
      for (int r = 0; r < kf; ++r) neg_hess(r, c) = col(free[static_cast<std::size_t>(r)]);
      g_free(c) = g(free[static_cast<std::size_t>(c)]);
    }
    neg_hess = (0.5 * (neg_hess + neg_hess.transpose())).eval();
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_hess);
    if (ldlt.info() != Eigen::Success) break;
    Eigen::VectorXd delta = ldlt.solve(g_free);
    if (!delta.allFinite() || delta.dot(g_free) <= 0.0) break;
    const double m0 = masked_inf_norm(g, theta);
    bool improved = false;
    for (int h = 0; h < 8; ++h) {
      Eigen::VectorXd cand = theta;
      for (int r = 0; r < kf; ++r) cand(free[static_cast<std::size_t>(r)]) += delta(r);
      cand = clamp_alpha(cand);
      const Eigen::VectorXd g_cand = obj.score(cand);
      if (masked_inf_norm(g_cand, cand) < m0) {
        theta = cand;
        g = g_cand;
        improved = true;
        break;
      }
      delta *= 0.5;
    }
    if (!improved) break;
  }
  converged = masked_inf_norm(g, theta) < 1e-6;
  ll = obj.loglik(theta);
  if (!converged)
    throw solver_error("fit_fpl: no convergence after " + std::to_string(it) +
                       " iterations; masked gradient sup-norm " +
                       std::to_string(masked_inf_norm(g, theta)));

  // Map standardized-space theta back to the raw scale.
  const int n_cov = static_cast<int>(data.covariate_names.size());
  const int n_base = 2 + n_cov;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(k, k);
  for (int j = 0; j < n_base; ++j) {
    A(j, j) = 1.0 / sd.sd(j);
    for (int c = obj.alpha_index() + 1; c < k; ++c) A(c, j) = -sd.mu(j) / sd.sd(j);
  }
  const Eigen::VectorXd theta_raw = A * theta;

  // Curvature by central finite differences of the analytic score in the
  // standardized space, then transformed.
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(k, k);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd hi = theta, lo = theta;
    hi(j) += fd_step;
    lo(j) -= fd_step;
    H.col(j) = (obj.score(hi) - obj.score(lo)) / (2.0 * fd_step);
  }
  H = 0.5 * (H + H.transpose());
  const Eigen::MatrixXd negH = -H;
  const Eigen::MatrixXd cov_std =
      Eigen::FullPivLU<Eigen::MatrixXd>(negH).solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd cov_raw = A * cov_std * A.transpose();

  FitResult out;
  out.names = obj.names();
  out.coefficients = theta_raw;
  out.covariance = cov_raw;
  out.std_errors = cov_raw.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.loglik = ll;
  Eigen::VectorXd g_report = g;
  if (a_max <= 0.0 || (theta(ia) <= 0.0 && g(ia) < 0.0) ||
      (theta(ia) >= a_max && g(ia) > 0.0))
    g_report(ia) = 0.0;  // pinned coordinate is not part of the stationarity test
  out.gradient_norm = g_report.norm();
  out.beliefs = obj.beliefs(theta);  // re-solves at theta-hat (scale-invariant)
  out.converged = converged && obj.last_inner_residual() < 1e-12;
  out.alpha_at_boundary =
      !spec.fix_alpha_zero && (theta(ia) < 1e-9 || theta(ia) > a_max - 1e-9);

  out.params.error = spec.error;
  out.params.c1 = theta_raw(0);
  out.params.c2 = theta_raw(1);
  out.params.c3 = theta_raw.segment(2, n_cov);
  out.params.alpha = theta_raw(ia);
  std::map<int, double> intercepts;
  for (const auto& [id, col] : obj.block_columns()) intercepts[id] = theta_raw(col);
  out.village_intercepts = intercepts;
  if (spec.fixed_effects == FixedEffectScheme::none)
    out.params.intercepts = Intercepts::pooled(theta_raw(ia + 1));
  else
    out.params.intercepts = Intercepts::per_village(intercepts);
  return out;
}

Eigen::VectorXd standard_errors(const FitResult& fit) {
  if (fit.neg_hessian.size() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.neg_hessian);
    if (es.info() != Eigen::Success)
      throw numerical_error("standard_errors: eigendecomposition failed");
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig <= 0.0)
      throw numerical_error("standard_errors: negative Hessian is not positive definite; "
                            "smallest eigenvalue " +
                            std::to_string(min_eig));
    const Eigen::MatrixXd cov = es.eigenvectors() *
                                es.eigenvalues().cwiseInverse().asDiagonal() *
                                es.eigenvectors().transpose();
    return cov.diagonal().cwiseSqrt();
  }
  if (fit.covariance.size() > 0) {
    if (fit.covariance.diagonal().minCoeff() < -1e-12)
      throw numerical_error("standard_errors: covariance has a negative diagonal entry");
    return fit.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  }
  throw input_error("standard_errors: fit carries no curvature information");
}

}  // namespace takeup
