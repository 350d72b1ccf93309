#include "takeup/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "takeup/demand.hpp"
#include "takeup/equilibrium.hpp"
#include "takeup/welfare.hpp"

namespace takeup {
namespace {

using ordered_json = nlohmann::ordered_json;

// Rethrow with the pipeline stage prepended, preserving the error category
// (and so the process exit code).
template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  const auto tag = [name](const std::exception& e) {
    return std::string("[") + name + "] " + e.what();
  };
  try {
    return f();
  } catch (const input_error& e) {
    throw input_error(tag(e));
  } catch (const numerical_error& e) {
    throw numerical_error(tag(e));
  } catch (const solver_error& e) {
    throw solver_error(tag(e));
  }
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// All JSON numbers pass through the same 12-significant-digit policy as the
// CSVs; non-finite values become null.
ordered_json json_num(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::strtod(format_number(v).c_str(), nullptr);
}

const char* workflow_name(Workflow w) {
  switch (w) {
    case Workflow::simulate: return "simulate";
    case Workflow::estimate: return "estimate";
    case Workflow::policy: return "policy";
    case Workflow::convergence: return "convergence";
  }
  return "?";
}

const char* error_name(ErrorDist e) { return e == ErrorDist::logit ? "logit" : "probit"; }

const char* regime_name(CvRegime r) {
  switch (r) {
    case CvRegime::pi_up: return "pi_up";
    case CvRegime::pi_down_branch_a: return "pi_down_a";
    case CvRegime::pi_down_branch_b: return "pi_down_b";
  }
  return "?";
}

std::string estimator_name(const RunConfig& config) {
  if (config.use_sd) return "sd";
  switch (config.fit_spec.estimator) {
    case Estimator::br: return "br";
    case Estimator::cre: return "cre";
    case Estimator::fpl: return "fpl";
  }
  return "?";
}

FitResult run_fit(const Dataset& data, const RunConfig& config) {
  if (config.use_sd) {
    IndexParams init;
    if (config.params_given) {
      init = config.params;
    } else {
      // Warm-start the conditional-beliefs fit from the limit-model MLE.
      FitSpec warm = config.fit_spec;
      warm.estimator = Estimator::fpl;
      warm.error = ErrorDist::probit;
      init = fit_fpl(data, warm).params;
    }
    init.error = ErrorDist::probit;
    return fit_sd(data, init, config.spatial->phi);
  }
  switch (config.fit_spec.estimator) {
    case Estimator::br: return fit_br(data, config.fit_spec);
    case Estimator::cre: return fit_cre(data, config.fit_spec);
    case Estimator::fpl: return fit_fpl(data, config.fit_spec);
  }
  throw input_error("run_fit: unknown estimator");
}

// The model an analyst who ignores interactions would use: supplied
// coefficients with alpha zeroed, or a pooled belief-free refit.
IndexParams blind_params(const Dataset& data, const RunConfig& config) {
  if (config.params_given) {
    IndexParams p = config.params;
    p.alpha = 0.0;
    return p;
  }
  FitSpec s = config.fit_spec;
  s.fixed_effects = FixedEffectScheme::none;
  s.include_belief_regressor = false;
  s.fix_alpha_zero = true;
  if (config.use_sd) {
    s.estimator = Estimator::br;
    s.error = ErrorDist::probit;
  }
  switch (s.estimator) {
    case Estimator::br: return fit_br(data, s).params;
    case Estimator::cre: return fit_cre(data, s).params;
    case Estimator::fpl: return fit_fpl(data, s).params;
  }
  throw input_error("blind_params: unknown estimator");
}

ordered_json params_block(const IndexParams& p) {
  ordered_json j;
  j["c1"] = json_num(p.c1);
  j["c2"] = json_num(p.c2);
  j["c3"] = ordered_json::array();
  for (Eigen::Index k = 0; k < p.c3.size(); ++k) j["c3"].push_back(json_num(p.c3(k)));
  j["alpha"] = json_num(p.alpha);
  j["error"] = error_name(p.error);
  if (p.intercepts.is_pooled()) {
    j["intercepts"] = ordered_json{{"pooled", json_num(p.intercepts.c0())}};
  } else {
    ordered_json xi;
    for (const auto& [id, v] : p.intercepts.per_village_values())
      xi[std::to_string(id)] = json_num(v);
    j["intercepts"] = ordered_json{{"per_village", xi}};
  }
  return j;
}

std::string render_params_json(const RunConfig& config, const FitResult* fit,
                               const IndexParams& params) {
  ordered_json j;
  j["estimator"] = fit ? estimator_name(config) : "given";
  j["error"] = error_name(params.error);
  if (fit) {
    j["converged"] = fit->converged;
    j["alpha_at_boundary"] = fit->alpha_at_boundary;
    j["loglik"] = json_num(fit->loglik);
    j["gradient_norm"] = json_num(fit->gradient_norm);
    j["coefficients"] = ordered_json::array();
    for (std::size_t i = 0; i < fit->names.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      ordered_json row;
      row["name"] = fit->names[i];
      row["value"] = json_num(fit->coefficients(k));
      row["std_error"] = fit->std_errors.size() > k ? json_num(fit->std_errors(k)) : nullptr;
      j["coefficients"].push_back(row);
    }
    ordered_json beliefs;
    for (const auto& [id, pi] : fit->beliefs) beliefs[std::to_string(id)] = json_num(pi);
    j["beliefs"] = beliefs;
  }
  j["params"] = params_block(params);
  return j.dump(2) + "\n";
}

// Per-village equilibria for both the baseline and the policy price systems,
// with the root inventory from the uniqueness scan.
struct VillageEquilibria {
  int village_id = 0;
  FixedPointResult pre, post;
  std::vector<double> roots_pre, roots_post;
};

std::vector<VillageEquilibria> solve_equilibria(const Dataset& data, const IndexParams& params,
                                                const PolicyScenario& scenario) {
  std::vector<VillageEquilibria> out;
  out.reserve(data.villages.size());
  for (const auto& v : data.villages) {
    VillageEquilibria e;
    e.village_id = v.id;
    e.pre = solve_pi_baseline(v, params, scenario.p0);
    e.post = solve_pi_policy(v, params, scenario);
    e.roots_pre = uniqueness_scan(v, params, scenario.p0).roots;
    e.roots_post = uniqueness_scan(v, params, scenario).roots;
    out.push_back(std::move(e));
  }
  return out;
}

int nearest_root(const std::vector<double>& roots, double value) {
  if (roots.empty()) return -1;
  int best = 0;
  for (int i = 1; i < static_cast<int>(roots.size()); ++i)
    if (std::abs(roots[static_cast<std::size_t>(i)] - value) <
        std::abs(roots[static_cast<std::size_t>(best)] - value))
      best = i;
  return best;
}

std::string render_equilibrium_csv(const std::vector<VillageEquilibria>& spill,
                                   const std::vector<VillageEquilibria>& blind) {
  std::ostringstream out;
  out << "model,village_id,pi0,residual0,pi1,residual1,n_roots0,roots0,n_roots1,roots1\n";
  const auto rows = [&out](const char* model, const std::vector<VillageEquilibria>& es) {
    for (const auto& e : es) {
      const auto joined = [](const std::vector<double>& rs) {
        std::string s;
        for (std::size_t i = 0; i < rs.size(); ++i) s += (i ? ";" : "") + format_number(rs[i]);
        return s;
      };
      out << model << ',' << e.village_id << ',' << format_number(e.pre.value) << ','
          << format_number(e.pre.residual) << ',' << format_number(e.post.value) << ','
          << format_number(e.post.residual) << ',' << e.roots_pre.size() << ','
          << joined(e.roots_pre) << ',' << e.roots_post.size() << ',' << joined(e.roots_post)
          << '\n';
    }
  };
  rows("spillover", spill);
  rows("none", blind);
  return out.str();
}

// One welfare row: participant-group mean CV at the two ends of the
// unidentified-split interval, for a specific (pi0, pi1) pair.
struct WelfareRow {
  std::string model;
  int village_id = 0;
  long long n_eligible = 0, n_ineligible = 0;
  double pi0 = 0.0, pi1 = 0.0;
  int root0_index = -1, root1_index = -1;
  bool primary = true;
  double eligible_cv_low = 0.0, eligible_cv_high = 0.0;
  double ineligible_cv_low = 0.0, ineligible_cv_high = 0.0;
};

WelfareRow village_welfare_row(const Village& v, const IndexParams& params,
                               const PolicyScenario& scenario, double pi0, double pi1) {
  const SpilloverSplit at_alpha{params.alpha, 0.0};
  const SpilloverSplit at_zero{0.0, -params.alpha};
  const double intercept = params.intercepts.value_for(v.id);
  WelfareRow row;
  row.village_id = v.id;
  row.pi0 = pi0;
  row.pi1 = pi1;
  double el = 0.0, eh = 0.0, il = 0.0, ih = 0.0;
  for (const auto& h : v.households) {
    if (!h.participant) continue;
    if (scenario.eligible(h.wealth)) {
      el += mean_cv_eligible(params, at_alpha, h.wealth, h.covariates, scenario, pi0, pi1,
                             intercept);
      eh += mean_cv_eligible(params, at_zero, h.wealth, h.covariates, scenario, pi0, pi1,
                             intercept);
      ++row.n_eligible;
    } else {
      il += mean_cv_ineligible(params, at_alpha, h.wealth, h.covariates, scenario, pi0, pi1,
                               intercept);
      ih += mean_cv_ineligible(params, at_zero, h.wealth, h.covariates, scenario, pi0, pi1,
                               intercept);
      ++row.n_ineligible;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row.eligible_cv_low = row.n_eligible ? el / static_cast<double>(row.n_eligible) : nan;
  row.eligible_cv_high = row.n_eligible ? eh / static_cast<double>(row.n_eligible) : nan;
  row.ineligible_cv_low = row.n_ineligible ? il / static_cast<double>(row.n_ineligible) : nan;
  row.ineligible_cv_high = row.n_ineligible ? ih / static_cast<double>(row.n_ineligible) : nan;
  return row;
}

// Primary rows come from the aggregated report (so the CSV reproduces the
// bundled net values exactly); non-primary root pairs get their own rows.
std::vector<WelfareRow> welfare_rows(const Dataset& data, const IndexParams& params,
                                     const PolicyScenario& scenario, const PolicyReport& report,
                                     const std::vector<VillageEquilibria>& eq,
                                     const std::string& model) {
  std::vector<WelfareRow> rows;
  for (std::size_t i = 0; i < eq.size(); ++i) {
    const auto& e = eq[i];
    const auto& r = report.villages[i];
    const Village& v = data.villages[i];

    WelfareRow primary;
    primary.model = model;
    primary.village_id = e.village_id;
    for (const auto& h : v.households) {
      if (!h.participant) continue;
      scenario.eligible(h.wealth) ? ++primary.n_eligible : ++primary.n_ineligible;
    }
    primary.pi0 = r.pi0;
    primary.pi1 = r.pi1;
    primary.root0_index = nearest_root(e.roots_pre, e.pre.value);
    primary.root1_index = nearest_root(e.roots_post, e.post.value);
    primary.primary = true;
    primary.eligible_cv_low = r.eligible_cv_low;
    primary.eligible_cv_high = r.eligible_cv_high;
    primary.ineligible_cv_low = r.ineligible_cv_low;
    primary.ineligible_cv_high = r.ineligible_cv_high;
    rows.push_back(primary);

    // Welfare at every other combination of baseline/policy roots, labeled by
    // their indices in the scan inventory.
    for (int i0 = 0; i0 < static_cast<int>(e.roots_pre.size()); ++i0)
      for (int i1 = 0; i1 < static_cast<int>(e.roots_post.size()); ++i1) {
        if (i0 == primary.root0_index && i1 == primary.root1_index) continue;
        WelfareRow extra =
            village_welfare_row(v, params, scenario, e.roots_pre[static_cast<std::size_t>(i0)],
                                e.roots_post[static_cast<std::size_t>(i1)]);
        extra.model = model;
        extra.root0_index = i0;
        extra.root1_index = i1;
        extra.primary = false;
        rows.push_back(extra);
      }
  }
  return rows;
}

std::string render_welfare_csv(const std::vector<WelfareRow>& rows) {
  std::ostringstream out;
  out << "model,village_id,n_eligible,n_ineligible,pi0,pi1,root0_index,root1_index,primary,"
         "eligible_cv_low,eligible_cv_high,ineligible_cv_low,ineligible_cv_high\n";
  for (const auto& r : rows)
    out << r.model << ',' << r.village_id << ',' << r.n_eligible << ',' << r.n_ineligible << ','
        << format_number(r.pi0) << ',' << format_number(r.pi1) << ',' << r.root0_index << ','
        << r.root1_index << ',' << (r.primary ? 1 : 0) << ',' << format_number(r.eligible_cv_low)
        << ',' << format_number(r.eligible_cv_high) << ',' << format_number(r.ineligible_cv_low)
        << ',' << format_number(r.ineligible_cv_high) << '\n';
  return out.str();
}

std::string render_cdf_csv(const Dataset& data, const IndexParams& params,
                           const PolicyScenario& scenario,
                           const std::vector<VillageEquilibria>& eq,
                           const std::vector<double>& alpha1_grid) {
  std::vector<double> grid{params.alpha / 2.0};
  for (double a1 : alpha1_grid) {
    if (!(a1 >= 0.0 && a1 <= params.alpha + 1e-12))
      throw input_error("alpha1_grid value " + format_number(a1) + " outside [0, alpha]");
    grid.push_back(std::min(a1, params.alpha));
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  std::ostringstream out;
  out << "village_id,group,alpha1,y,regime,support_lo,support_hi,a,prob\n";
  for (std::size_t i = 0; i < eq.size(); ++i) {
    const Village& v = data.villages[i];
    const double intercept = params.intercepts.value_for(v.id);
    for (const bool eligible_group : {true, false}) {
      // Representative household: participant group means.
      double y = 0.0;
      Eigen::VectorXd z;
      long long n = 0;
      for (const auto& h : v.households) {
        if (!h.participant || scenario.eligible(h.wealth) != eligible_group) continue;
        if (z.size() == 0) z = Eigen::VectorXd::Zero(h.covariates.size());
        y += h.wealth;
        z += h.covariates;
        ++n;
      }
      if (n == 0) continue;
      y /= static_cast<double>(n);
      z /= static_cast<double>(n);

      for (double a1 : grid) {
        const SpilloverSplit split{a1, a1 - params.alpha};
        const CvCdf cdf =
            eligible_group
                ? cv_cdf_eligible(params, split, y, z, scenario, eq[i].pre.value,
                                  eq[i].post.value, intercept)
                : cv_cdf_ineligible(params, split, y, z, scenario, eq[i].pre.value,
                                    eq[i].post.value, intercept);
        for (const auto& [a, prob] : cdf.grid)
          out << v.id << ',' << (eligible_group ? "eligible" : "ineligible") << ','
              << format_number(a1) << ',' << format_number(y) << ',' << regime_name(cdf.regime)
              << ',' << format_number(cdf.support_lo) << ',' << format_number(cdf.support_hi)
              << ',' << format_number(a) << ',' << format_number(prob) << '\n';
      }
    }
  }
  return out.str();
}

std::string render_statics_csv(const std::vector<ComparativeStaticsRow>& rows,
                               const std::vector<PredictionRow>& preds) {
  std::ostringstream out;
  out << "share,tau,take_up_pre,take_up_post,take_up_post_no_spillover,eligible_cv_low,"
         "eligible_cv_high,ineligible_cv_low,ineligible_cv_high,net_cv_low,net_cv_high,"
         "spending,dwl_low,dwl_high\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << format_number(r.share) << ',' << format_number(r.tau) << ','
        << format_number(r.take_up_pre) << ',' << format_number(r.take_up_post) << ','
        << format_number(preds[i].take_up_no_spillover) << ',' << format_number(r.eligible_cv_low)
        << ',' << format_number(r.eligible_cv_high) << ',' << format_number(r.ineligible_cv_low)
        << ',' << format_number(r.ineligible_cv_high) << ',' << format_number(r.net_cv_low) << ','
        << format_number(r.net_cv_high) << ',' << format_number(r.spending) << ','
        << format_number(r.dwl_low) << ',' << format_number(r.dwl_high) << '\n';
  }
  return out.str();
}

std::string render_convergence_csv(const std::vector<ConvergenceRow>& rows, double phi) {
  std::ostringstream out;
  out << "n,lambda,phi,seeds,mean_abs_dev,sup_dev\n";
  for (const auto& r : rows)
    out << r.n << ',' << format_number(r.lambda) << ',' << format_number(phi) << ',' << r.seeds
        << ',' << format_number(r.mean_abs_dev) << ',' << format_number(r.sup_dev) << '\n';
  return out.str();
}

ordered_json report_json(const PolicyReport& r) {
  ordered_json j;
  j["net_cv_low"] = json_num(r.net_cv_low);
  j["net_cv_high"] = json_num(r.net_cv_high);
  j["subsidy_spending"] = json_num(r.subsidy_spending);
  j["dwl_low"] = json_num(r.dwl_low);
  j["dwl_high"] = json_num(r.dwl_high);
  return j;
}

void write_manifest(ResultBundle& bundle, const RunConfig& config,
                    const std::vector<std::pair<std::string, std::string>>& files,
                    const ordered_json& results) {
  ordered_json j;
  j["workflow"] = workflow_name(config.workflow);
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed ? ordered_json(*config.seed) : ordered_json(nullptr);
  j["versions"] = ordered_json{
      {"takeup", "0.1.0"},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)}};
  ordered_json f;
  for (const auto& [key, name] : files) f[key] = name;
  j["files"] = f;
  if (!results.is_null()) j["results"] = results;
  bundle.manifest = join_path(config.output_dir, "manifest.json");
  write_text_file(bundle.manifest, j.dump(2) + "\n");
}

}  // namespace

std::vector<PredictionRow> predict_take_up_contrast(const Dataset& data,
                                                    const IndexParams& params,
                                                    const IndexParams& params_no_spillover,
                                                    const PolicyScenario& scenario_template,
                                                    const std::vector<double>& shares) {
  for (double s : shares)
    if (!(s > 0.0 && s < 1.0))
      throw input_error("predict_take_up_contrast: shares must lie in (0,1), got " +
                        std::to_string(s));
  std::vector<double> wealth;
  for (const auto& v : data.villages)
    for (const auto& h : v.households)
      if (h.participant) wealth.push_back(h.wealth);
  if (wealth.empty()) throw input_error("predict_take_up_contrast: no participant households");
  std::sort(wealth.begin(), wealth.end());

  std::vector<PredictionRow> out;
  out.reserve(shares.size());
  for (double share : shares) {
    // Same empirical-quantile rule as the welfare statics, so rows align.
    const auto k = static_cast<std::size_t>(std::ceil(share * static_cast<double>(wealth.size())));
    PolicyScenario scn = scenario_template;
    scn.tau = wealth[std::max<std::size_t>(k, 1) - 1];

    PredictionRow row;
    row.share = share;
    row.tau = scn.tau;

    double sum_s = 0.0, sum_b = 0.0;
    long long n = 0;
    for (const auto& v : data.villages) {
      const double pi1 = solve_pi_policy(v, params, scn).value;
      const double ic = params.intercepts.value_for(v.id);
      const double ic0 = params_no_spillover.intercepts.value_for(v.id);
      for (const auto& h : v.households) {
        if (!h.participant) continue;
        const double price = scn.eligible(h.wealth) ? scn.p1 : scn.p0;
        sum_s += demand_probability(params, price, h.wealth, h.covariates, pi1, ic);
        sum_b += demand_probability(params_no_spillover, price, h.wealth, h.covariates, 0.0, ic0);
        ++n;
      }
    }
    row.take_up_spillover = sum_s / static_cast<double>(n);
    row.take_up_no_spillover = sum_b / static_cast<double>(n);
    out.push_back(row);
  }
  return out;
}

ResultBundle run_pipeline(const RunConfig& config) {
  stage("config", [&] { config.validate(); });
  ResultBundle bundle;
  std::vector<std::pair<std::string, std::string>> files;
  ordered_json results;

  switch (config.workflow) {
    case Workflow::simulate: {
      const Dataset data = stage("simulate", [&] {
        if (config.spatial) {
          SpatialConfig sc = *config.spatial;
          sc.seed = *config.seed;
          return simulate_game(sc, config.params, config.n_villages, config.price_menu);
        }
        return simulate_game(config.params, config.n_villages, config.n_per_village,
                             *config.seed, config.price_menu);
      });
      bundle.dataset_csv = join_path(config.output_dir, "dataset.csv");
      stage("write", [&] { save_dataset(data, bundle.dataset_csv); });
      files.emplace_back("dataset", "dataset.csv");
      break;
    }

    case Workflow::estimate: {
      const Dataset data = stage("load", [&] { return load_dataset(config.dataset_path); });
      bundle.fit = stage("estimate", [&] { return run_fit(data, config); });
      bundle.has_fit = true;
      bundle.params_json = join_path(config.output_dir, "params.json");
      stage("write", [&] {
        write_text_file(bundle.params_json,
                        render_params_json(config, &bundle.fit, bundle.fit.params));
      });
      files.emplace_back("params", "params.json");
      break;
    }

    case Workflow::policy: {
      const Dataset data = stage("load", [&] { return load_dataset(config.dataset_path); });

      IndexParams params;
      if (config.params_given) {
        params = config.params;
      } else {
        bundle.fit = stage("estimate", [&] { return run_fit(data, config); });
        bundle.has_fit = true;
        params = bundle.fit.params;
      }

      const auto eq =
          stage("equilibrium", [&] { return solve_equilibria(data, params, config.scenario); });
      std::map<int, double> pi0s, pi1s;
      for (const auto& e : eq) {
        pi0s[e.village_id] = e.pre.value;
        pi1s[e.village_id] = e.post.value;
      }

      bundle.report = stage("welfare", [&] {
        return policy_report(data, params, config.scenario, pi0s, pi1s);
      });
      bundle.has_report = true;
      auto rows = welfare_rows(data, params, config.scenario, bundle.report, eq, "spillover");
      results["spillover"] = report_json(bundle.report);

      // The interaction-blind contrast: same pipeline with beliefs omitted.
      std::vector<VillageEquilibria> eq_blind;
      if (config.no_spillover) {
        const IndexParams params0 = stage("contrast", [&] { return blind_params(data, config); });
        eq_blind = stage("contrast", [&] {
          return solve_equilibria(data, params0, config.scenario);
        });
        std::map<int, double> b0, b1;
        for (const auto& e : eq_blind) {
          b0[e.village_id] = e.pre.value;
          b1[e.village_id] = e.post.value;
        }
        bundle.report_no_spillover = stage("contrast", [&] {
          return policy_report(data, params0, config.scenario, b0, b1);
        });
        bundle.has_no_spillover = true;
        const auto blind_rows =
            welfare_rows(data, params0, config.scenario, bundle.report_no_spillover, eq_blind,
                         "none");
        rows.insert(rows.end(), blind_rows.begin(), blind_rows.end());
        results["none"] = report_json(bundle.report_no_spillover);
      }

      bundle.equilibrium_csv = join_path(config.output_dir, "equilibrium.csv");
      bundle.welfare_csv = join_path(config.output_dir, "welfare.csv");
      bundle.cdf_csv = join_path(config.output_dir, "cdf.csv");
      bundle.params_json = join_path(config.output_dir, "params.json");
      stage("write", [&] {
        write_text_file(bundle.equilibrium_csv, render_equilibrium_csv(eq, eq_blind));
        write_text_file(bundle.welfare_csv, render_welfare_csv(rows));
        write_text_file(bundle.cdf_csv,
                        render_cdf_csv(data, params, config.scenario, eq, config.alpha1_grid));
        write_text_file(bundle.params_json,
                        render_params_json(config, bundle.has_fit ? &bundle.fit : nullptr,
                                           params));
      });
      files.emplace_back("params", "params.json");
      files.emplace_back("equilibrium", "equilibrium.csv");
      files.emplace_back("welfare", "welfare.csv");
      files.emplace_back("cdf", "cdf.csv");

      if (!config.shares.empty()) {
        bundle.statics_rows = stage("statics", [&] {
          return comparative_statics(data, params, config.scenario, config.shares);
        });
        const IndexParams params0 = stage("statics", [&] { return blind_params(data, config); });
        const auto preds = stage("statics", [&] {
          return predict_take_up_contrast(data, params, params0, config.scenario, config.shares);
        });
        bundle.statics_csv = join_path(config.output_dir, "statics.csv");
        stage("write", [&] {
          write_text_file(bundle.statics_csv, render_statics_csv(bundle.statics_rows, preds));
        });
        files.emplace_back("statics", "statics.csv");
      }
      break;
    }

    case Workflow::convergence: {
      const double density = config.spatial ? config.spatial->density_c : 1.0;
      bundle.convergence = stage("convergence", [&] {
        return convergence_study(config.convergence_sizes, config.convergence_seeds,
                                 config.convergence_phi, config.params, density, *config.seed,
                                 config.price_menu);
      });
      bundle.convergence_csv = join_path(config.output_dir, "convergence.csv");
      stage("write", [&] {
        write_text_file(bundle.convergence_csv,
                        render_convergence_csv(bundle.convergence, config.convergence_phi));
      });
      files.emplace_back("convergence", "convergence.csv");
      break;
    }
  }

  stage("write", [&] { write_manifest(bundle, config, files, results); });
  return bundle;
}

}  // namespace takeup
