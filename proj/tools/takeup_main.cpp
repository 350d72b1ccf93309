// Command-line front end: four workflows plus the comparative-statics sweep,
// each a subcommand. A config file provides the base run description; flags
// override individual fields. Exit codes: 0 success, 2 input error,
// 3 solver or numerical error.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "takeup/cli_io.hpp"
#include "takeup/pipeline.hpp"

namespace {

using takeup::RunConfig;
using takeup::Workflow;

struct Flags {
  std::string config_path, dataset, out, estimator, error_dist, fixed_effects;
  std::vector<int> tie, sizes;
  std::vector<double> menu, shares, alpha1_grid;
  std::uint64_t seed = 0;
  int villages = 0, per_village = 0, spatial_n = 0, conv_seeds = 0;
  double p0 = 0, p1 = 0, tau = 0, spatial_phi = 0, density = 0, conv_phi = 0;
  bool no_spillover = false, no_scaling = false;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config_path, "run config file (key = value)")
      ->check(CLI::ExistingFile);
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--seed", f.seed, "random seed");
}

void add_fit_options(CLI::App* sub, Flags& f) {
  sub->add_option("--estimator", f.estimator, "br | cre | fpl | sd");
  sub->add_option("--error", f.error_dist, "logit | probit");
  sub->add_option("--fixed-effects", f.fixed_effects, "none | dummies | cre");
  sub->add_option("--tie", f.tie, "tied village pair for dummies, e.g. 1,11")
      ->delimiter(',')
      ->expected(2);
  sub->add_flag("--no-participation-scaling", f.no_scaling,
                "use raw village take-up averages as beliefs");
  sub->add_option("--spatial-phi", f.spatial_phi, "interaction range (sd estimator)");
}

// Layer the parsed flags of the active subcommand over the config file.
RunConfig assemble(const CLI::App* sub, const Flags& f, Workflow workflow) {
  RunConfig cfg;
  if (sub->count("--config") > 0) cfg = takeup::load_config(f.config_path);
  cfg.workflow = workflow;

  const auto got = [sub](const char* name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (got("--out")) cfg.output_dir = f.out;
  if (got("--seed")) cfg.seed = f.seed;
  if (got("--dataset")) cfg.dataset_path = f.dataset;
  if (got("--p0")) cfg.scenario.p0 = f.p0;
  if (got("--p1")) cfg.scenario.p1 = f.p1;
  if (got("--tau")) cfg.scenario.tau = f.tau;
  if (got("--no-spillover")) cfg.no_spillover = true;
  if (got("--alpha1-grid")) cfg.alpha1_grid = f.alpha1_grid;
  if (got("--shares")) cfg.shares = f.shares;
  if (got("--villages")) cfg.n_villages = f.villages;
  if (got("--per-village")) cfg.n_per_village = f.per_village;
  if (got("--menu")) cfg.price_menu = f.menu;
  if (got("--sizes")) cfg.convergence_sizes = f.sizes;
  if (got("--conv-seeds")) cfg.convergence_seeds = f.conv_seeds;
  if (got("--phi")) cfg.convergence_phi = f.conv_phi;

  if (got("--estimator")) {
    cfg.use_sd = false;
    if (f.estimator == "br") cfg.fit_spec.estimator = takeup::Estimator::br;
    else if (f.estimator == "cre") cfg.fit_spec.estimator = takeup::Estimator::cre;
    else if (f.estimator == "fpl") cfg.fit_spec.estimator = takeup::Estimator::fpl;
    else if (f.estimator == "sd") cfg.use_sd = true;
    else throw takeup::input_error("--estimator: expected br|cre|fpl|sd, got " + f.estimator);
  }
  if (got("--error")) {
    if (f.error_dist == "logit") cfg.fit_spec.error = takeup::ErrorDist::logit;
    else if (f.error_dist == "probit") cfg.fit_spec.error = takeup::ErrorDist::probit;
    else throw takeup::input_error("--error: expected logit|probit, got " + f.error_dist);
  }
  if (got("--fixed-effects")) {
    if (f.fixed_effects == "none") cfg.fit_spec.fixed_effects = takeup::FixedEffectScheme::none;
    else if (f.fixed_effects == "dummies")
      cfg.fit_spec.fixed_effects = takeup::FixedEffectScheme::dummies_homogeneity;
    else if (f.fixed_effects == "cre")
      cfg.fit_spec.fixed_effects = takeup::FixedEffectScheme::correlated_re;
    else
      throw takeup::input_error("--fixed-effects: expected none|dummies|cre, got " +
                                f.fixed_effects);
  }
  if (got("--tie")) cfg.fit_spec.tied_pair = {f.tie[0], f.tie[1]};
  if (got("--no-participation-scaling")) cfg.fit_spec.scale_beliefs = false;
  if (got("--spatial-n") || got("--spatial-phi") || got("--density")) {
    if (!cfg.spatial) cfg.spatial = takeup::SpatialConfig{};
    if (got("--spatial-n")) cfg.spatial->n_households = f.spatial_n;
    if (got("--spatial-phi")) cfg.spatial->phi = f.spatial_phi;
    if (got("--density")) cfg.spatial->density_c = f.density;
  }
  return cfg;
}

void print_summary(const takeup::ResultBundle& bundle) {
  const auto file = [](const char* what, const std::string& path) {
    if (!path.empty()) std::printf("wrote %s: %s\n", what, path.c_str());
  };
  file("dataset", bundle.dataset_csv);
  file("params", bundle.params_json);
  file("equilibrium", bundle.equilibrium_csv);
  file("welfare", bundle.welfare_csv);
  file("cdf grids", bundle.cdf_csv);
  file("statics", bundle.statics_csv);
  file("convergence", bundle.convergence_csv);
  file("manifest", bundle.manifest);

  if (bundle.has_fit) {
    const auto& fit = bundle.fit;
    std::printf("fit: converged=%s loglik=%s alpha=%s\n", fit.converged ? "yes" : "no",
                takeup::format_number(fit.loglik).c_str(),
                takeup::format_number(fit.params.alpha).c_str());
  }
  if (bundle.has_report) {
    const auto& r = bundle.report;
    std::printf("net CV in [%s, %s], spending %s, DWL in [%s, %s]\n",
                takeup::format_number(r.net_cv_low).c_str(),
                takeup::format_number(r.net_cv_high).c_str(),
                takeup::format_number(r.subsidy_spending).c_str(),
                takeup::format_number(r.dwl_low).c_str(),
                takeup::format_number(r.dwl_high).c_str());
  }
  if (bundle.has_no_spillover) {
    const auto& r = bundle.report_no_spillover;
    std::printf("no-spillover contrast: net CV in [%s, %s], DWL in [%s, %s]\n",
                takeup::format_number(r.net_cv_low).c_str(),
                takeup::format_number(r.net_cv_high).c_str(),
                takeup::format_number(r.dwl_low).c_str(),
                takeup::format_number(r.dwl_high).c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"take-up, equilibrium, and welfare toolkit for subsidy experiments"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* simulate = app.add_subcommand("simulate", "draw a synthetic dataset");
  add_common(simulate, f);
  simulate->add_option("--villages", f.villages, "number of villages");
  simulate->add_option("--per-village", f.per_village, "households per village");
  simulate->add_option("--menu", f.menu, "price menu, comma separated")->delimiter(',');
  simulate->add_option("--spatial-n", f.spatial_n, "households per village (spatial draw)");
  simulate->add_option("--spatial-phi", f.spatial_phi, "interaction range");
  simulate->add_option("--density", f.density, "households per unit area");

  CLI::App* estimate = app.add_subcommand("estimate", "fit index coefficients to a dataset");
  add_common(estimate, f);
  estimate->add_option("--dataset", f.dataset, "input CSV");
  add_fit_options(estimate, f);

  CLI::App* policy = app.add_subcommand("policy", "equilibria, welfare bounds, deadweight loss");
  add_common(policy, f);
  policy->add_option("--dataset", f.dataset, "input CSV");
  add_fit_options(policy, f);
  policy->add_option("--p0", f.p0, "baseline price");
  policy->add_option("--p1", f.p1, "subsidised price");
  policy->add_option("--tau", f.tau, "eligibility wealth cutoff");
  policy->add_option("--alpha1-grid", f.alpha1_grid, "extra spillover splits for CDF output")
      ->delimiter(',');
  policy->add_flag("--no-spillover", f.no_spillover,
                   "also run the interaction-blind contrast");

  CLI::App* statics = app.add_subcommand(
      "comparative-statics", "policy sweep over eligibility shares");
  add_common(statics, f);
  statics->add_option("--dataset", f.dataset, "input CSV");
  add_fit_options(statics, f);
  statics->add_option("--p0", f.p0, "baseline price");
  statics->add_option("--p1", f.p1, "subsidised price");
  statics->add_option("--tau", f.tau, "eligibility wealth cutoff for the main report");
  statics->add_option("--shares", f.shares, "eligibility shares, comma separated")
      ->delimiter(',')
      ->required();
  statics->add_flag("--no-spillover", f.no_spillover,
                    "also run the interaction-blind contrast");

  CLI::App* convergence = app.add_subcommand("convergence", "belief-field deviation study");
  add_common(convergence, f);
  convergence->add_option("--sizes", f.sizes, "village sizes, comma separated")->delimiter(',');
  convergence->add_option("--conv-seeds", f.conv_seeds, "seeds per size");
  convergence->add_option("--phi", f.conv_phi, "interaction range");
  convergence->add_option("--menu", f.menu, "price menu, comma separated")->delimiter(',');
  convergence->add_option("--density", f.density, "households per unit area");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    Workflow workflow = Workflow::estimate;
    if (sub == simulate) workflow = Workflow::simulate;
    else if (sub == policy || sub == statics) workflow = Workflow::policy;
    else if (sub == convergence) workflow = Workflow::convergence;

    const RunConfig cfg = assemble(sub, f, workflow);
    const takeup::ResultBundle bundle = takeup::run_pipeline(cfg);
    print_summary(bundle);
    return 0;
  } catch (const takeup::input_error& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const takeup::solver_error& e) {
    std::fprintf(stderr, "solver error: %s\n", e.what());
    return 3;
  } catch (const takeup::numerical_error& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
