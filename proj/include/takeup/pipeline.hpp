#pragma once

#include <map>
#include <string>
#include <vector>

#include "takeup/cli_io.hpp"

namespace takeup {

/// Post-policy take-up predictions for one eligibility share, from the model
/// with interactions (equilibrium re-solved) and from the interaction-blind
/// refit of the same data (beliefs omitted, probabilities averaged directly).
struct PredictionRow {
  double share = 0.0;
  double tau = 0.0;
  double take_up_spillover = 0.0;
  double take_up_no_spillover = 0.0;
};

/// Runs one configured workflow end to end and writes every produced file
/// under config.output_dir:
///   simulate     dataset.csv
///   estimate     params.json
///   policy       params.json, equilibrium.csv, welfare.csv, cdf.csv
///                (+ statics.csv when shares are given)
///   convergence  convergence.csv
/// plus manifest.json always. Output is deterministic: rerunning the same
/// config (and seed) rewrites byte-identical files. Errors from constituent
/// operations are rethrown with the pipeline stage prepended.
ResultBundle run_pipeline(const RunConfig& config);

/// The interaction-blind contrast behind the statics.csv columns: fits the
/// belief-free model to the same data (or zeroes alpha when params are
/// supplied), then predicts post-policy take-up at each eligibility share
/// with tau at the pooled participant wealth quantile.
std::vector<PredictionRow> predict_take_up_contrast(const Dataset& data,
                                                    const IndexParams& params,
                                                    const IndexParams& params_no_spillover,
                                                    const PolicyScenario& scenario_template,
                                                    const std::vector<double>& shares);

}  // namespace takeup
