#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "takeup/estimation.hpp"
#include "takeup/spatial.hpp"
#include "takeup/types.hpp"
#include "takeup/welfare.hpp"

namespace takeup {

/// Which of the four pipelines a run executes. The comparative-statics
/// subcommand is the policy workflow with a non-empty share grid.
enum class Workflow { simulate, estimate, policy, convergence };

/// Full description of one run: parsed from a key = value config file
/// (dotted keys for nesting, '#' comments), with CLI flags overriding
/// individual fields afterwards.
struct RunConfig {
  Workflow workflow = Workflow::estimate;
  std::string dataset_path;  ///< empty = none
  PolicyScenario scenario;
  FitSpec fit_spec;
  std::optional<SpatialConfig> spatial;
  std::vector<double> alpha1_grid;  ///< extra interior splits for emitted CDFs
  std::string output_dir = ".";
  std::optional<std::uint64_t> seed;

  /// Index coefficients supplied directly (params.* keys). When present,
  /// policy and comparative-statics skip estimation and use them as-is;
  /// simulate and convergence require them as the generating process.
  IndexParams params;
  bool params_given = false;

  /// Estimate with the conditional-beliefs likelihood instead of fit_spec's
  /// estimator (estimator = sd). Requires spatial.phi for the kernel range.
  bool use_sd = false;

  int n_villages = 11;
  int n_per_village = 50;
  std::vector<double> price_menu;  ///< empty = default menu

  std::vector<int> convergence_sizes;
  int convergence_seeds = 20;
  double convergence_phi = 1.0;

  std::vector<double> shares;  ///< comparative-statics eligibility grid
  bool no_spillover = false;   ///< also run the interaction-blind contrast

  /// Throws input_error when a workflow-required field is missing.
  void validate() const;
};

/// Paths of everything one run emitted (empty string = not produced), plus
/// the in-memory results the files were rendered from. Every non-empty path
/// is listed in the manifest.
struct ResultBundle {
  std::string params_json;
  std::string welfare_csv;
  std::string cdf_csv;
  std::string equilibrium_csv;
  std::string convergence_csv;
  std::string statics_csv;
  std::string dataset_csv;
  std::string manifest;

  FitResult fit;
  bool has_fit = false;
  PolicyReport report;
  bool has_report = false;
  PolicyReport report_no_spillover;
  bool has_no_spillover = false;
  std::vector<ConvergenceRow> convergence;
  std::vector<ComparativeStaticsRow> statics_rows;
};

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

/// Header every dataset file starts with. loc_x/loc_y may be blank (both or
/// neither) for rows without coordinates.
inline constexpr const char* kDatasetHeader =
    "household_id,village_id,price,wealth,children,female_edu,loc_x,loc_y,outcome,participant";

/// Parses a dataset CSV. Villages are keyed by the village_id column and
/// ordered by id; households keep file order within their village. All
/// malformed rows are collected and reported together, each with its file
/// line number. Throws input_error on a bad header, an empty body, malformed
/// numbers, duplicate household ids, or a half-blank coordinate pair.
Dataset load_dataset(const std::string& path);

/// Writes the CSV schema above, numbers at 12 significant digits. A dataset
/// written, loaded, and written again produces byte-identical files.
void save_dataset(const Dataset& data, const std::string& path);

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// Parses a run config from `key = value` text. Unknown keys are errors
/// (typos must not silently change a run).
RunConfig parse_config(const std::string& text);

/// parse_config over the contents of a file.
RunConfig load_config(const std::string& path);

/// Canonical one-line-per-field rendering of every config field, used as the
/// hash preimage and for diffing runs. Doubles print with full precision so
/// any field change changes the text.
std::string canonical_config(const RunConfig& config);

/// FNV-1a 64-bit hash of canonical_config, as 16 hex digits.
std::string config_hash(const RunConfig& config);

// ---------------------------------------------------------------------------
// Emission helpers (shared by the pipeline; exposed for tests)
// ---------------------------------------------------------------------------

/// %.12g with non-finite values spelled nan/inf (parseable by strtod).
std::string format_number(double value);

/// Writes text to path, creating parent directories. Throws input_error on
/// filesystem failure.
void write_text_file(const std::string& path, const std::string& text);

/// Reads a whole file. Throws input_error when it cannot be opened.
std::string read_text_file(const std::string& path);

}  // namespace takeup
