#include "takeup/cli_io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace takeup {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  char* end = nullptr;
  out = std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size();
}

bool parse_ll(const std::string& s, long long& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(t.c_str(), &end, 10);
  return end == t.c_str() + t.size();
}

std::vector<double> parse_double_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  for (const auto& part : split(s, ',')) {
    double v = 0.0;
    if (!parse_double(part, v))
      throw input_error("config: " + key + ": malformed number '" + trim(part) + "'");
    out.push_back(v);
  }
  return out;
}

bool parse_bool(const std::string& s, const std::string& key) {
  const std::string t = trim(s);
  if (t == "true" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "no" || t == "0") return false;
  throw input_error("config: " + key + ": expected true/false, got '" + t + "'");
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

ErrorDist parse_error_dist(const std::string& s, const std::string& key) {
  const std::string t = trim(s);
  if (t == "logit") return ErrorDist::logit;
  if (t == "probit") return ErrorDist::probit;
  throw input_error("config: " + key + ": expected logit or probit, got '" + t + "'");
}

// One parsed data row, or the reason it was rejected.
struct RowError {
  std::size_t line;
  std::string reason;
};

}  // namespace

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

Dataset load_dataset(const std::string& path) {
  const std::string text = read_text_file(path);

  std::vector<std::string> lines;
  {
    std::string cur;
    for (char c : text) {
      if (c == '\n') {
        if (!cur.empty() && cur.back() == '\r') cur.pop_back();
        lines.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) {
      if (cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
    }
  }

  if (lines.empty() || trim(lines[0]) != kDatasetHeader)
    throw input_error("load_dataset: " + path + ": first line must be the schema header \"" +
                      kDatasetHeader + "\"");

  std::vector<RowError> bad;
  const auto reject = [&bad](std::size_t line, std::string reason) {
    bad.push_back({line, std::move(reason)});
  };

  std::map<int, Village> villages;
  std::set<long long> seen_ids;
  std::size_t parsed_rows = 0;

  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;  // 1-based, header is line 1
    if (trim(lines[li]).empty()) continue;
    const auto fields = split(lines[li], ',');
    if (fields.size() != 10) {
      reject(line_no, "expected 10 fields, got " + std::to_string(fields.size()));
      continue;
    }

    Household h;
    long long vid = 0;
    double children = 0.0, female_edu = 0.0;
    bool ok = true;
    const auto need_ll = [&](const std::string& s, long long& out, const char* what) {
      if (!parse_ll(s, out)) {
        reject(line_no, std::string("malformed ") + what + " '" + trim(s) + "'");
        ok = false;
      }
    };
    const auto need_d = [&](const std::string& s, double& out, const char* what) {
      if (!parse_double(s, out) || !std::isfinite(out)) {
        reject(line_no, std::string("malformed ") + what + " '" + trim(s) + "'");
        ok = false;
      }
    };

    need_ll(fields[0], h.id, "household_id");
    need_ll(fields[1], vid, "village_id");
    need_d(fields[2], h.price, "price");
    need_d(fields[3], h.wealth, "wealth");
    need_d(fields[4], children, "children");
    need_d(fields[5], female_edu, "female_edu");

    const bool x_blank = trim(fields[6]).empty();
    const bool y_blank = trim(fields[7]).empty();
    if (x_blank != y_blank) {
      reject(line_no, "loc_x and loc_y must be both present or both blank");
      ok = false;
    } else if (!x_blank) {
      need_d(fields[6], h.loc_x, "loc_x");
      need_d(fields[7], h.loc_y, "loc_y");
      h.has_location = true;
    }

    long long outcome = 0, participant = 0;
    need_ll(fields[8], outcome, "outcome");
    need_ll(fields[9], participant, "participant");
    if (ok && (outcome < 0 || outcome > 1)) {
      reject(line_no, "outcome must be 0 or 1, got " + trim(fields[8]));
      ok = false;
    }
    if (ok && (participant < 0 || participant > 1)) {
      reject(line_no, "participant must be 0 or 1, got " + trim(fields[9]));
      ok = false;
    }
    if (!ok) continue;

    if (!seen_ids.insert(h.id).second) {
      reject(line_no, "duplicate household_id " + std::to_string(h.id));
      continue;
    }

    h.village_id = static_cast<int>(vid);
    h.covariates.resize(2);
    h.covariates << children, female_edu;
    h.outcome = static_cast<int>(outcome);
    h.participant = participant == 1;

    auto& v = villages[h.village_id];
    v.id = h.village_id;
    v.households.push_back(std::move(h));
    ++parsed_rows;
  }

  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "load_dataset: " << path << ": " << bad.size() << " bad row(s):";
    const std::size_t shown = std::min<std::size_t>(bad.size(), 10);
    for (std::size_t i = 0; i < shown; ++i)
      msg << "\n  line " << bad[i].line << ": " << bad[i].reason;
    if (bad.size() > shown) msg << "\n  ... and " << bad.size() - shown << " more";
    throw input_error(msg.str());
  }
  if (parsed_rows == 0) throw input_error("load_dataset: " + path + ": dataset is empty");

  Dataset data;
  data.covariate_names = {"children", "female_edu"};
  for (auto& [id, v] : villages) {
    v.total_households = static_cast<long long>(v.households.size());
    data.villages.push_back(std::move(v));
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ostringstream out;
  out << kDatasetHeader << '\n';
  for (const auto& v : data.villages)
    for (const auto& h : v.households) {
      out << h.id << ',' << h.village_id << ',' << format_number(h.price) << ','
          << format_number(h.wealth) << ',';
      // children and female_edu live in the covariates block, in schema order
      const double children = h.covariates.size() > 0 ? h.covariates(0) : 0.0;
      const double female_edu = h.covariates.size() > 1 ? h.covariates(1) : 0.0;
      out << format_number(children) << ',' << format_number(female_edu) << ',';
      if (h.has_location) out << format_number(h.loc_x) << ',' << format_number(h.loc_y);
      else out << ',';
      out << ',' << h.outcome << ',' << (h.participant ? 1 : 0) << '\n';
    }
  write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<int, double> xi;
  bool pooled_given = false;
  double pooled_value = 0.0;

  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw input_error("config: line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto bad_value = [&](const char* what) {
      return input_error("config: " + key + ": expected " + what + ", got '" + value + "'");
    };

    if (key == "workflow") {
      if (value == "simulate") cfg.workflow = Workflow::simulate;
      else if (value == "estimate") cfg.workflow = Workflow::estimate;
      else if (value == "policy") cfg.workflow = Workflow::policy;
      else if (value == "convergence") cfg.workflow = Workflow::convergence;
      else throw bad_value("simulate|estimate|policy|convergence");
    } else if (key == "dataset") {
      cfg.dataset_path = value;
    } else if (key == "output_dir") {
      cfg.output_dir = value;
    } else if (key == "seed") {
      long long s = 0;
      if (!parse_ll(value, s) || s < 0) throw bad_value("a nonnegative integer");
      cfg.seed = static_cast<std::uint64_t>(s);
    } else if (key == "no_spillover") {
      cfg.no_spillover = parse_bool(value, key);
    } else if (key == "alpha1_grid") {
      cfg.alpha1_grid = parse_double_list(value, key);
    } else if (key == "shares") {
      cfg.shares = parse_double_list(value, key);
    } else if (key == "scenario.p0" || key == "scenario.p1" || key == "scenario.tau") {
      double v = 0.0;
      if (!parse_double(value, v)) throw bad_value("a number");
      if (key == "scenario.p0") cfg.scenario.p0 = v;
      else if (key == "scenario.p1") cfg.scenario.p1 = v;
      else cfg.scenario.tau = v;
    } else if (key == "fit.estimator") {
      if (value == "br") cfg.fit_spec.estimator = Estimator::br;
      else if (value == "cre") cfg.fit_spec.estimator = Estimator::cre;
      else if (value == "fpl") cfg.fit_spec.estimator = Estimator::fpl;
      else if (value == "sd") cfg.use_sd = true;
      else throw bad_value("br|cre|fpl|sd");
    } else if (key == "fit.error") {
      cfg.fit_spec.error = parse_error_dist(value, key);
    } else if (key == "fit.fixed_effects") {
      if (value == "none") cfg.fit_spec.fixed_effects = FixedEffectScheme::none;
      else if (value == "dummies") cfg.fit_spec.fixed_effects = FixedEffectScheme::dummies_homogeneity;
      else if (value == "cre") cfg.fit_spec.fixed_effects = FixedEffectScheme::correlated_re;
      else throw bad_value("none|dummies|cre");
    } else if (key == "fit.tie") {
      const auto parts = split(value, ',');
      long long a = 0, b = 0;
      if (parts.size() != 2 || !parse_ll(parts[0], a) || !parse_ll(parts[1], b))
        throw bad_value("two village ids 'a,b'");
      cfg.fit_spec.tied_pair = {static_cast<int>(a), static_cast<int>(b)};
    } else if (key == "fit.scale_beliefs") {
      cfg.fit_spec.scale_beliefs = parse_bool(value, key);
    } else if (key == "fit.include_belief") {
      cfg.fit_spec.include_belief_regressor = parse_bool(value, key);
    } else if (key == "fit.fix_alpha_zero") {
      cfg.fit_spec.fix_alpha_zero = parse_bool(value, key);
    } else if (key == "params.c1" || key == "params.c2" || key == "params.alpha") {
      double v = 0.0;
      if (!parse_double(value, v)) throw bad_value("a number");
      if (key == "params.c1") cfg.params.c1 = v;
      else if (key == "params.c2") cfg.params.c2 = v;
      else cfg.params.alpha = v;
      cfg.params_given = true;
    } else if (key == "params.c3") {
      const auto v = parse_double_list(value, key);
      cfg.params.c3 = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      cfg.params_given = true;
    } else if (key == "params.intercept") {
      if (!parse_double(value, pooled_value)) throw bad_value("a number");
      pooled_given = true;
      cfg.params_given = true;
    } else if (key.rfind("params.xi.", 0) == 0) {
      long long id = 0;
      if (!parse_ll(key.substr(10), id)) throw input_error("config: bad village id in '" + key + "'");
      double v = 0.0;
      if (!parse_double(value, v)) throw bad_value("a number");
      xi[static_cast<int>(id)] = v;
      cfg.params_given = true;
    } else if (key == "params.error") {
      cfg.params.error = parse_error_dist(value, key);
      cfg.params_given = true;
    } else if (key == "simulate.villages") {
      long long v = 0;
      if (!parse_ll(value, v) || v < 1) throw bad_value("a positive integer");
      cfg.n_villages = static_cast<int>(v);
    } else if (key == "simulate.per_village") {
      long long v = 0;
      if (!parse_ll(value, v) || v < 1) throw bad_value("a positive integer");
      cfg.n_per_village = static_cast<int>(v);
    } else if (key == "simulate.menu") {
      cfg.price_menu = parse_double_list(value, key);
    } else if (key == "spatial.n" || key == "spatial.phi" || key == "spatial.density") {
      if (!cfg.spatial) cfg.spatial = SpatialConfig{};
      double v = 0.0;
      if (!parse_double(value, v)) throw bad_value("a number");
      if (key == "spatial.n") cfg.spatial->n_households = static_cast<int>(v);
      else if (key == "spatial.phi") cfg.spatial->phi = v;
      else cfg.spatial->density_c = v;
    } else if (key == "convergence.sizes") {
      cfg.convergence_sizes.clear();
      for (const auto& part : split(value, ',')) {
        long long v = 0;
        if (!parse_ll(part, v) || v < 2) throw bad_value("a list of integers >= 2");
        cfg.convergence_sizes.push_back(static_cast<int>(v));
      }
    } else if (key == "convergence.seeds") {
      long long v = 0;
      if (!parse_ll(value, v) || v < 1) throw bad_value("a positive integer");
      cfg.convergence_seeds = static_cast<int>(v);
    } else if (key == "convergence.phi") {
      double v = 0.0;
      if (!parse_double(value, v)) throw bad_value("a number");
      cfg.convergence_phi = v;
    } else {
      throw input_error("config: unknown key '" + key + "' (line " + std::to_string(line_no) + ")");
    }
  }

  if (!xi.empty()) {
    if (pooled_given)
      throw input_error("config: params.intercept and params.xi.* are mutually exclusive");
    cfg.params.intercepts = Intercepts::per_village(xi);
  } else if (pooled_given) {
    cfg.params.intercepts = Intercepts::pooled(pooled_value);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(read_text_file(path)); }

void RunConfig::validate() const {
  scenario.validate();
  if (use_sd && (!spatial || !(spatial->phi > 0.0)))
    throw input_error("estimator sd requires spatial.phi > 0");
  switch (workflow) {
    case Workflow::simulate:
      if (!seed) throw input_error("simulate requires a seed");
      if (!params_given) throw input_error("simulate requires params.* coefficients");
      break;
    case Workflow::estimate:
      if (dataset_path.empty()) throw input_error("estimate requires a dataset");
      break;
    case Workflow::policy:
      if (dataset_path.empty()) throw input_error("policy requires a dataset");
      for (double s : shares)
        if (!(s > 0.0 && s < 1.0))
          throw input_error("shares must lie in (0,1), got " + std::to_string(s));
      break;
    case Workflow::convergence:
      if (!seed) throw input_error("convergence requires a seed");
      if (!params_given) throw input_error("convergence requires params.* coefficients");
      if (convergence_sizes.empty())
        throw input_error("convergence requires convergence.sizes");
      if (!(convergence_phi > 0.0))
        throw input_error("convergence requires convergence.phi > 0");
      break;
  }
}

std::string canonical_config(const RunConfig& config) {
  std::ostringstream out;
  const auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  const auto list = [&num](const std::vector<double>& vs) {
    std::string s;
    for (std::size_t i = 0; i < vs.size(); ++i) s += (i ? "," : "") + num(vs[i]);
    return s;
  };

  out << "workflow=" << workflow_name(config.workflow) << '\n';
  out << "dataset=" << config.dataset_path << '\n';
  out << "output_dir=" << config.output_dir << '\n';
  out << "seed=" << (config.seed ? std::to_string(*config.seed) : "unset") << '\n';
  out << "no_spillover=" << (config.no_spillover ? 1 : 0) << '\n';
  out << "alpha1_grid=" << list(config.alpha1_grid) << '\n';
  out << "shares=" << list(config.shares) << '\n';
  out << "scenario=" << num(config.scenario.p0) << ',' << num(config.scenario.p1) << ','
      << num(config.scenario.tau) << '\n';

  out << "fit=";
  switch (config.fit_spec.estimator) {
    case Estimator::br: out << "br"; break;
    case Estimator::cre: out << "cre"; break;
    case Estimator::fpl: out << "fpl"; break;
  }
  if (config.use_sd) out << "+sd";
  out << ',' << error_name(config.fit_spec.error) << ',';
  switch (config.fit_spec.fixed_effects) {
    case FixedEffectScheme::none: out << "none"; break;
    case FixedEffectScheme::dummies_homogeneity: out << "dummies"; break;
    case FixedEffectScheme::correlated_re: out << "cre"; break;
  }
  out << ",tie:" << config.fit_spec.tied_pair.first << ':' << config.fit_spec.tied_pair.second
      << ",scale:" << (config.fit_spec.scale_beliefs ? 1 : 0)
      << ",belief:" << (config.fit_spec.include_belief_regressor ? 1 : 0)
      << ",alpha0:" << (config.fit_spec.fix_alpha_zero ? 1 : 0) << '\n';

  out << "params_given=" << (config.params_given ? 1 : 0) << '\n';
  if (config.params_given) {
    out << "params=" << num(config.params.c1) << ',' << num(config.params.c2) << ",c3:";
    for (Eigen::Index j = 0; j < config.params.c3.size(); ++j)
      out << (j ? "," : "") << num(config.params.c3(j));
    out << ",alpha:" << num(config.params.alpha) << ',' << error_name(config.params.error)
        << ",intercepts:";
    if (config.params.intercepts.is_pooled()) {
      out << "pooled:" << num(config.params.intercepts.c0());
    } else {
      for (const auto& [id, v] : config.params.intercepts.per_village_values())
        out << id << ':' << num(v) << ';';
    }
    out << '\n';
  }

  out << "simulate=" << config.n_villages << ',' << config.n_per_village
      << ",menu:" << list(config.price_menu) << '\n';
  out << "spatial=";
  if (config.spatial)
    out << config.spatial->n_households << ',' << num(config.spatial->phi) << ','
        << num(config.spatial->density_c);
  else
    out << "unset";
  out << '\n';
  out << "convergence=";
  for (std::size_t i = 0; i < config.convergence_sizes.size(); ++i)
    out << (i ? "," : "") << config.convergence_sizes[i];
  out << ";seeds:" << config.convergence_seeds << ";phi:" << num(config.convergence_phi) << '\n';
  return out.str();
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  for (unsigned char c : canonical_config(config)) {
    h ^= c;
    h *= 1099511628211ull;  // FNV prime
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Emission helpers
// ---------------------------------------------------------------------------

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", value);
  return std::string(buf);
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw input_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw input_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace takeup
