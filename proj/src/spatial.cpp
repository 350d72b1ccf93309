#include "takeup/spatial.hpp"

#include "takeup/demand.hpp"
#include "takeup/dist.hpp"
#include "takeup/equilibrium.hpp"
#include "takeup/parallel.hpp"
#include "takeup/rng.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace takeup {

double l1_distance(const Location& a, const Location& b) {
  return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}

double SpatialConfig::side() const { return std::sqrt(static_cast<double>(n_households) / density_c); }

void SpatialConfig::validate() const {
  if (n_households < 2) throw input_error("SpatialConfig: n_households must be >= 2");
  if (!(density_c > 0.0)) throw input_error("SpatialConfig: density_c must be > 0");
  if (!(phi > 0.0)) throw input_error("SpatialConfig: phi must be > 0");
}

std::vector<Location> sample_region(const SpatialConfig& config) {
  config.validate();
  auto rng = substream(config.seed, 0);
  std::uniform_real_distribution<double> u(0.0, config.side());
  std::vector<Location> out(static_cast<std::size_t>(config.n_households));
  for (auto& l : out) {
    l.x = u(rng);
    l.y = u(rng);
  }
  return out;
}

Eigen::VectorXd sample_gp(const std::vector<Location>& locations, double phi,
                          std::uint64_t seed) {
  if (!(phi > 0.0)) throw input_error("sample_gp: phi must be > 0");
  const auto n = static_cast<Eigen::Index>(locations.size());
  if (n == 0) throw input_error("sample_gp: no locations");

  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    cov(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double r = std::exp(-l1_distance(locations[static_cast<std::size_t>(i)],
                                             locations[static_cast<std::size_t>(j)]) /
                                phi);
      cov(i, j) = r;
      cov(j, i) = r;
    }
  }

  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 1e-10;
  for (;; jitter *= 10.0) {
    llt.compute(cov + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) break;
    if (jitter >= 1e-6)
      throw numerical_error("sample_gp: covariance failed Cholesky at jitter 1e-6");
  }

  auto rng = substream(seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = gauss(rng);
  return llt.matrixL() * z;
}

double conditional_cdf_H(double e_tilde, double e, double d, double phi) {
  if (!(phi > 0.0)) throw input_error("conditional_cdf_H: phi must be > 0");
  if (!(d >= 0.0)) throw input_error("conditional_cdf_H: distance must be >= 0");
  const double rho = std::exp(-d / phi);
  if (rho >= 1.0 - 1e-12) return e_tilde >= e ? 1.0 : 0.0;
  return norm_cdf((e_tilde - rho * e) / std::sqrt(1.0 - rho * rho));
}

// ---------------------------------------------------------------------------
// Belief-system internals
// ---------------------------------------------------------------------------

namespace {

// Pairs split by correlation strength. Weak pairs (rho below near_rho_min)
// use a second-order expansion of the conditional CDF around the marginal,
// which collapses each neighbour's contribution into a quadratic in own e
// shared across grid nodes; the truncation error is below 2e-9 per term and
// it is exact at rho == 0. Strong pairs evaluate Phi via a fine lookup table
// (step 2^-12, linear interpolation, max error < 2e-9).
constexpr double near_rho_min = 5e-4;
constexpr double rho_cap = 1.0 - 1e-12;

constexpr double table_lo = -8.5;
constexpr double table_inv_step = 4096.0;
constexpr int table_len = static_cast<int>(17 * 4096) + 1;

const std::vector<double>& phi_table() {
  static const std::vector<double> t = [] {
    std::vector<double> v(static_cast<std::size_t>(table_len));
    for (int i = 0; i < table_len; ++i)
      v[static_cast<std::size_t>(i)] = norm_cdf(table_lo + i / table_inv_step);
    return v;
  }();
  return t;
}

// u is the argument in table units: (z - table_lo) * table_inv_step.
inline double table_cdf(const double* t, double u) {
  if (u <= 0.0) return 0.0;
  if (u >= static_cast<double>(table_len - 1)) return 1.0;
  const int j = static_cast<int>(u);
  const double w = u - j;
  return t[j] + w * (t[j + 1] - t[j]);
}

struct NearEntry {
  int k = 0;
  double rho = 0.0;
  double inv_s = 0.0;  // 1 / sqrt(1 - rho^2)
};

struct FarEntry {
  int k = 0;
  double rho = 0.0;
};

// Per-region pair structure, reusable across repeated solves at the same
// (locations, phi): directed adjacency in CSR layout so each sweep can
// accumulate one output row per household independently.
struct RegionGraph {
  int n = 0;
  std::vector<std::size_t> near_off, far_off;
  std::vector<NearEntry> near;
  std::vector<FarEntry> far;
};

RegionGraph build_graph(const std::vector<Location>& locations, double phi) {
  RegionGraph g;
  g.n = static_cast<int>(locations.size());
  const auto n = static_cast<std::size_t>(g.n);

  std::vector<std::vector<NearEntry>> near_rows(n);
  std::vector<std::vector<FarEntry>> far_rows(n);
  for (std::size_t h = 0; h < n; ++h) {
    for (std::size_t k = h + 1; k < n; ++k) {
      const double rho = std::exp(-l1_distance(locations[h], locations[k]) / phi);
      if (rho >= near_rho_min) {
        const double r = std::min(rho, rho_cap);
        const double inv_s = 1.0 / std::sqrt(1.0 - r * r);
        near_rows[h].push_back({static_cast<int>(k), r, inv_s});
        near_rows[k].push_back({static_cast<int>(h), r, inv_s});
      } else {
        far_rows[h].push_back({static_cast<int>(k), rho});
        far_rows[k].push_back({static_cast<int>(h), rho});
      }
    }
  }

  g.near_off.assign(n + 1, 0);
  g.far_off.assign(n + 1, 0);
  for (std::size_t h = 0; h < n; ++h) {
    g.near_off[h + 1] = g.near_off[h] + near_rows[h].size();
    g.far_off[h + 1] = g.far_off[h] + far_rows[h].size();
  }
  g.near.reserve(g.near_off[n]);
  g.far.reserve(g.far_off[n]);
  for (std::size_t h = 0; h < n; ++h) {
    g.near.insert(g.near.end(), near_rows[h].begin(), near_rows[h].end());
    g.far.insert(g.far.end(), far_rows[h].begin(), far_rows[h].end());
  }
  return g;
}

// Crossing e* of the strictly increasing e -> base + alpha * psi(e) + e on a
// piecewise-linear row with flat tails; psi nondecreasing and alpha >= 0 make
// every segment slope >= 1, so the linear solve on the bracketing segment is
// the exact root of the interpolant.
double row_crossing(const double* psi, int g_len, double e0, double de, double base,
                    double alpha) {
  if (base + alpha * psi[0] + e0 >= 0.0) return -(base + alpha * psi[0]);
  const double e_last = e0 + de * (g_len - 1);
  if (base + alpha * psi[g_len - 1] + e_last < 0.0) return -(base + alpha * psi[g_len - 1]);

  int lo = 0, hi = g_len - 1;  // value(lo) < 0 <= value(hi)
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    const double gm = base + alpha * psi[mid] + (e0 + de * mid);
    if (gm >= 0.0)
      hi = mid;
    else
      lo = mid;
  }
  const double gl = base + alpha * psi[lo] + (e0 + de * lo);
  const double gh = base + alpha * psi[hi] + (e0 + de * hi);
  return (e0 + de * lo) - gl * de / (gh - gl);
}

struct SweepResult {
  double residual = 0.0;
  bool monotone = true;
};

// One operator application: psi_next = T[psi]. Parallel over output rows;
// accumulation order within a row is fixed by the CSR layout, so the result
// is independent of the worker count.
SweepResult apply_operator(const RegionGraph& graph, const Eigen::VectorXd& base_index,
                           double alpha, double e0, double de, int g_len,
                           const std::vector<double>& psi, std::vector<double>& psi_next,
                           std::vector<double>& estar, std::vector<double>& t1,
                           std::vector<double>& t2, std::vector<double>& t3) {
  const auto n = static_cast<std::size_t>(graph.n);
  const double* table = phi_table().data();

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const double es = row_crossing(psi.data() + k * static_cast<std::size_t>(g_len), g_len,
                                     e0, de, base_index(static_cast<Eigen::Index>(k)), alpha);
      estar[k] = es;
      if (es > 9.0) {
        t1[k] = 0.0;
        t2[k] = 0.0;
        t3[k] = 0.0;
      } else if (es < -9.0) {
        t1[k] = 1.0;
        t2[k] = 0.0;
        t3[k] = 0.0;
      } else {
        const double dens = norm_pdf(es);
        t1[k] = 1.0 - norm_cdf(es);
        t2[k] = dens;
        t3[k] = 0.5 * es * dens;
      }
    }
  });

  std::vector<double> row_residual(n, 0.0);
  std::vector<char> row_monotone(n, 1);
  const double inv_n = 1.0 / static_cast<double>(graph.n);

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(static_cast<std::size_t>(g_len));
    for (std::size_t h = begin; h < end; ++h) {
      // Own term through the marginal, plus the expanded weak pairs: the
      // row's weak-pair mass is A + B*e + C*e^2 with positive slope on the
      // grid (|e* rho e| stays far below 1), so it keeps the row monotone.
      double a = t1[h];
      double b = 0.0;
      double c = 0.0;
      for (std::size_t j = graph.far_off[h]; j < graph.far_off[h + 1]; ++j) {
        const FarEntry& fe = graph.far[j];
        const auto k = static_cast<std::size_t>(fe.k);
        const double r2 = fe.rho * fe.rho;
        a += t1[k] - t3[k] * r2;
        b += t2[k] * fe.rho;
        c += t3[k] * r2;
      }
      for (int i = 0; i < g_len; ++i) {
        const double e = e0 + de * i;
        acc[static_cast<std::size_t>(i)] = a + (b + c * e) * e;
      }

      for (std::size_t j = graph.near_off[h]; j < graph.near_off[h + 1]; ++j) {
        const NearEntry& ne = graph.near[j];
        const double z0 = (estar[static_cast<std::size_t>(ne.k)] - ne.rho * e0) * ne.inv_s;
        double u = (z0 - table_lo) * table_inv_step;
        const double du = ne.rho * de * ne.inv_s * table_inv_step;
        for (int i = 0; i < g_len; ++i) {
          acc[static_cast<std::size_t>(i)] += 1.0 - table_cdf(table, u);
          u -= du;
        }
      }

      double* out = psi_next.data() + h * static_cast<std::size_t>(g_len);
      const double* cur = psi.data() + h * static_cast<std::size_t>(g_len);
      double resid = 0.0;
      double prev = -1.0;
      for (int i = 0; i < g_len; ++i) {
        const double v = std::clamp(acc[static_cast<std::size_t>(i)] * inv_n, 0.0, 1.0);
        out[i] = v;
        resid = std::max(resid, std::abs(v - cur[i]));
        if (v < prev - 1e-12) row_monotone[h] = 0;
        prev = v;
      }
      row_residual[h] = resid;
    }
  });

  SweepResult r;
  for (std::size_t h = 0; h < n; ++h) {
    r.residual = std::max(r.residual, row_residual[h]);
    r.monotone = r.monotone && row_monotone[h] == 1;
  }
  return r;
}

// Zero-correlation scalar fixed point at the same base indices.
double scalar_fixed_point(const Eigen::VectorXd& base_index, double alpha) {
  const auto map = [&](double pi) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < base_index.size(); ++k)
      s += norm_cdf(base_index(k) + alpha * pi);
    return s / static_cast<double>(base_index.size());
  };
  return fixed_point_iterate(map, 0.5).value;
}

BeliefField solve_on_graph(const RegionGraph& graph, const Eigen::VectorXd& base_index,
                           double alpha, int g_len, double tol, int max_sweeps,
                           const std::vector<double>* warm_start) {
  const auto n = static_cast<std::size_t>(graph.n);
  const double e0 = -6.0;
  const double de = 12.0 / (g_len - 1);

  BeliefField field;
  field.pi_bar = scalar_fixed_point(base_index, alpha);

  std::vector<double> psi(n * static_cast<std::size_t>(g_len), field.pi_bar);
  if (warm_start != nullptr && warm_start->size() == psi.size()) psi = *warm_start;
  std::vector<double> psi_next(psi.size());
  std::vector<double> estar(n), t1(n), t2(n), t3(n);

  bool converged = false;
  int sweeps = 0;
  while (sweeps < max_sweeps) {
    const SweepResult sr =
        apply_operator(graph, base_index, alpha, e0, de, g_len, psi, psi_next, estar, t1, t2, t3);
    ++sweeps;
    psi.swap(psi_next);
    if (!sr.monotone)
      throw numerical_error("solve_conditional_beliefs: a belief row lost monotonicity");
    if (sr.residual < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "solve_conditional_beliefs: no convergence to " << tol << " after " << max_sweeps
        << " sweeps";
    throw solver_error(msg.str());
  }

  // Re-verify the fixed point with one further application and return that
  // surface, so the reported residual is a direct measurement on the output.
  const SweepResult check =
      apply_operator(graph, base_index, alpha, e0, de, g_len, psi, psi_next, estar, t1, t2, t3);
  psi.swap(psi_next);
  if (!check.monotone)
    throw numerical_error("solve_conditional_beliefs: a belief row lost monotonicity");
  if (check.residual >= tol)
    throw numerical_error("solve_conditional_beliefs: converged residual failed re-verification");

  field.residual = check.residual;
  field.sweeps = sweeps;
  field.e_grid = Eigen::VectorXd::LinSpaced(g_len, -6.0, 6.0);
  field.psi.resize(static_cast<Eigen::Index>(n), g_len);
  for (std::size_t h = 0; h < n; ++h)
    for (int i = 0; i < g_len; ++i)
      field.psi(static_cast<Eigen::Index>(h), i) = psi[h * static_cast<std::size_t>(g_len) +
                                                       static_cast<std::size_t>(i)];
  return field;
}

}  // namespace

BeliefField solve_conditional_beliefs(const std::vector<Location>& locations,
                                      const Eigen::VectorXd& base_index, double alpha,
                                      double phi, int e_grid_size, double tol,
                                      int max_sweeps) {
  if (locations.empty()) throw input_error("solve_conditional_beliefs: no locations");
  if (base_index.size() != static_cast<Eigen::Index>(locations.size()))
    throw input_error("solve_conditional_beliefs: base_index length must match locations");
  if (!(alpha >= 0.0)) throw input_error("solve_conditional_beliefs: alpha must be >= 0");
  if (!(phi > 0.0)) throw input_error("solve_conditional_beliefs: phi must be > 0");
  if (e_grid_size < 3) throw input_error("solve_conditional_beliefs: e_grid_size must be >= 3");
  if (!(tol > 0.0)) throw input_error("solve_conditional_beliefs: tol must be > 0");

  const RegionGraph graph = build_graph(locations, phi);
  return solve_on_graph(graph, base_index, alpha, e_grid_size, tol, max_sweeps, nullptr);
}

double belief_crossing(const BeliefField& field, int h, double base_index_h, double alpha) {
  if (h < 0 || h >= field.psi.rows()) throw input_error("belief_crossing: household out of range");
  if (field.psi.cols() != field.e_grid.size() || field.e_grid.size() < 2)
    throw input_error("belief_crossing: malformed belief field");
  const auto g_len = static_cast<int>(field.e_grid.size());
  std::vector<double> row(static_cast<std::size_t>(g_len));
  for (int i = 0; i < g_len; ++i) row[static_cast<std::size_t>(i)] = field.psi(h, i);
  const double e0 = field.e_grid(0);
  const double de = (field.e_grid(g_len - 1) - e0) / (g_len - 1);
  return row_crossing(row.data(), g_len, e0, de, base_index_h, alpha);
}

double sd_choice_probability(const BeliefField& field, int h, double base_index_h,
                             double alpha) {
  return 1.0 - norm_cdf(belief_crossing(field, h, base_index_h, alpha));
}

// ---------------------------------------------------------------------------
// Simulators
// ---------------------------------------------------------------------------

std::vector<double> default_price_menu() {
  std::vector<double> menu(22);
  for (int j = 0; j < 22; ++j) menu[static_cast<std::size_t>(j)] = 300.0 * j / 21.0;
  return menu;
}

namespace {

const std::vector<std::string> kCovariateNames = {"children", "female_edu"};

// Shared household-trait draw: price from the menu, log-normal wealth around
// the experiment's scale, small-integer child count, years of schooling.
Household draw_household(std::mt19937_64& rng, const std::vector<double>& menu,
                         long long id, int village_id) {
  Household h;
  h.id = id;
  h.village_id = village_id;
  std::uniform_int_distribution<std::size_t> pick(0, menu.size() - 1);
  h.price = menu[pick(rng)];
  std::normal_distribution<double> gauss(0.0, 1.0);
  h.wealth = std::exp(8.0 + 0.8 * gauss(rng));
  h.covariates.resize(2);
  std::uniform_int_distribution<int> kids(0, 5);
  h.covariates(0) = kids(rng);
  std::uniform_real_distribution<double> edu(0.0, 12.0);
  h.covariates(1) = edu(rng);
  return h;
}

std::vector<double> resolve_menu(const std::vector<double>& menu) {
  if (menu.empty()) return default_price_menu();
  for (double p : menu)
    if (!(p >= 0.0) || !std::isfinite(p)) throw input_error("price menu: prices must be finite and >= 0");
  return menu;
}

}  // namespace

Dataset simulate_game(const IndexParams& params, int n_villages, int n_per_village,
                      std::uint64_t seed, const std::vector<double>& price_menu) {
  if (n_villages < 1) throw input_error("simulate_game: n_villages must be >= 1");
  if (n_per_village < 1) throw input_error("simulate_game: n_per_village must be >= 1");
  const std::vector<double> menu = resolve_menu(price_menu);

  Dataset data;
  data.covariate_names = kCovariateNames;
  data.villages.reserve(static_cast<std::size_t>(n_villages));
  for (int v = 1; v <= n_villages; ++v) {
    auto rng = substream(seed, static_cast<std::uint64_t>(v));
    Village vil;
    vil.id = v;
    vil.total_households = n_per_village;
    vil.households.reserve(static_cast<std::size_t>(n_per_village));
    for (int i = 0; i < n_per_village; ++i)
      vil.households.push_back(
          draw_household(rng, menu, static_cast<long long>(v) * 100000 + i, v));

    const double pi =
        fixed_point_iterate(
            [&](double p) {
              return village_take_up_rhs(vil, params, [](const Household& h) { return h.price; },
                                         p);
            },
            0.5)
            .value;

    const double xi = params.intercepts.value_for(v);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (auto& h : vil.households)
      h.outcome = u01(rng) < demand_probability(params, h.price, h.wealth, h.covariates, pi, xi)
                      ? 1
                      : 0;
    data.villages.push_back(std::move(vil));
  }
  return data;
}

Dataset simulate_game(const SpatialConfig& config, const IndexParams& params, int n_villages,
                      const std::vector<double>& price_menu) {
  config.validate();
  if (n_villages < 1) throw input_error("simulate_game: n_villages must be >= 1");
  if (params.error != ErrorDist::probit)
    throw input_error("simulate_game: the spatial design requires probit errors");
  const std::vector<double> menu = resolve_menu(price_menu);

  Dataset data;
  data.covariate_names = kCovariateNames;
  data.villages.reserve(static_cast<std::size_t>(n_villages));
  for (int v = 1; v <= n_villages; ++v) {
    // Independent per-village streams for locations, the error field and the
    // household traits, each derived from the master seed.
    SpatialConfig cfg_v = config;
    cfg_v.seed = substream(config.seed, 3 * static_cast<std::uint64_t>(v))();
    const std::uint64_t field_seed = substream(config.seed, 3 * static_cast<std::uint64_t>(v) + 1)();
    auto trait_rng = substream(config.seed, 3 * static_cast<std::uint64_t>(v) + 2);

    const std::vector<Location> locations = sample_region(cfg_v);
    const Eigen::VectorXd eps = sample_gp(locations, config.phi, field_seed);

    Village vil;
    vil.id = v;
    vil.total_households = config.n_households;
    vil.households.reserve(locations.size());
    const double xi = params.intercepts.value_for(v);
    Eigen::VectorXd base(static_cast<Eigen::Index>(locations.size()));
    for (std::size_t i = 0; i < locations.size(); ++i) {
      Household h = draw_household(trait_rng, menu,
                                   static_cast<long long>(v) * 100000 + static_cast<long long>(i), v);
      h.loc_x = locations[i].x;
      h.loc_y = locations[i].y;
      h.has_location = true;
      base(static_cast<Eigen::Index>(i)) =
          linear_index(params, h.price, h.wealth, h.covariates, 0.0, xi);
      vil.households.push_back(std::move(h));
    }

    const BeliefField field =
        solve_conditional_beliefs(locations, base, params.alpha, config.phi);
    for (std::size_t i = 0; i < locations.size(); ++i) {
      const double cross = belief_crossing(field, static_cast<int>(i),
                                           base(static_cast<Eigen::Index>(i)), params.alpha);
      vil.households[i].outcome = eps(static_cast<Eigen::Index>(i)) >= cross ? 1 : 0;
    }
    data.villages.push_back(std::move(vil));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Convergence experiment
// ---------------------------------------------------------------------------

std::vector<ConvergenceRow> convergence_study(const std::vector<int>& n_list, int seeds,
                                              double phi, const IndexParams& params,
                                              double density_c, std::uint64_t seed,
                                              const std::vector<double>& price_menu) {
  if (n_list.empty()) throw input_error("convergence_study: empty size list");
  for (std::size_t i = 1; i < n_list.size(); ++i)
    if (n_list[i] <= n_list[i - 1])
      throw input_error("convergence_study: sizes must be strictly increasing");
  if (seeds < 10)
    throw input_error("convergence_study: needs >= 10 seeds for stable deviation averages");
  if (params.error != ErrorDist::probit)
    throw input_error("convergence_study: the spatial design requires probit errors");
  const std::vector<double> menu = resolve_menu(price_menu);

  std::vector<ConvergenceRow> rows;
  rows.reserve(n_list.size());
  for (std::size_t r = 0; r < n_list.size(); ++r) {
    ConvergenceRow row;
    row.n = n_list[r];
    row.seeds = seeds;

    double mean_acc = 0.0;
    double sup_acc = 0.0;
    for (int s = 0; s < seeds; ++s) {
      SpatialConfig cfg;
      cfg.n_households = row.n;
      cfg.density_c = density_c;
      cfg.phi = phi;
      cfg.seed = substream(seed, (r << 32) + 2 * static_cast<std::uint64_t>(s))();
      row.lambda = cfg.side();

      auto trait_rng = substream(seed, (r << 32) + 2 * static_cast<std::uint64_t>(s) + 1);
      const std::vector<Location> locations = sample_region(cfg);
      Eigen::VectorXd base(static_cast<Eigen::Index>(locations.size()));
      const double xi = params.intercepts.value_for(1);
      for (std::size_t i = 0; i < locations.size(); ++i) {
        const Household h = draw_household(trait_rng, menu, static_cast<long long>(i), 1);
        base(static_cast<Eigen::Index>(i)) =
            linear_index(params, h.price, h.wealth, h.covariates, 0.0, xi);
      }

      const BeliefField field = solve_conditional_beliefs(locations, base, params.alpha, phi);

      const auto g_len = static_cast<int>(field.e_grid.size());
      double wsum = 0.0;
      std::vector<double> w(static_cast<std::size_t>(g_len));
      for (int i = 0; i < g_len; ++i) {
        double wi = norm_pdf(field.e_grid(i));
        if (i == 0 || i == g_len - 1) wi *= 0.5;  // trapezoid ends
        w[static_cast<std::size_t>(i)] = wi;
        wsum += wi;
      }

      double mean_dev = 0.0;
      double sup_dev = 0.0;
      for (Eigen::Index h = 0; h < field.psi.rows(); ++h)
        for (int i = 0; i < g_len; ++i) {
          const double dev = std::abs(field.psi(h, i) - field.pi_bar);
          mean_dev += w[static_cast<std::size_t>(i)] * dev;
          sup_dev = std::max(sup_dev, dev);
        }
      mean_dev /= wsum * static_cast<double>(field.psi.rows());

      mean_acc += mean_dev;
      sup_acc += sup_dev;
    }
    row.mean_abs_dev = mean_acc / seeds;
    row.sup_dev = sup_acc / seeds;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Spatial-diffusion MLE
// ---------------------------------------------------------------------------

namespace {

struct SdVillage {
  int id = 0;
  RegionGraph graph;
  Eigen::MatrixXd regressors;  // standardized [price, wealth, covariates...]
  std::vector<int> outcomes;   // -1 marks a non-participant (field only)
  std::vector<double> warm;    // last converged surface, reused across evaluations
};

struct SdProblem {
  std::vector<SdVillage> villages;
  int n_base = 0;      // 2 + covariates
  int dim = 0;         // n_base + 1 (alpha) + intercept block
  bool pooled = true;  // one shared intercept vs one per village
  int g_len = 129;
  Eigen::VectorXd mu, sd;  // standardization of the regressor columns
  std::vector<std::string> names;

  [[nodiscard]] int alpha_index() const { return n_base; }
  [[nodiscard]] int xi_index(std::size_t v) const {
    return pooled ? n_base + 1 : n_base + 1 + static_cast<int>(v);
  }
};

// Standardized log-likelihood; -inf when the belief system refuses the
// parameter point (negative alpha or a non-contracting sweep), which makes
// the line search back off rather than abort the fit.
double sd_loglik(SdProblem& prob, const Eigen::VectorXd& theta) {
  const double alpha = theta(prob.alpha_index());
  if (alpha < 0.0) return -std::numeric_limits<double>::infinity();

  double ll = 0.0;
  for (std::size_t v = 0; v < prob.villages.size(); ++v) {
    SdVillage& vil = prob.villages[v];
    const Eigen::VectorXd base =
        (vil.regressors * theta.head(prob.n_base)).array() + theta(prob.xi_index(v));

    BeliefField field;
    try {
      field = solve_on_graph(vil.graph, base, alpha, prob.g_len, 1e-12, 5000,
                             vil.warm.empty() ? nullptr : &vil.warm);
    } catch (const solver_error&) {
      return -std::numeric_limits<double>::infinity();
    } catch (const numerical_error&) {
      // A sweep the solver cannot certify (e.g. oscillation outside the
      // contraction region) marks the parameter point infeasible.
      return -std::numeric_limits<double>::infinity();
    }
    // MatrixXd is column-major; the warm start uses the row-major sweep layout.
    vil.warm.resize(static_cast<std::size_t>(field.psi.size()));
    for (Eigen::Index h = 0; h < field.psi.rows(); ++h)
      for (Eigen::Index i = 0; i < field.psi.cols(); ++i)
        vil.warm[static_cast<std::size_t>(h * field.psi.cols() + i)] = field.psi(h, i);

    for (std::size_t h = 0; h < vil.outcomes.size(); ++h) {
      if (vil.outcomes[h] < 0) continue;
      const double cross = belief_crossing(field, static_cast<int>(h),
                                           base(static_cast<Eigen::Index>(h)), alpha);
      ll += vil.outcomes[h] == 1 ? log_cdf(ErrorDist::probit, -cross)
                                 : log_cdf(ErrorDist::probit, cross);
    }
  }
  return ll;
}

// Central differences, falling back to one-sided ones against the alpha >= 0
// wall (an infeasible probe reports -inf, never a poisoned quotient).
Eigen::VectorXd sd_gradient(SdProblem& prob, const Eigen::VectorXd& theta, double step,
                            double ll_center) {
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double h = step * std::max(1.0, std::abs(theta(j)));
    Eigen::VectorXd up = theta, dn = theta;
    up(j) += h;
    dn(j) -= h;
    const double fu = sd_loglik(prob, up);
    const double fd = sd_loglik(prob, dn);
    if (std::isfinite(fu) && std::isfinite(fd))
      g(j) = (fu - fd) / (2.0 * h);
    else if (std::isfinite(fu))
      g(j) = (fu - ll_center) / h;
    else if (std::isfinite(fd))
      g(j) = (ll_center - fd) / h;
    else
      g(j) = 0.0;
  }
  return g;
}

// Sup-norm of the gradient with the alpha coordinate masked when it presses
// against the alpha >= 0 boundary from inside.
// Symmetrized finite-difference Hessian of the standardized log likelihood,
// one-sided in the interaction coordinate when the step would cross zero.
Eigen::MatrixXd sd_fd_hessian(SdProblem& prob, const Eigen::VectorXd& theta,
                              const Eigen::VectorXd& g, double fd_step, int ia) {
  const double hstep = 1e-3;
  Eigen::MatrixXd hess(prob.dim, prob.dim);
  std::vector<Eigen::VectorXd> grads(static_cast<std::size_t>(prob.dim));
  for (int j = 0; j < prob.dim; ++j) {
    const double h = hstep * std::max(1.0, std::abs(theta(j)));
    Eigen::VectorXd up = theta, dn = theta;
    up(j) += h;
    dn(j) -= h;
    const Eigen::VectorXd gu = sd_gradient(prob, up, fd_step, sd_loglik(prob, up));
    if (j == ia && dn(j) < 0.0) {
      grads[static_cast<std::size_t>(j)] = (gu - g) / h;  // one-sided at the wall
    } else {
      const Eigen::VectorXd gd = sd_gradient(prob, dn, fd_step, sd_loglik(prob, dn));
      grads[static_cast<std::size_t>(j)] = (gu - gd) / (2.0 * h);
    }
  }
  for (int i = 0; i < prob.dim; ++i)
    for (int j = 0; j < prob.dim; ++j)
      hess(i, j) = 0.5 * (grads[static_cast<std::size_t>(i)](j) +
                          grads[static_cast<std::size_t>(j)](i));
  return hess;
}

double sd_masked_inf(const Eigen::VectorXd& g, const Eigen::VectorXd& theta, int ia) {
  double m = 0.0;
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    if (j == ia && theta(j) <= 1e-12 && g(j) < 0.0) continue;
    m = std::max(m, std::abs(g(j)));
  }
  return m;
}

}  // namespace

FitResult fit_sd(const Dataset& data, const IndexParams& init, double phi, double grad_tol,
                 int e_grid_size) {
  if (init.error != ErrorDist::probit) throw input_error("fit_sd: probit errors required");
  if (!(phi > 0.0)) throw input_error("fit_sd: phi must be > 0");
  if (e_grid_size < 3) throw input_error("fit_sd: e_grid_size must be >= 3");
  if (data.villages.empty()) throw input_error("fit_sd: no villages");
  const int n_cov = static_cast<int>(data.covariate_names.size());
  if (init.c3.size() != n_cov)
    throw input_error("fit_sd: init.c3 length must match the dataset covariates");

  SdProblem prob;
  prob.n_base = 2 + n_cov;
  prob.g_len = e_grid_size;

  // Standardize the regressor columns over participants, as the other
  // estimators do, so finite differences see comparably scaled coordinates.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(prob.n_base);
  Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(prob.n_base);
  long long n_obs = 0;
  for (const auto& v : data.villages)
    for (const auto& h : v.households) {
      if (h.covariates.size() != n_cov)
        throw input_error("fit_sd: household " + std::to_string(h.id) +
                          " has the wrong covariate count");
      if (!h.participant) continue;
      Eigen::VectorXd x(prob.n_base);
      x(0) = h.price;
      x(1) = h.wealth;
      x.tail(n_cov) = h.covariates;
      sum += x;
      sumsq += x.cwiseProduct(x);
      ++n_obs;
    }
  if (n_obs < prob.n_base + 2) throw input_error("fit_sd: too few participant households");
  prob.mu = sum / static_cast<double>(n_obs);
  prob.sd = (sumsq / static_cast<double>(n_obs) - prob.mu.cwiseProduct(prob.mu))
                .cwiseMax(0.0)
                .cwiseSqrt();
  for (int j = 0; j < prob.n_base; ++j)
    if (prob.sd(j) < 1e-12)
      throw input_error("fit_sd: regressor column " + std::to_string(j) + " is constant");

  std::vector<int> ids;
  ids.reserve(data.villages.size());
  for (const auto& v : data.villages) ids.push_back(v.id);
  std::sort(ids.begin(), ids.end());

  // The intercept block follows the init parameters: a pooled block fits one
  // shared constant (the cross-village belief contrast then identifies alpha
  // exactly as in the fixed-effect-homogeneity logic), a per-village block
  // fits one effect per village and leaves alpha to the within-village
  // surface variation.
  prob.pooled = init.intercepts.is_pooled();
  prob.names = {"price", "wealth"};
  for (const auto& c : data.covariate_names) prob.names.push_back(c);
  prob.names.emplace_back("alpha");
  if (prob.pooled)
    prob.names.emplace_back("const");
  else
    for (int id : ids) prob.names.push_back("xi_" + std::to_string(id));
  prob.dim = static_cast<int>(prob.names.size());

  prob.villages.reserve(ids.size());
  for (int id : ids) {
    const Village* v = data.find_village(id);
    SdVillage sv;
    sv.id = id;
    const auto n = static_cast<Eigen::Index>(v->households.size());
    if (n == 0) throw input_error("fit_sd: village " + std::to_string(id) + " is empty");
    std::vector<Location> locs(static_cast<std::size_t>(n));
    sv.regressors.resize(n, prob.n_base);
    sv.outcomes.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const Household& h = v->households[static_cast<std::size_t>(i)];
      if (!h.has_location)
        throw input_error("fit_sd: household " + std::to_string(h.id) + " has no location");
      locs[static_cast<std::size_t>(i)] = {h.loc_x, h.loc_y};
      sv.regressors(i, 0) = (h.price - prob.mu(0)) / prob.sd(0);
      sv.regressors(i, 1) = (h.wealth - prob.mu(1)) / prob.sd(1);
      for (int j = 0; j < n_cov; ++j)
        sv.regressors(i, 2 + j) = (h.covariates(j) - prob.mu(2 + j)) / prob.sd(2 + j);
      sv.outcomes[static_cast<std::size_t>(i)] = h.participant ? h.outcome : -1;
    }
    sv.graph = build_graph(locs, phi);
    prob.villages.push_back(std::move(sv));
  }

  // Starting point: init mapped into the standardized basis.
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(prob.dim);
  theta(0) = init.c1 * prob.sd(0);
  theta(1) = init.c2 * prob.sd(1);
  for (int j = 0; j < n_cov; ++j) theta(2 + j) = init.c3(j) * prob.sd(2 + j);
  theta(prob.alpha_index()) = std::max(init.alpha, 0.0);
  double mean_shift = init.c1 * prob.mu(0) + init.c2 * prob.mu(1);
  for (int j = 0; j < n_cov; ++j) mean_shift += init.c3(j) * prob.mu(2 + j);
  if (prob.pooled)
    theta(prob.xi_index(0)) = init.intercepts.c0() + mean_shift;
  else
    for (std::size_t v = 0; v < prob.villages.size(); ++v)
      theta(prob.xi_index(v)) = init.intercepts.value_for(prob.villages[v].id) + mean_shift;

  const int ia = prob.alpha_index();
  const auto project = [ia](Eigen::VectorXd th) {
    th(ia) = std::max(th(ia), 0.0);
    return th;
  };

  const double fd_step = 1e-4;
  theta = project(theta);
  double ll = sd_loglik(prob, theta);
  if (!std::isfinite(ll)) throw input_error("fit_sd: initial parameters are infeasible");
  Eigen::VectorXd g = sd_gradient(prob, theta, fd_step, ll);

  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(prob.dim, prob.dim);
  bool scaled = false;
  double h0_scale = 1.0;
  bool fresh = true;
  bool converged = sd_masked_inf(g, theta, ia) < grad_tol;
  const int max_iter = 300;
  for (int iter = 0; iter < max_iter && !converged; ++iter) {
    Eigen::VectorXd dir = hinv * g;  // ascent direction
    if (g.dot(dir) <= 0.0) {
      hinv.setIdentity();
      dir = g;
    }

    double t = 1.0;
    Eigen::VectorXd theta_new;
    double ll_new = -std::numeric_limits<double>::infinity();
    bool stepped = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      theta_new = project(theta + t * dir);
      const Eigen::VectorXd s = theta_new - theta;
      if (s.squaredNorm() == 0.0) break;
      ll_new = sd_loglik(prob, theta_new);
      if (std::isfinite(ll_new) && ll_new >= ll + 1e-4 * g.dot(s)) {
        stepped = true;
        break;
      }
    }
    if (!stepped) {
      // A failed search along a quasi-Newton direction usually means a stale
      // curvature model; retry once from a fresh diagonal before giving up.
      if (fresh) break;
      hinv = h0_scale * Eigen::MatrixXd::Identity(prob.dim, prob.dim);
      fresh = true;
      continue;
    }

    const Eigen::VectorXd g_new = sd_gradient(prob, theta_new, fd_step, ll_new);
    const Eigen::VectorXd s = theta_new - theta;
    const Eigen::VectorXd yk = g - g_new;  // minimizing -ll
    const double sy = s.dot(yk);
    if (sy > 1e-12) {
      if (!scaled) {
        // Rescale the initial curvature model to the first observed pair so
        // step lengths start at the right order of magnitude.
        h0_scale = sy / yk.squaredNorm();
        hinv = h0_scale * Eigen::MatrixXd::Identity(prob.dim, prob.dim);
        scaled = true;
      }
      const Eigen::VectorXd hy = hinv * yk;
      hinv += ((sy + yk.dot(hy)) / (sy * sy)) * (s * s.transpose()) -
              (hy * s.transpose() + s * hy.transpose()) / sy;
      fresh = false;
    }
    theta = theta_new;
    ll = ll_new;
    g = g_new;
    converged = sd_masked_inf(g, theta, ia) < grad_tol;
  }
  // Quasi-Newton progress can stall on a narrow ridge; finish with damped
  // Newton steps on the finite-difference curvature before giving up.
  for (int round = 0; round < 8 && !converged; ++round) {
    const Eigen::MatrixXd hess = sd_fd_hessian(prob, theta, g, fd_step, ia);
    Eigen::VectorXd dir;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(-hess);
    bool newton_ok = ldlt.info() == Eigen::Success;
    if (newton_ok) {
      dir = ldlt.solve(g);
      newton_ok = dir.allFinite() && g.dot(dir) > 0.0;
    }
    if (!newton_ok) dir = g;

    double t = 1.0;
    Eigen::VectorXd theta_new;
    double ll_new = -std::numeric_limits<double>::infinity();
    bool stepped = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      theta_new = project(theta + t * dir);
      const Eigen::VectorXd s = theta_new - theta;
      if (s.squaredNorm() == 0.0) break;
      ll_new = sd_loglik(prob, theta_new);
      if (std::isfinite(ll_new) && ll_new >= ll + 1e-4 * g.dot(s)) {
        stepped = true;
        break;
      }
    }
    if (!stepped) break;
    theta = theta_new;
    ll = ll_new;
    g = sd_gradient(prob, theta, fd_step, ll);
    converged = sd_masked_inf(g, theta, ia) < grad_tol;
  }
  if (!converged)
    throw solver_error("fit_sd: optimizer failed to reach the gradient tolerance");

  // Observed-information standard errors from a finite-difference Hessian of
  // the standardized likelihood, mapped to the raw basis.
  const Eigen::MatrixXd hess = sd_fd_hessian(prob, theta, g, fd_step, ia);

  // Affine map raw <- standardized: c_raw = c_std / sd, alpha unchanged,
  // xi_raw = xi_std - sum_j c_std_j mu_j / sd_j.
  Eigen::MatrixXd to_raw = Eigen::MatrixXd::Identity(prob.dim, prob.dim);
  for (int j = 0; j < prob.n_base; ++j) to_raw(j, j) = 1.0 / prob.sd(j);
  for (std::size_t v = 0; v < prob.villages.size(); ++v)
    for (int j = 0; j < prob.n_base; ++j)
      to_raw(prob.xi_index(v), j) = -prob.mu(j) / prob.sd(j);

  FitResult out;
  out.names = prob.names;
  out.coefficients = to_raw * theta;
  out.loglik = ll;
  out.gradient_norm = g.norm();
  out.converged = true;

  out.covariance = Eigen::MatrixXd::Constant(prob.dim, prob.dim,
                                             std::numeric_limits<double>::quiet_NaN());
  out.std_errors = Eigen::VectorXd::Constant(prob.dim, std::numeric_limits<double>::quiet_NaN());
  const Eigen::LLT<Eigen::MatrixXd> llt(-hess);
  if (llt.info() == Eigen::Success) {
    const Eigen::MatrixXd cov_std = llt.solve(Eigen::MatrixXd::Identity(prob.dim, prob.dim));
    out.covariance = to_raw * cov_std * to_raw.transpose();
    out.std_errors = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  }

  out.params = init;
  out.params.error = ErrorDist::probit;
  out.params.c1 = out.coefficients(0);
  out.params.c2 = out.coefficients(1);
  out.params.c3.resize(n_cov);
  for (int j = 0; j < n_cov; ++j) out.params.c3(j) = out.coefficients(2 + j);
  out.params.alpha = out.coefficients(prob.alpha_index());
  std::map<int, double> xi;
  for (std::size_t v = 0; v < prob.villages.size(); ++v)
    xi[prob.villages[v].id] = out.coefficients(prob.xi_index(v));
  out.params.intercepts = prob.pooled ? Intercepts::pooled(out.coefficients(prob.xi_index(0)))
                                      : Intercepts::per_village(xi);
  out.village_intercepts = xi;

  // Record the zero-correlation fixed point per village at the optimum as
  // the belief summary (the spatial analogue of the scalar pi_hat).
  for (std::size_t v = 0; v < prob.villages.size(); ++v) {
    SdVillage& vil = prob.villages[v];
    const Eigen::VectorXd base =
        (vil.regressors * theta.head(prob.n_base)).array() + theta(prob.xi_index(v));
    out.beliefs[vil.id] = scalar_fixed_point(base, theta(prob.alpha_index()));
  }
  return out;
}

}  // namespace takeup
