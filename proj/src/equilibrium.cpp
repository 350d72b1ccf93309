#include "takeup/equilibrium.hpp"

#include "takeup/demand.hpp"
#include "takeup/dist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace takeup {

namespace {

// Bisection on g(x) = x - map(x) over [lo, hi]. Returns a result with
// converged=true when |g| drops below tol; otherwise converged=false with the
// best point seen. eval_count accumulates map evaluations.
FixedPointResult bisect_root(const std::function<double(double)>& map, double lo, double hi,
                             const FixedPointOptions& opts, int eval_count) {
  auto g = [&](double x) { return x - map(x); };

  double glo = g(lo);
  double ghi = g(hi);
  eval_count += 2;

  FixedPointResult out;
  out.used_bisection = true;

  if (glo == 0.0) {
    out.value = lo;
    out.residual = 0.0;
    out.iterations = eval_count;
    out.converged = true;
    return out;
  }
  if (ghi == 0.0) {
    out.value = hi;
    out.residual = 0.0;
    out.iterations = eval_count;
    out.converged = true;
    return out;
  }
  if (glo * ghi > 0.0) {
    // A map into [0,1] always brackets; reaching here means the map escapes
    // the unit interval.
    out.value = std::abs(glo) < std::abs(ghi) ? lo : hi;
    out.residual = -(std::abs(glo) < std::abs(ghi) ? glo : ghi);
    out.iterations = eval_count;
    out.converged = false;
    return out;
  }

  double mid = lo, gmid = glo;
  for (int i = 0; i < opts.bisect_max_iter; ++i) {
    mid = 0.5 * (lo + hi);
    gmid = g(mid);
    ++eval_count;
    if (std::abs(gmid) < opts.tol) {
      out.value = mid;
      out.residual = -gmid;
      out.iterations = eval_count;
      out.converged = true;
      return out;
    }
    if ((gmid > 0.0) == (ghi > 0.0)) {
      hi = mid;
      ghi = gmid;
    } else {
      lo = mid;
      glo = gmid;
    }
  }
  out.value = mid;
  out.residual = -gmid;
  out.iterations = eval_count;
  out.converged = false;
  return out;
}

}  // namespace

FixedPointResult fixed_point_iterate(const std::function<double(double)>& map, double init,
                                     const FixedPointOptions& opts) {
  if (!(opts.damping > 0.0 && opts.damping <= 1.0))
    throw input_error("fixed_point_iterate: damping must lie in (0, 1]");
  if (opts.max_iter < 1) throw input_error("fixed_point_iterate: max_iter must be >= 1");

  double x = std::clamp(init, 0.0, 1.0);
  double best = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  int evals = 0;

  for (int it = 0; it < opts.max_iter; ++it) {
    const double m = map(x);
    ++evals;
    const double r = m - x;
    if (std::abs(r) < opts.tol) {
      FixedPointResult out;
      out.value = x;
      out.residual = r;
      out.iterations = evals;
      out.converged = true;
      return out;
    }

    // Stall detection: the best residual must shrink by at least 1% every
    // 50 iterations, otherwise the map is oscillating or creeping and
    // bisection will finish the job faster.
    if (std::abs(r) < 0.99 * best) {
      best = std::abs(r);
      since_improvement = 0;
    } else if (++since_improvement >= 50) {
      break;  // oscillating or creeping: hand over to bisection
    }

    x = std::clamp((1.0 - opts.damping) * x + opts.damping * m, 0.0, 1.0);
  }

  FixedPointResult out = bisect_root(map, 0.0, 1.0, opts, evals);
  if (!out.converged)
    throw solver_error("fixed_point_iterate: iteration and bisection both failed; last residual " +
                       std::to_string(out.residual));
  return out;
}

double village_take_up_rhs(const Village& village, const IndexParams& params,
                           const std::function<double(const Household&)>& price_of, double pi) {
  const double intercept = params.intercepts.value_for(village.id);
  double sum = 0.0;
  long long n = 0;
  for (const auto& h : village.households) {
    if (!h.participant) continue;
    sum += demand_probability(params, price_of(h), h.wealth, h.covariates, pi, intercept);
    ++n;
  }
  if (n == 0)
    throw input_error("village_take_up_rhs: village " + std::to_string(village.id) +
                      " has no participant households");
  return sum / static_cast<double>(n);
}

namespace {

FixedPointResult solve_with_prices(const Village& village, const IndexParams& params,
                                   const std::function<double(const Household&)>& price_of,
                                   const FixedPointOptions& opts) {
  auto rhs = [&](double pi) { return village_take_up_rhs(village, params, price_of, pi); };
  return fixed_point_iterate(rhs, 0.5, opts);
}

}  // namespace

FixedPointResult solve_pi_baseline(const Village& village, const IndexParams& params, double p0,
                                   const FixedPointOptions& opts) {
  return solve_with_prices(
      village, params, [p0](const Household&) { return p0; }, opts);
}

FixedPointResult solve_pi_policy(const Village& village, const IndexParams& params,
                                 const PolicyScenario& scenario, const FixedPointOptions& opts) {
  return solve_with_prices(
      village, params,
      [&scenario](const Household& h) { return scenario.eligible(h.wealth) ? scenario.p1 : scenario.p0; },
      opts);
}

UniquenessReport uniqueness_scan(const Village& village, const IndexParams& params,
                                 const std::function<double(const Household&)>& price_of,
                                 int grid_size, double root_tol) {
  if (grid_size < 3) throw input_error("uniqueness_scan: grid_size must be >= 3");

  auto g = [&](double pi) { return pi - village_take_up_rhs(village, params, price_of, pi); };

  UniquenessReport report;
  report.objective_grid.reserve(static_cast<std::size_t>(grid_size));

  std::vector<double> gvals(static_cast<std::size_t>(grid_size));
  const double step = 1.0 / static_cast<double>(grid_size - 1);
  for (int i = 0; i < grid_size; ++i) {
    const double pi = static_cast<double>(i) * step;
    gvals[static_cast<std::size_t>(i)] = g(pi);
    const double gv = gvals[static_cast<std::size_t>(i)];
    report.objective_grid.emplace_back(pi, gv * gv);
  }

  auto push_root = [&](double root, double gval) {
    if (gval * gval >= root_tol * root_tol) return;
    if (!report.roots.empty() && std::abs(report.roots.back() - root) < step * 1e-6) return;
    report.roots.push_back(root);
  };

  for (int i = 0; i + 1 < grid_size; ++i) {
    const double a = static_cast<double>(i) * step;
    const double b = static_cast<double>(i + 1) * step;
    double ga = gvals[static_cast<std::size_t>(i)];
    double gb = gvals[static_cast<std::size_t>(i + 1)];

    if (ga == 0.0) {
      push_root(a, 0.0);
      continue;
    }
    if (i + 2 == grid_size && gb == 0.0) {
      push_root(b, 0.0);
      continue;
    }
    if (ga * gb >= 0.0) continue;

    double lo = a, hi = b, glo = ga, ghi = gb;
    double mid = lo, gmid = glo;
    for (int it = 0; it < 200; ++it) {
      mid = 0.5 * (lo + hi);
      gmid = g(mid);
      if (std::abs(gmid) < 0.01 * root_tol) break;
      if ((gmid > 0.0) == (ghi > 0.0)) {
        hi = mid;
        ghi = gmid;
      } else {
        lo = mid;
        glo = gmid;
      }
    }
    push_root(mid, gmid);
  }

  std::sort(report.roots.begin(), report.roots.end());
  return report;
}

UniquenessReport uniqueness_scan(const Village& village, const IndexParams& params, double p0,
                                 int grid_size, double root_tol) {
  return uniqueness_scan(
      village, params, [p0](const Household&) { return p0; }, grid_size, root_tol);
}

UniquenessReport uniqueness_scan(const Village& village, const IndexParams& params,
                                 const PolicyScenario& scenario, int grid_size, double root_tol) {
  return uniqueness_scan(
      village, params,
      [&scenario](const Household& h) { return scenario.eligible(h.wealth) ? scenario.p1 : scenario.p0; },
      grid_size, root_tol);
}

bool contraction_holds(double alpha, ErrorDist error) {
  return std::abs(alpha) * sup_density(error) < 1.0;
}

double contraction_margin(double alpha, ErrorDist error) {
  return contraction_bound(error) - std::abs(alpha);
}

}  // namespace takeup
