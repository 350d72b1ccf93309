// Shared fixtures for the test suites: small hand-built villages, a generator
// for random synthetic villages with a contraction-satisfying parameter draw,
// and an IID data-generating process with equilibrium beliefs.
#pragma once

#include "takeup/dist.hpp"
#include "takeup/equilibrium.hpp"
#include "takeup/rng.hpp"
#include "takeup/types.hpp"

#include <random>
#include <vector>

namespace testutil {

inline takeup::Household make_household(long long id, int village_id, double price, double wealth,
                                        std::vector<double> covs = {}, int outcome = 0,
                                        bool participant = true) {
  takeup::Household h;
  h.id = id;
  h.village_id = village_id;
  h.price = price;
  h.wealth = wealth;
  h.covariates = Eigen::Map<Eigen::VectorXd>(covs.data(), static_cast<Eigen::Index>(covs.size()));
  h.outcome = outcome;
  h.participant = participant;
  return h;
}

inline takeup::Village make_village(int id, std::vector<takeup::Household> hh,
                                    long long total = -1) {
  takeup::Village v;
  v.id = id;
  v.households = std::move(hh);
  v.total_households = total >= 0 ? total : static_cast<long long>(v.households.size());
  return v;
}

// A random village with n households, wealth ~ lognormal-ish, two covariates,
// everyone a participant.
inline takeup::Village random_village(std::mt19937_64& rng, int id, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<takeup::Household> hh;
  hh.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double wealth = std::exp(8.0 + 0.8 * z(rng));
    hh.push_back(make_household(i + 1, id, 250.0, wealth, {u(rng) < 0.5 ? 1.0 : 0.0, 6.0 * u(rng)}));
  }
  return make_village(id, std::move(hh));
}

// IID data from the structural model: household traits drawn independently,
// village beliefs solved to equilibrium at the true parameters, outcomes
// Bernoulli at the implied index. covariate_names = {children, female_edu}.
inline takeup::Dataset simulate_iid_dataset(const takeup::IndexParams& params, int n_villages,
                                            int n_per_village, std::uint64_t seed,
                                            const std::vector<double>& price_menu = {
                                                0.0, 50.0, 100.0, 150.0, 200.0, 250.0}) {
  takeup::Dataset data;
  data.covariate_names = {"children", "female_edu"};
  long long next_id = 1;
  for (int v = 1; v <= n_villages; ++v) {
    auto rng = takeup::substream(seed, static_cast<std::uint64_t>(v));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    takeup::Village village;
    village.id = v;
    village.total_households = n_per_village;
    for (int i = 0; i < n_per_village; ++i) {
      takeup::Household h;
      h.id = next_id++;
      h.village_id = v;
      h.price = price_menu[static_cast<std::size_t>(
          std::min<double>(u(rng) * price_menu.size(), price_menu.size() - 1.0))];
      h.wealth = std::exp(8.0 + 0.8 * z(rng));
      h.covariates = Eigen::VectorXd(2);
      h.covariates << (u(rng) < 0.4 ? 1.0 : 0.0), std::floor(9.0 * u(rng));
      village.households.push_back(std::move(h));
    }
    auto rhs = [&](double pi) {
      return takeup::village_take_up_rhs(
          village, params, [](const takeup::Household& h) { return h.price; }, pi);
    };
    const double pi_star = takeup::fixed_point_iterate(rhs, 0.5, {}).value;
    const double intercept = params.intercepts.value_for(v);
    for (auto& h : village.households) {
      const double index = intercept + params.c1 * h.price + params.c2 * h.wealth +
                           params.c3.dot(h.covariates) + params.alpha * pi_star;
      h.outcome = u(rng) < takeup::cdf(params.error, index) ? 1 : 0;
    }
    data.villages.push_back(std::move(village));
  }
  return data;
}

// Index parameters drawn so that |alpha| * sup f < 1 holds with margin.
inline takeup::IndexParams random_contraction_params(std::mt19937_64& rng,
                                                     takeup::ErrorDist error) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  takeup::IndexParams p;
  p.error = error;
  p.c1 = -(0.0005 + 0.004 * u(rng));
  p.c2 = 0.00005 * u(rng);
  p.c3 = Eigen::VectorXd(2);
  p.c3 << 0.4 * (u(rng) - 0.5), 0.1 * (u(rng) - 0.5);
  const double bound = error == takeup::ErrorDist::logit ? 4.0 : 2.5066282746310002;
  p.alpha = u(rng) * 0.9 * bound;
  p.intercepts = takeup::Intercepts::pooled(0.6 * (u(rng) - 0.5));
  return p;
}

}  // namespace testutil
