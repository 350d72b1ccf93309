#pragma once

#include <Eigen/Core>

#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace takeup {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto exit codes: input_error -> 2,
// everything else that stops a computation -> 3.
// ---------------------------------------------------------------------------

/// Malformed or inconsistent caller input (bad file, bad dimensions, bad flags).
struct input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An iterative solver failed to meet its tolerance within its budget.
struct solver_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A numerical routine produced an unusable result (non-PD matrix, NaN, ...).
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parameters violate a precondition of the welfare layer (e.g. beta <= 0);
/// welfare operations refuse to run rather than emit nonsense.
struct welfare_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Core records
// ---------------------------------------------------------------------------

/// One sampled household. Currency values are KSh throughout; locations are
/// kilometres and optional (IID analyses leave them blank).
struct Household {
  long long id = 0;
  int village_id = 0;
  double price = 0.0;
  double wealth = 0.0;
  Eigen::VectorXd covariates;  ///< e.g. {children under ten, female education}
  double loc_x = 0.0;
  double loc_y = 0.0;
  bool has_location = false;
  int outcome = 0;  ///< binary take-up
  bool participant = true;
};

/// A village: the sampled households plus the total member count (including
/// households outside the sample), the estimated belief regressor and the
/// fitted village effect.
struct Village {
  int id = 0;
  std::vector<Household> households;
  long long total_households = 0;  ///< all members; >= participant count

  double belief_hat = std::numeric_limits<double>::quiet_NaN();
  double xi_bar = std::numeric_limits<double>::quiet_NaN();

  [[nodiscard]] long long participant_count() const {
    long long n = 0;
    for (const auto& h : households) n += h.participant ? 1 : 0;
    return n;
  }
};

struct Dataset {
  std::vector<Village> villages;
  std::vector<std::string> covariate_names;

  [[nodiscard]] std::size_t n_households() const {
    std::size_t n = 0;
    for (const auto& v : villages) n += v.households.size();
    return n;
  }
  [[nodiscard]] const Village* find_village(int id) const {
    for (const auto& v : villages)
      if (v.id == id) return &v;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Model parameters
// ---------------------------------------------------------------------------

enum class ErrorDist { logit, probit };

/// Intercept block: either one pooled constant or one effect per village.
/// Both analyses share every downstream code path through value_for().
class Intercepts {
 public:
  static Intercepts pooled(double c0) {
    Intercepts b;
    b.pooled_ = true;
    b.c0_ = c0;
    return b;
  }
  static Intercepts per_village(std::map<int, double> xi) {
    Intercepts b;
    b.pooled_ = false;
    b.xi_ = std::move(xi);
    return b;
  }

  [[nodiscard]] bool is_pooled() const { return pooled_; }
  [[nodiscard]] double c0() const {
    if (!pooled_) throw input_error("Intercepts: c0 requested from per-village block");
    return c0_;
  }
  [[nodiscard]] double value_for(int village_id) const {
    if (pooled_) return c0_;
    auto it = xi_.find(village_id);
    if (it == xi_.end())
      throw input_error("Intercepts: no effect stored for village " + std::to_string(village_id));
    return it->second;
  }
  [[nodiscard]] const std::map<int, double>& per_village_values() const { return xi_; }

 private:
  bool pooled_ = true;
  double c0_ = 0.0;
  std::map<int, double> xi_;
};

/// Linear-index coefficients: F(intercept + c1*p + c2*y + c3'z + alpha*pi).
struct IndexParams {
  double c1 = 0.0;     ///< price coefficient (= -beta1)
  double c2 = 0.0;     ///< wealth coefficient (= beta1 - beta0)
  Eigen::VectorXd c3;  ///< covariate coefficients
  double alpha = 0.0;  ///< social interaction coefficient
  Intercepts intercepts = Intercepts::pooled(0.0);
  ErrorDist error = ErrorDist::logit;
};

/// The unidentified decomposition of alpha into the gain-when-buying channel
/// (alpha1 >= 0) and the loss-when-not-buying channel (alpha0 <= 0).
struct SpilloverSplit {
  double alpha1 = 0.0;
  double alpha0 = 0.0;
  [[nodiscard]] double alpha() const { return alpha1 - alpha0; }
};

/// Price-subsidy policy: baseline price p0 for everyone, subsidised price p1
/// for households with wealth <= tau.
struct PolicyScenario {
  double p0 = 0.0;
  double p1 = 0.0;
  double tau = 0.0;

  [[nodiscard]] bool eligible(double wealth) const { return wealth <= tau; }
  void validate() const {
    // Equality is the degenerate "no price change" scenario; every downstream
    // formula handles it (zero-width welfare supports, zero spending).
    if (!(p1 <= p0)) throw input_error("PolicyScenario: requires p1 <= p0");
    if (!(tau >= 0.0) && tau != -std::numeric_limits<double>::infinity())
      throw input_error("PolicyScenario: tau must be >= 0 (or -inf for nobody eligible)");
  }
};

}  // namespace takeup
