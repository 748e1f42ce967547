// Group-period ATT estimators: AIVW, AIPW, regression (imputation), weighted
// with never-treated or not-yet-treated comparisons, and the TWFE baseline.
#pragma once

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stagdid/linmod.hpp"
#include "stagdid/panel.hpp"

namespace stagdid {

enum class Method { twfe, reg, wt_never, wt_notyet, aipw, aivw };

std::string to_string(Method m);
Method parse_method(const std::string& name);
/// AIPW and AIVW carry fitted influence functions; the others do not.
inline bool has_influence(Method m) { return m == Method::aipw || m == Method::aivw; }

/// Nuisance evaluations for every (unit, period), computed once per fit.
struct FittedTable {
  const Panel* panel = nullptr;
  int T = 0;
  std::size_t n = 0;
  double eta = 0.01;
  GroupTally tally;
  Eigen::MatrixXd dy;      // Y_t - Y_{t-1}, column 0 unused
  Eigen::MatrixXd delta;   // delta_inf,t(X_t, X_{t-1}), column 0 unused
  Eigen::MatrixXd dmu;     // fitted mu_{G,t}(X_t) - mu_{G,t-1}(X_{t-1}) incl. treatment terms
  Eigen::MatrixXd resid0;  // Y_t - mu0_{G,t}(X_t)
  Eigen::MatrixXd survivor;  // sum_{l>t} pi_l(X_t)
  Eigen::MatrixXd ivw_own;   // W_{G,t}(X_t) for units with G > t, else 0
  std::vector<double> probs;   // [(i * (T+1) + t) * (T+1) + slot]
  std::vector<double> sigma2;  // same layout; NaN for slots l <= t
  std::size_t clipped_evals = 0;  // probability vectors moved by clipping
  std::size_t ratio_floors = 0;   // pi_G denominators floored at eta

  double prob(std::size_t i, int t, int g) const {
    return probs[(i * static_cast<std::size_t>(T + 1) + static_cast<std::size_t>(t)) * static_cast<std::size_t>(T + 1) +
                 group_slot(g, T)];
  }
  double sig2(std::size_t i, int t, int g) const {
    return sigma2[(i * static_cast<std::size_t>(T + 1) + static_cast<std::size_t>(t)) * static_cast<std::size_t>(T + 1) +
                  group_slot(g, T)];
  }
  int group(std::size_t i) const { return panel->group(i); }
};

FittedTable tabulate(const Panel& panel, const NuisanceSet& nuisances);

struct IvwWeights {
  int k = 0;
  std::vector<double> weight;  // by group slot; 0 for l <= k
};

/// W_{l,k} = (pi_l / sigma2_l) / sum_{s>k} (pi_s / sigma2_s) over the groups
/// not yet treated at k. Both inputs are indexed by group slot.
IvwWeights ivw_weights(std::span<const double> pi, std::span<const double> sigma2, int k, int T);

struct CellEstimate {
  int g = 0;
  int t = 0;
  Method method = Method::aipw;
  int base_period = -1;  // reg / wt only
  double estimate = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  /// Per-unit phi_{g,t,i}; estimate is their mean.
  Eigen::VectorXd contributions;
  std::size_t n_treated = 0;
  std::size_t n_comparison = 0;
};

struct SkippedCell {
  int g = 0;
  int t = 0;
  std::string reason;
};

/// Why (g, t) cannot be estimated by the method, or nullopt if it can.
std::optional<std::string> cell_unavailable(const FittedTable& table, Method method, int g, int t, int base_period);

/// Evaluates one cell. Throws std::invalid_argument when the cell is not estimable.
CellEstimate att_cell(const FittedTable& table, Method method, int g, int t, int base_period = -1);

CellEstimate att_cell_aivw(const Panel& panel, const NuisanceSet& nuisances, int g, int t);
CellEstimate att_cell_aipw(const Panel& panel, const NuisanceSet& nuisances, int g, int t);
CellEstimate att_cell_reg(const Panel& panel, const NuisanceSet& nuisances, int g, int t, int base_period);
CellEstimate att_cell_wt(const Panel& panel, const NuisanceSet& nuisances, int g, int t, int base_period,
                         bool never_treated_only);

struct CellSweep {
  Method method = Method::aipw;
  std::vector<CellEstimate> cells;  // ordered by (g, t)
  std::vector<SkippedCell> skipped;
};

/// All estimable cells of the triangle 1 <= g <= t <= T, with SEs for methods
/// that carry influence functions.
CellSweep estimate_cells(const FittedTable& table, Method method, int base_period = -1);

struct TwfeResult {
  double estimate = 0.0;
  double se = 0.0;  // cluster-robust by unit
  std::size_t n_units = 0;
};

/// Y_it on unit and period fixed effects and D_it, via the two-way within transform.
TwfeResult twfe(const Panel& panel);

/// H^{g,r}_{G,t} for unit i: residual weight of period t in the cell (g, r).
double h_weight(const FittedTable& table, Method method, std::size_t i, int t, int g, int r);

/// sum over 1 <= g <= r <= T of h_weight.
double h_overall(const FittedTable& table, Method method, std::size_t i, int t);

/// Closed form of h_overall for AIPW weights.
double h_overall_aipw_closed(const FittedTable& table, std::size_t i, int t);

}  // namespace stagdid
