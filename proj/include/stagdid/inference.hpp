// Influence functions, aggregation of cell ATTs, standard errors and the
// residual-weighting path for cell and overall ATTs.
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stagdid/estimators.hpp"
#include "stagdid/panel.hpp"

namespace stagdid {

/// phi_i - I(G_i = g) / P(G = g) * tau for a cell; mean zero by construction.
Eigen::VectorXd cell_if(const Panel& panel, const CellEstimate& cell);

/// sqrt(mean(IF^2) / n).
double if_se(const Eigen::VectorXd& influence);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

Interval ci(double estimate, double se, double level);

/// Fitted IF columns for every estimated cell of a sweep.
struct InfluenceTable {
  Method method = Method::aipw;
  std::vector<std::pair<int, int>> cells;  // (g, t) per column
  Eigen::MatrixXd values;                  // n x cells
};

InfluenceTable influence_table(const Panel& panel, const CellSweep& sweep);

enum class AggregateKind { group, period, dynamic, overall };

std::string to_string(AggregateKind kind);
AggregateKind parse_aggregate(const std::string& name);

struct AggregateEstimate {
  AggregateKind kind = AggregateKind::overall;
  int index = 0;  // g, t or s; 0 for overall
  Method method = Method::aipw;
  bool available = false;
  bool partial = false;  // some member cells missing; weights renormalized
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  double level = 0.95;
  Interval interval{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  std::vector<std::pair<int, int>> members;
  std::vector<double> weights;  // normalized, aligned with members
  std::vector<std::pair<int, int>> missing;
  Eigen::VectorXd influence;  // empty for methods without IFs
};

/// Members of an aggregate in the full triangle 1 <= g <= t <= T.
std::vector<std::pair<int, int>> aggregate_members(int T, AggregateKind kind, int index);

/// Groupwise: equal weights over t = g..T. Periodwise, dynamic and overall:
/// cell weights proportional to P(G = g).
AggregateEstimate aggregate(const Panel& panel, const CellSweep& sweep, AggregateKind kind, int index,
                            double level = 0.95);

/// Every index of one kind (g = 1..T, t = 1..T, s = 1..T, or the single overall).
std::vector<AggregateEstimate> aggregate_all(const Panel& panel, const CellSweep& sweep, AggregateKind kind,
                                             double level = 0.95);

/// (1 / P(G = g)) mean_i sum_t H^{g,r}_{G_i,t} (Y_it - mu0_{G_i,t}(X_it)).
double cell_via_h(const FittedTable& table, Method method, int g, int r);

/// Overall ATT as the H-weighted residual sum over the count of treated
/// unit-periods, with its own influence function.
AggregateEstimate overall_via_h(const FittedTable& table, Method method, double level = 0.95);

}  // namespace stagdid
