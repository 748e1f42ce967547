// Model matrices for the three working models: pooled outcome regression,
// residual log-variance regression and per-threshold propensity logits.
#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "stagdid/panel.hpp"

namespace stagdid {

struct RowKey {
  std::size_t unit = 0;
  int period = 0;
};

/// Column catalog of the outcome regression. Reference levels: period 0 and
/// the never-treated group (or the latest group when nobody is never-treated).
/// Only these blocks exist; group x period interactions are never built.
enum class OutcomeBlock { intercept, exposure, period, group, main, treated, trend };

struct OutcomeColumn {
  std::string name;
  OutcomeBlock block;
  int level = 0;  // exposure length k, period t, group g, or covariate index
};

class OutcomeLayout {
 public:
  OutcomeLayout() = default;
  explicit OutcomeLayout(const Panel& panel);

  const std::vector<OutcomeColumn>& columns() const { return columns_; }
  std::size_t n_columns() const { return columns_.size(); }
  int reference_group() const { return reference_group_; }

  /// Writes the design row for a unit in group g at period t with covariates x.
  /// With counterfactual = true the exposure and treated-interaction columns
  /// are zeroed, giving the untreated mean.
  void fill_row(int g, int t, std::span<const double> x, bool counterfactual, std::span<double> row) const;

  /// Linear predictor for (g, t, x) under a coefficient vector.
  double predict(const Eigen::VectorXd& coef, int g, int t, std::span<const double> x, bool counterfactual) const;

 private:
  int T_ = 0;
  std::size_t p_ = 0;
  int reference_group_ = kNever;
  std::vector<OutcomeColumn> columns_;
  std::vector<int> exposure_col_;  // by k, -1 when absent
  std::vector<int> period_col_;    // by t
  std::vector<int> group_col_;     // by group slot
  int main_start_ = -1, treated_start_ = -1, trend_start_ = -1;
};

struct OutcomeDesign {
  OutcomeLayout layout;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<RowKey> rows;  // row r is (unit r / (T+1), period r % (T+1))
};

OutcomeDesign build_outcome_design(const Panel& panel);

/// Log squared-residual-change regression on untreated rows with t >= 1.
class VarianceLayout {
 public:
  VarianceLayout() = default;
  /// Builds the catalog from the periods and groups that actually appear.
  VarianceLayout(int T, const std::vector<std::string>& covariate_names, const std::vector<bool>& period_has_rows,
                 const std::vector<bool>& group_has_rows);

  const std::vector<std::string>& column_names() const { return names_; }
  std::size_t n_columns() const { return names_.size(); }
  void fill_row(int g, int t, std::span<const double> x, std::span<double> row) const;
  double predict(const Eigen::VectorXd& coef, int g, int t, std::span<const double> x) const;

 private:
  int T_ = 0;
  std::size_t p_ = 0;
  std::vector<std::string> names_;
  std::vector<int> period_col_;
  std::vector<int> group_col_;
  int cov_start_ = -1;
};

/// Floor added to squared residual changes before taking logs.
inline constexpr double kLogVarianceFloor = 1e-12;

struct VarianceDesign {
  VarianceLayout layout;
  Eigen::MatrixXd X;
  Eigen::VectorXd response;
  std::vector<RowKey> rows;
  std::vector<std::string> warnings;
};

/// residuals are indexed like OutcomeDesign rows: unit * (T+1) + period.
VarianceDesign build_variance_design(const Panel& panel, const Eigen::VectorXd& residuals);

/// One binary design I(G <= k) ~ (1, X_t) per period t = 0..T and threshold k = 1..T.
struct PropensityDesign {
  int T = 0;
  std::vector<Eigen::MatrixXd> X;                  // [t], n x (1 + p)
  std::vector<std::vector<Eigen::VectorXd>> y;     // [t][k-1]
  std::vector<double> frequency;                   // empirical P(G <= k), [k-1]
  std::vector<bool> degenerate;                    // [k-1], all-0 or all-1 response
  std::vector<std::string> column_names;
};

PropensityDesign build_propensity_designs(const Panel& panel);

/// Debug dump: unit,period,<columns...>.
std::string design_to_csv(const std::vector<RowKey>& rows, const std::vector<std::string>& columns,
                          const Eigen::MatrixXd& X, const Panel& panel);

std::vector<std::string> column_names(const OutcomeLayout& layout);

}  // namespace stagdid
