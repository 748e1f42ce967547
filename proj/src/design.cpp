#include "stagdid/design.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "csv.hpp"

namespace stagdid {

namespace {

int pick_reference_group(const std::vector<bool>& present, int T) {
  if (present[group_slot(kNever, T)]) return kNever;
  for (int g = T; g >= 1; --g)
    if (present[group_slot(g, T)]) return g;
  return kNever;
}

}  // namespace

OutcomeLayout::OutcomeLayout(const Panel& panel) : T_(panel.T()), p_(panel.n_covariates()) {
  const int T = T_;
  std::vector<bool> group_present(static_cast<std::size_t>(T) + 1, false);
  std::vector<bool> exposure_seen(static_cast<std::size_t>(T), false);
  bool any_treated = false;
  for (int g : panel.groups()) {
    group_present[group_slot(g, T)] = true;
    if (g != kNever) {
      any_treated = true;
      for (int t = g; t <= T; ++t) exposure_seen[static_cast<std::size_t>(t - g)] = true;
    }
  }
  reference_group_ = pick_reference_group(group_present, T);

  columns_.push_back({"intercept", OutcomeBlock::intercept, 0});
  exposure_col_.assign(static_cast<std::size_t>(T), -1);
  for (int k = 0; k < T; ++k)
    if (exposure_seen[static_cast<std::size_t>(k)]) {
      exposure_col_[static_cast<std::size_t>(k)] = static_cast<int>(columns_.size());
      columns_.push_back({"exposure_" + std::to_string(k), OutcomeBlock::exposure, k});
    }
  period_col_.assign(static_cast<std::size_t>(T) + 1, -1);
  for (int t = 1; t <= T; ++t) {
    period_col_[static_cast<std::size_t>(t)] = static_cast<int>(columns_.size());
    columns_.push_back({"period_" + std::to_string(t), OutcomeBlock::period, t});
  }
  group_col_.assign(static_cast<std::size_t>(T) + 1, -1);
  for (std::size_t s = 0; s <= static_cast<std::size_t>(T); ++s) {
    const int g = slot_group(s, T);
    if (!group_present[s] || g == reference_group_) continue;
    group_col_[s] = static_cast<int>(columns_.size());
    columns_.push_back({"group_" + group_label(g), OutcomeBlock::group, g});
  }
  const auto& names = panel.covariate_names();
  main_start_ = static_cast<int>(columns_.size());
  for (std::size_t j = 0; j < p_; ++j) columns_.push_back({names[j], OutcomeBlock::main, static_cast<int>(j)});
  if (any_treated) {
    treated_start_ = static_cast<int>(columns_.size());
    for (std::size_t j = 0; j < p_; ++j)
      columns_.push_back({names[j] + ":treated", OutcomeBlock::treated, static_cast<int>(j)});
  }
  trend_start_ = static_cast<int>(columns_.size());
  for (std::size_t j = 0; j < p_; ++j)
    columns_.push_back({names[j] + ":period", OutcomeBlock::trend, static_cast<int>(j)});
}

void OutcomeLayout::fill_row(int g, int t, std::span<const double> x, bool counterfactual,
                             std::span<double> row) const {
  std::fill(row.begin(), row.end(), 0.0);
  row[0] = 1.0;
  const bool treated = g <= t;
  if (treated && !counterfactual) {
    const int c = exposure_col_[static_cast<std::size_t>(t - g)];
    if (c >= 0) row[static_cast<std::size_t>(c)] = 1.0;
  }
  if (const int c = period_col_[static_cast<std::size_t>(t)]; c >= 0) row[static_cast<std::size_t>(c)] = 1.0;
  if (const int c = group_col_[group_slot(g, T_)]; c >= 0) row[static_cast<std::size_t>(c)] = 1.0;
  for (std::size_t j = 0; j < p_; ++j) {
    row[static_cast<std::size_t>(main_start_) + j] = x[j];
    row[static_cast<std::size_t>(trend_start_) + j] = x[j] * t;
    if (treated && !counterfactual && treated_start_ >= 0) row[static_cast<std::size_t>(treated_start_) + j] = x[j];
  }
}

double OutcomeLayout::predict(const Eigen::VectorXd& coef, int g, int t, std::span<const double> x,
                              bool counterfactual) const {
  double v = coef[0];
  const bool treated = g <= t;
  if (treated && !counterfactual) {
    if (const int c = exposure_col_[static_cast<std::size_t>(t - g)]; c >= 0) v += coef[c];
  }
  if (const int c = period_col_[static_cast<std::size_t>(t)]; c >= 0) v += coef[c];
  if (const int c = group_col_[group_slot(g, T_)]; c >= 0) v += coef[c];
  for (std::size_t j = 0; j < p_; ++j) {
    v += coef[main_start_ + static_cast<Eigen::Index>(j)] * x[j];
    v += coef[trend_start_ + static_cast<Eigen::Index>(j)] * x[j] * t;
    if (treated && !counterfactual && treated_start_ >= 0)
      v += coef[treated_start_ + static_cast<Eigen::Index>(j)] * x[j];
  }
  return v;
}

std::vector<std::string> column_names(const OutcomeLayout& layout) {
  std::vector<std::string> out;
  for (const auto& c : layout.columns()) out.push_back(c.name);
  return out;
}

OutcomeDesign build_outcome_design(const Panel& panel) {
  OutcomeDesign d;
  d.layout = OutcomeLayout(panel);
  const std::size_t n = panel.n_units();
  const int P = panel.n_periods();
  const auto rows = static_cast<Eigen::Index>(n * static_cast<std::size_t>(P));
  const auto cols = static_cast<Eigen::Index>(d.layout.n_columns());
  d.X.resize(rows, cols);
  d.y.resize(rows);
  d.rows.reserve(static_cast<std::size_t>(rows));
  std::vector<double> buf(static_cast<std::size_t>(cols));
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (int t = 0; t < P; ++t, ++r) {
      d.layout.fill_row(panel.group(i), t, panel.x(i, t), false, buf);
      for (Eigen::Index c = 0; c < cols; ++c) d.X(r, c) = buf[static_cast<std::size_t>(c)];
      d.y[r] = panel.y(i, t);
      d.rows.push_back({i, t});
    }
  return d;
}

VarianceLayout::VarianceLayout(int T, const std::vector<std::string>& covariate_names,
                               const std::vector<bool>& period_has_rows, const std::vector<bool>& group_has_rows)
    : T_(T), p_(covariate_names.size()) {
  names_.push_back("intercept");
  period_col_.assign(static_cast<std::size_t>(T) + 1, -1);
  bool reference_taken = false;
  for (int t = 1; t <= T; ++t) {
    if (!period_has_rows[static_cast<std::size_t>(t)]) continue;
    if (!reference_taken) {
      reference_taken = true;
      continue;
    }
    period_col_[static_cast<std::size_t>(t)] = static_cast<int>(names_.size());
    names_.push_back("period_" + std::to_string(t));
  }
  const int ref = pick_reference_group(group_has_rows, T);
  group_col_.assign(static_cast<std::size_t>(T) + 1, -1);
  for (std::size_t s = 0; s <= static_cast<std::size_t>(T); ++s) {
    const int g = slot_group(s, T);
    if (!group_has_rows[s] || g == ref) continue;
    group_col_[s] = static_cast<int>(names_.size());
    names_.push_back("group_" + group_label(g));
  }
  cov_start_ = static_cast<int>(names_.size());
  for (const auto& name : covariate_names) names_.push_back(name);
}

void VarianceLayout::fill_row(int g, int t, std::span<const double> x, std::span<double> row) const {
  std::fill(row.begin(), row.end(), 0.0);
  row[0] = 1.0;
  if (const int c = period_col_[static_cast<std::size_t>(t)]; c >= 0) row[static_cast<std::size_t>(c)] = 1.0;
  if (const int c = group_col_[group_slot(g, T_)]; c >= 0) row[static_cast<std::size_t>(c)] = 1.0;
  for (std::size_t j = 0; j < p_; ++j) row[static_cast<std::size_t>(cov_start_) + j] = x[j];
}

double VarianceLayout::predict(const Eigen::VectorXd& coef, int g, int t, std::span<const double> x) const {
  double v = coef[0];
  if (const int c = period_col_[static_cast<std::size_t>(t)]; c >= 0) v += coef[c];
  if (const int c = group_col_[group_slot(g, T_)]; c >= 0) v += coef[c];
  for (std::size_t j = 0; j < p_; ++j) v += coef[cov_start_ + static_cast<Eigen::Index>(j)] * x[j];
  return v;
}

VarianceDesign build_variance_design(const Panel& panel, const Eigen::VectorXd& residuals) {
  const int T = panel.T();
  const std::size_t n = panel.n_units();
  const std::size_t P = static_cast<std::size_t>(T) + 1;
  if (static_cast<std::size_t>(residuals.size()) != n * P)
    throw std::invalid_argument("residual vector does not match panel shape");

  std::vector<bool> period_rows(P, false), group_rows(P, false);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (int t = 1; t <= T; ++t)
      if (!panel.treated(i, t)) {
        period_rows[static_cast<std::size_t>(t)] = true;
        group_rows[group_slot(panel.group(i), T)] = true;
        ++count;
      }

  VarianceDesign d;
  for (int t = 1; t <= T; ++t)
    if (!period_rows[static_cast<std::size_t>(t)])
      d.warnings.push_back("no untreated rows at period " + std::to_string(t) +
                           "; variance there is extrapolated without a period effect");
  d.layout = VarianceLayout(T, panel.covariate_names(), period_rows, group_rows);
  const auto cols = static_cast<Eigen::Index>(d.layout.n_columns());
  d.X.resize(static_cast<Eigen::Index>(count), cols);
  d.response.resize(static_cast<Eigen::Index>(count));
  d.rows.reserve(count);
  std::vector<double> buf(static_cast<std::size_t>(cols));
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (int t = 1; t <= T; ++t) {
      if (panel.treated(i, t)) continue;
      d.layout.fill_row(panel.group(i), t, panel.x(i, t), buf);
      for (Eigen::Index c = 0; c < cols; ++c) d.X(r, c) = buf[static_cast<std::size_t>(c)];
      const auto base = static_cast<Eigen::Index>(i * P);
      const double diff = residuals[base + t] - residuals[base + t - 1];
      d.response[r] = std::log(diff * diff + kLogVarianceFloor);
      d.rows.push_back({i, t});
      ++r;
    }
  return d;
}

PropensityDesign build_propensity_designs(const Panel& panel) {
  PropensityDesign d;
  const int T = panel.T();
  const std::size_t n = panel.n_units();
  const std::size_t p = panel.n_covariates();
  d.T = T;
  d.column_names.push_back("intercept");
  for (const auto& name : panel.covariate_names()) d.column_names.push_back(name);

  for (int k = 1; k <= T; ++k) {
    std::size_t ones = 0;
    for (int g : panel.groups())
      if (g <= k) ++ones;
    d.frequency.push_back(n ? static_cast<double>(ones) / static_cast<double>(n) : 0.0);
    d.degenerate.push_back(ones == 0 || ones == n);
  }

  for (int t = 0; t <= T; ++t) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p + 1));
    for (std::size_t i = 0; i < n; ++i) {
      X(static_cast<Eigen::Index>(i), 0) = 1.0;
      const auto x = panel.x(i, t);
      for (std::size_t j = 0; j < p; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = x[j];
    }
    d.X.push_back(std::move(X));
    std::vector<Eigen::VectorXd> ys;
    for (int k = 1; k <= T; ++k) {
      Eigen::VectorXd y(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = panel.group(i) <= k ? 1.0 : 0.0;
      ys.push_back(std::move(y));
    }
    d.y.push_back(std::move(ys));
  }
  return d;
}

std::string design_to_csv(const std::vector<RowKey>& rows, const std::vector<std::string>& columns,
                          const Eigen::MatrixXd& X, const Panel& panel) {
  std::ostringstream os;
  os << "unit,period";
  for (const auto& c : columns) os << ',' << csv::escape(c);
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << csv::escape(panel.unit_ids()[rows[r].unit]) << ','
       << panel.period_labels()[static_cast<std::size_t>(rows[r].period)];
    for (Eigen::Index c = 0; c < X.cols(); ++c) os << ',' << csv::format_double(X(static_cast<Eigen::Index>(r), c));
    os << '\n';
  }
  return os.str();
}

}  // namespace stagdid
