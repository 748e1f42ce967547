// Panel data model for staggered adoption designs.
//
// A Panel holds n units observed over periods 0..T. Each unit carries a group
// label G: the first period in which it is treated, or kNever when it is never
// treated inside the window. Treatment is absorbing, so D_t = I(G <= t).

#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stagdid {

/// Group label for never-treated units. Compares greater than every period.
inline constexpr int kNever = std::numeric_limits<int>::max();

/// Raised for malformed user input (bad CSV, unbalanced panel, ...).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "Inf" for kNever, the integer otherwise.
std::string group_label(int g);

class Panel {
 public:
  Panel() = default;

  /// Allocates an n-unit panel over periods 0..T with p covariates. Outcomes
  /// and covariates start as NaN, which marks a missing (unit, period) cell.
  Panel(std::size_t n_units, int T, std::vector<std::string> covariate_names);

  std::size_t n_units() const { return groups_.size(); }
  int T() const { return T_; }
  int n_periods() const { return T_ + 1; }
  std::size_t n_covariates() const { return covariate_names_.size(); }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  int group(std::size_t i) const { return groups_[i]; }
  const std::vector<int>& groups() const { return groups_; }
  void set_group(std::size_t i, int g) { groups_[i] = g; }

  bool treated(std::size_t i, int t) const { return groups_[i] <= t; }

  double y(std::size_t i, int t) const { return y_[index(i, t)]; }
  double& y(std::size_t i, int t) { return y_[index(i, t)]; }

  std::span<const double> x(std::size_t i, int t) const {
    return {x_.data() + index(i, t) * n_covariates(), n_covariates()};
  }
  std::span<double> x(std::size_t i, int t) {
    return {x_.data() + index(i, t) * n_covariates(), n_covariates()};
  }

  /// Original unit identifiers (defaults to "0", "1", ...).
  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  void set_unit_ids(std::vector<std::string> ids) { unit_ids_ = std::move(ids); }

  /// Original period values; period_labels()[t] is the label of index t.
  const std::vector<long long>& period_labels() const { return period_labels_; }
  void set_period_labels(std::vector<long long> labels) { period_labels_ = std::move(labels); }

  /// Raw treatment path per unit when ingested from a 0/1 column.
  const std::optional<std::vector<std::vector<int>>>& treatment_paths() const { return treatment_; }
  void set_treatment_paths(std::vector<std::vector<int>> d) { treatment_ = std::move(d); }

  /// Units with no observed outcome/covariates at (unit, period).
  bool cell_present(std::size_t i, int t) const;

 private:
  std::size_t index(std::size_t i, int t) const {
    return i * static_cast<std::size_t>(T_ + 1) + static_cast<std::size_t>(t);
  }

  int T_ = 0;
  std::vector<int> groups_;
  std::vector<double> y_;
  std::vector<double> x_;
  std::vector<std::string> covariate_names_;
  std::vector<std::string> unit_ids_;
  std::vector<long long> period_labels_;
  std::optional<std::vector<std::vector<int>>> treatment_;
};

struct GroupTally {
  int T = 0;
  /// counts[g-1] for g in 1..T, counts[T] for never-treated.
  std::vector<std::size_t> counts;
  std::vector<double> proportions;
  std::size_t n = 0;

  double prop(int g) const;
  std::size_t count(int g) const;
};

enum class CheckStatus { pass, warn, fail };

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::pass;
  std::string message;
};

/// Column-name map for long-format CSV input. Exactly one of group/treat
/// should be non-empty.
struct CsvSchema {
  std::string unit = "unit";
  std::string period = "period";
  std::string group = "group";
  std::string treat;
  std::string outcome = "y";
  std::vector<std::string> covariates;
};

Panel load_long_csv(const std::string& path, const CsvSchema& schema);
Panel parse_long_csv(const std::string& text, const CsvSchema& schema);

/// Writes the panel back in long format with columns unit, period, group, y, covariates.
std::string to_long_csv(const Panel& panel);

/// Report-only structural checks; never throws.
std::vector<CheckResult> validate(const Panel& panel);

/// True when no check in the list failed.
bool checks_pass(const std::vector<CheckResult>& checks);

GroupTally tally(const Panel& panel);

/// Index of group g in tally-style arrays: g-1 for 1..T, T for never.
inline std::size_t group_slot(int g, int T) {
  return g == kNever ? static_cast<std::size_t>(T) : static_cast<std::size_t>(g - 1);
}
inline int slot_group(std::size_t slot, int T) {
  return slot == static_cast<std::size_t>(T) ? kNever : static_cast<int>(slot) + 1;
}

/// Numeric code used where a finite value is required: T+1 for never-treated.
inline int numeric_group(int g, int T) { return g == kNever ? T + 1 : g; }

}  // namespace stagdid
