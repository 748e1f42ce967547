// Simulation scenarios with staggered adoption over periods 0..4, the true
// ATTs they imply, and a seeded Monte Carlo harness.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stagdid/estimators.hpp"
#include "stagdid/inference.hpp"
#include "stagdid/linmod.hpp"
#include "stagdid/rng.hpp"
#include "stagdid/panel.hpp"

namespace stagdid {

enum class Effect { homogeneous, heterogeneous };
enum class ErrorKind { homoskedastic, heteroskedastic, cumulative };

inline constexpr int kSimPeriods = 4;  // T
inline constexpr std::array<double, 4> kZeta{-1.5, -0.5, 0.0, 1.0};

/// Scenarios 1..6: odd ids homogeneous, even heterogeneous; 1-2 iid errors,
/// 3-4 heteroskedastic, 5-6 cumulative heteroskedastic.
struct ScenarioSpec {
  int id = 1;
  std::size_t n = 2000;
  std::uint64_t seed = 1;

  Effect effect() const { return id % 2 == 0 ? Effect::heterogeneous : Effect::homogeneous; }
  ErrorKind error() const {
    return id <= 2 ? ErrorKind::homoskedastic : id <= 4 ? ErrorKind::heteroskedastic : ErrorKind::cumulative;
  }
};

/// Throws InputError unless 1 <= id <= 6.
void check_scenario(int id);

/// P(G > k | index) with index = 0.3 Z1 + 0.4 Z2; 1 for k = 0.
double survivor_prob(int k, double index);

Panel generate(const ScenarioSpec& spec);

/// Population P(G = g) by quadrature over the N(0, 0.25) index; slots 1..4, never.
std::vector<double> true_group_props();

double true_cell_att(Effect effect, int g, int t);

struct TruthTables {
  double overall = 1.0;
  std::vector<double> group;    // [g-1]
  std::vector<double> period;   // [t-1]
  std::vector<double> dynamic;  // [s-1]
};

TruthTables true_atts(const ScenarioSpec& spec);
double true_overall_att(const ScenarioSpec& spec);
/// Truth of one aggregate; index is ignored for overall.
double true_aggregate(const ScenarioSpec& spec, AggregateKind kind, int index);

/// A method in the harness, optionally run on deliberately wrong nuisances.
struct McMethod {
  Method method = Method::aipw;
  std::optional<Misspecify> misspecified;
  std::string label() const;  // "aipw", "aipw/outcome", ...
};

McMethod parse_mc_method(const std::string& label);

struct McOptions {
  std::vector<McMethod> methods;
  std::size_t reps = 100;
  std::size_t workers = 1;
  bool collect_aggregates = false;  // cells, group, period and dynamic ATTs
  double level = 0.95;
  NuisanceOptions nuisance;
};

/// Running moments over replicates (Welford).
struct Moments {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;
  void add(double v);
  double sd() const;
};

struct McSummary {
  std::string label;  // method label
  std::string target;  // "overall", "cell 1,2", "dynamic 3", ...
  double truth = 0.0;
  std::size_t replicates = 0;  // successful
  std::size_t failures = 0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mean_se = 0.0;    // NaN when the method has no SE
  double coverage = 0.0;   // NaN when the method has no SE
  double mc_se() const;    // sd / sqrt(replicates)
};

struct FitDiagnostics {
  double max_ols_orthogonality = 0.0;
  double max_logit_score = 0.0;
  std::size_t logit_nonconverged = 0;
  std::size_t logit_separated = 0;
  std::size_t clipped_evals = 0;
  std::size_t ratio_floors = 0;
  double max_abs_if_mean = 0.0;  // over all fitted aggregate and cell IFs
  std::size_t failed_replicates = 0;
};

struct McReport {
  ScenarioSpec spec;
  McOptions options;
  std::string rng = kRngId;
  double truth = 1.0;
  std::vector<McSummary> rows;    // overall ATT per method
  std::vector<McSummary> detail;  // cells and aggregates when collected
  FitDiagnostics diagnostics;
};

/// Replicate r uses generate({id, n, replicate_seed(seed, r)}); the report is
/// identical for any worker count.
McReport run_mc(const ScenarioSpec& spec, const McOptions& options);

}  // namespace stagdid
