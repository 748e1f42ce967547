// Least squares, binary logistic regression and the fitted nuisance
// evaluators (trend, counterfactual mean, group probabilities, variances).
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stagdid/design.hpp"
#include "stagdid/panel.hpp"

namespace stagdid {

struct LinearFit {
  Eigen::VectorXd coef;
  std::vector<std::string> columns;
  Eigen::VectorXd residuals;
  double s2 = 0.0;  // RSS / (rows - rank)
  Eigen::Index rank = 0;
  std::vector<std::size_t> dropped;  // columns zeroed for rank deficiency
  double orthogonality = 0.0;        // max |X'e| / (max column norm * |y|)
  std::vector<std::string> warnings;
};

/// Pivoted-QR least squares. Columns whose pivots fall below
/// rank_tol * largest pivot get a zero coefficient.
LinearFit ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> columns = {},
              double rank_tol = 1e-10);

struct LogisticOptions {
  int max_iter = 100;
  double tol = 1e-8;             // on the score norm
  double separation_norm = 1e3;  // coefficient norm flagged as separation
};

struct LogisticFit {
  Eigen::VectorXd coef;
  bool converged = false;
  bool separated = false;
  int iterations = 0;
  double score_norm = 0.0;
  double log_likelihood = 0.0;
  std::vector<std::size_t> dropped;
};

/// Newton-Raphson with step halving on the Bernoulli log-likelihood.
LogisticFit logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LogisticOptions& options = {});

double logistic_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta);
Eigen::VectorXd logistic_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta);

inline double expit(double v) {
  return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

struct NuisanceOptions {
  bool heteroskedastic = true;  // fit the log-variance model; otherwise sigma2 = 2 s^2
  double eta = 0.01;            // probability clipping bound
  double rank_tol = 1e-10;
  LogisticOptions logit;
};

/// Propensity fits for every (period t, threshold k).
struct PropensityFit {
  int T = 0;
  std::vector<std::vector<LogisticFit>> fits;  // [t][k-1]
  std::vector<double> frequency;               // [k-1]
  std::vector<bool> degenerate;                // [k-1]
  std::vector<std::string> column_names;
};

/// Clips each supported entry of a distribution into [eta, 1 - eta] and
/// renormalizes, repeating until every supported entry is >= eta. Entries
/// with supported[s] == false are forced to 0. Returns true if anything moved.
bool clip_distribution(std::span<double> probs, const std::vector<bool>& supported, double eta);

/// Fitted nuisance evaluators. All probability vectors are indexed by group
/// slot (group_slot(g, T)); the never-treated slot is T.
struct NuisanceSet {
  int T = 0;
  double eta = 0.01;
  bool heteroskedastic = false;
  bool outcome_misspecified = false;
  bool propensity_misspecified = false;
  std::vector<bool> group_supported;  // [slot], group has units

  /// Counterfactual untreated mean mu0_{g,t}(x).
  std::function<double(int g, int t, std::span<const double> x)> mu0;
  /// Fitted mean including exposure and treated-interaction terms.
  std::function<double(int g, int t, std::span<const double> x)> mu;
  /// Untreated one-period change delta_{inf,k}(x_k, x_{k-1}).
  std::function<double(int k, std::span<const double> xk, std::span<const double> xkm1)> delta_inf;
  /// Writes P(G = g | X_t = x) for all slots; returns true if clipping changed anything.
  std::function<bool(int t, std::span<const double> x, std::span<double> probs)> group_probs;
  /// Working variance of the outcome change for group g at period k.
  std::function<double(int g, int k, std::span<const double> x)> sigma2;

  /// P(G > k | X_t = x).
  double survivor(int k, int t, std::span<const double> x) const;

  LinearFit outcome_fit;
  std::optional<LinearFit> variance_fit;
  PropensityFit propensity;
  double sigma2_homoskedastic = 0.0;  // 2 s^2 from the outcome fit
  std::vector<std::string> warnings;
};

NuisanceSet fit_nuisances(const Panel& panel, const NuisanceOptions& options = {});

PropensityFit fit_propensity(const PropensityDesign& design, const LogisticOptions& options);

enum class Misspecify { outcome, propensity, both };

/// Replaces one component with a deliberately wrong evaluator: outcome sets
/// mu0 = mu = delta_inf = 0; propensity sets uniform probabilities over the
/// supported groups.
NuisanceSet misspecify(NuisanceSet nuisances, Misspecify which);

/// name,estimate rows for the fitted coefficient tables.
std::string coefficients_csv(const NuisanceSet& nuisances);

}  // namespace stagdid
