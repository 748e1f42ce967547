// Panel builders and direct formula evaluations used as test oracles. The
// oracles deliberately avoid FittedTable and the library's estimator code:
// they loop over units and periods and call the nuisance evaluators only.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "stagdid/linmod.hpp"
#include "stagdid/panel.hpp"

namespace stagdid::test {

/// Two treated units (0 -> 3, 1 -> 4) and two never-treated (0 -> 2, 1 -> 2).
inline Panel micro_panel_p1() {
  Panel p(4, 1, {});
  const int groups[4] = {1, 1, kNever, kNever};
  const double y0[4] = {0, 1, 0, 1}, y1[4] = {3, 4, 2, 2};
  for (std::size_t i = 0; i < 4; ++i) {
    p.set_group(i, groups[i]);
    p.y(i, 0) = y0[i];
    p.y(i, 1) = y1[i];
  }
  return p;
}

/// Small panel over periods 0..T with every group 1..T and never-treated
/// present, Gaussian outcomes and p covariates.
inline Panel random_panel(std::uint64_t seed, std::size_t n, int T, std::size_t p) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  Panel panel(n, T, names);
  for (std::size_t i = 0; i < n; ++i) {
    const auto slot = i % static_cast<std::size_t>(T + 1);
    panel.set_group(i, slot_group(slot, T));
    for (int t = 0; t <= T; ++t) {
      panel.y(i, t) = N(eng) + 0.3 * t;
      for (auto& v : panel.x(i, t)) v = N(eng);
    }
  }
  return panel;
}

inline std::vector<double> probs_at(const NuisanceSet& ns, int t, std::span<const double> x) {
  std::vector<double> p(static_cast<std::size_t>(ns.T) + 1);
  ns.group_probs(t, x, p);
  return p;
}

inline double share(const Panel& panel, int g) {
  double c = 0;
  for (std::size_t i = 0; i < panel.n_units(); ++i) c += panel.group(i) == g;
  return c / static_cast<double>(panel.n_units());
}

/// Doubly robust cell estimate written straight from its defining display.
inline double oracle_dr_cell(const Panel& panel, const NuisanceSet& ns, int g, int t, bool ivw) {
  const int T = panel.T();
  double sum = 0.0;
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    const int G = panel.group(i);
    for (int k = g; k <= t; ++k) {
      const double r = panel.y(i, k) - panel.y(i, k - 1) - ns.delta_inf(k, panel.x(i, k), panel.x(i, k - 1));
      if (G == g) sum += r;
      if (!(G > k)) continue;
      const auto pi = probs_at(ns, k, panel.x(i, k));
      double w = 0.0;
      if (!ivw) {
        double later = 0.0;
        for (int s = 0; s <= T; ++s)
          if (slot_group(static_cast<std::size_t>(s), T) > k) later += pi[static_cast<std::size_t>(s)];
        w = pi[group_slot(g, T)] / later;
      } else {
        double denom = 0.0;
        for (int s = 0; s <= T; ++s) {
          const int l = slot_group(static_cast<std::size_t>(s), T);
          if (l > k) denom += pi[static_cast<std::size_t>(s)] / ns.sigma2(l, k, panel.x(i, k));
        }
        const double own = pi[group_slot(G, T)];
        const double W = own / ns.sigma2(G, k, panel.x(i, k)) / denom;
        w = pi[group_slot(g, T)] / std::max(own, ns.eta) * W;
      }
      sum -= w * r;
    }
  }
  return sum / static_cast<double>(panel.n_units()) / share(panel, g);
}

/// Imputation estimator: mean over group g of fitted trend minus untreated trend.
inline double oracle_reg_cell(const Panel& panel, const NuisanceSet& ns, int g, int t, int s) {
  double sum = 0.0, count = 0.0;
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    if (panel.group(i) != g) continue;
    ++count;
    for (int k = s + 1; k <= t; ++k)
      sum += ns.mu(g, k, panel.x(i, k)) - ns.mu(g, k - 1, panel.x(i, k - 1)) -
             ns.delta_inf(k, panel.x(i, k), panel.x(i, k - 1));
  }
  return sum / count;
}

/// Weighted estimator with never-treated (never_only) or not-yet-treated comparisons.
inline double oracle_wt_cell(const Panel& panel, const NuisanceSet& ns, int g, int t, int s, bool never_only) {
  const int T = panel.T();
  double sum = 0.0;
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    const int G = panel.group(i);
    if (G == g) sum += panel.y(i, t) - panel.y(i, s);
    for (int k = s + 1; k <= t; ++k) {
      const auto pi = probs_at(ns, k, panel.x(i, k));
      const double dy = panel.y(i, k) - panel.y(i, k - 1);
      if (never_only) {
        if (G == kNever) sum -= pi[group_slot(g, T)] / std::max(pi[group_slot(kNever, T)], ns.eta) * dy;
      } else if (G > k) {
        double later = 0.0;
        for (int l = k + 1; l <= T; ++l) later += pi[group_slot(l, T)];
        later += pi[group_slot(kNever, T)];
        sum -= pi[group_slot(g, T)] / later * dy;
      }
    }
  }
  return sum / static_cast<double>(panel.n_units()) / share(panel, g);
}

struct OracleTwfe {
  double estimate = 0.0;
  double se = 0.0;
};

/// Dummy-variable least squares with explicit unit and period indicators and
/// a unit-clustered sandwich on the full design.
inline OracleTwfe oracle_twfe(const Panel& panel) {
  const auto n = static_cast<Eigen::Index>(panel.n_units());
  const int P = panel.n_periods();
  const Eigen::Index rows = n * P, cols = 1 + n + (P - 1);
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(rows, cols);
  Eigen::VectorXd y(rows);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int t = 0; t < P; ++t) {
      const Eigen::Index r = i * P + t;
      X(r, 0) = panel.treated(static_cast<std::size_t>(i), t) ? 1.0 : 0.0;
      X(r, 1 + i) = 1.0;
      if (t > 0) X(r, n + t) = 1.0;
      y[r] = panel.y(static_cast<std::size_t>(i), t);
    }
  const Eigen::MatrixXd XtX_inv = (X.transpose() * X).inverse();
  const Eigen::VectorXd beta = XtX_inv * X.transpose() * y;
  const Eigen::VectorXd e = y - X * beta;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(cols, cols);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd s = X.middleRows(i * P, P).transpose() * e.segment(i * P, P);
    meat += s * s.transpose();
  }
  const double G = static_cast<double>(n);
  const Eigen::MatrixXd V = XtX_inv * meat * XtX_inv * (G / (G - 1.0));
  return {beta[0], std::sqrt(V(0, 0))};
}

}  // namespace stagdid::test
