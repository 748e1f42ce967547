#include "stagdid/linmod.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "csv.hpp"

namespace stagdid {

LinearFit ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> columns, double rank_tol) {
  if (X.rows() == 0 || X.cols() == 0) throw std::invalid_argument("ols: empty design");
  if (X.rows() != y.size()) throw std::invalid_argument("ols: design/response size mismatch");
  if (X.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("ols: all-zero design");

  LinearFit fit;
  if (columns.empty())
    for (Eigen::Index j = 0; j < X.cols(); ++j) columns.push_back("c" + std::to_string(j));
  fit.columns = std::move(columns);
  if (X.rows() < X.cols())
    fit.warnings.push_back("fewer rows (" + std::to_string(X.rows()) + ") than columns (" +
                           std::to_string(X.cols()) + ")");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X.rows(), X.cols());
  qr.setThreshold(rank_tol);
  qr.compute(X);
  fit.rank = qr.rank();
  fit.coef = qr.solve(y);
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index j = fit.rank; j < X.cols(); ++j) {
    const auto c = static_cast<std::size_t>(perm[j]);
    fit.dropped.push_back(c);
    fit.coef[perm[j]] = 0.0;
  }
  std::sort(fit.dropped.begin(), fit.dropped.end());
  for (std::size_t c : fit.dropped) fit.warnings.push_back("rank-deficient column zeroed: " + fit.columns[c]);

  fit.residuals = y - X * fit.coef;
  const double rss = fit.residuals.squaredNorm();
  const auto dof = X.rows() - fit.rank;
  fit.s2 = dof > 0 ? rss / static_cast<double>(dof) : 0.0;

  const double col_scale = X.colwise().norm().maxCoeff();
  const double scale = col_scale * std::max(y.norm(), 1.0);
  fit.orthogonality = (X.transpose() * fit.residuals).cwiseAbs().maxCoeff() / scale;
  return fit;
}

double logistic_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + exp(eta)) without overflow
    const double e = eta[i];
    const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += y[i] * e - log1pexp;
  }
  return ll;
}

Eigen::VectorXd logistic_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  Eigen::VectorXd resid(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) resid[i] = y[i] - expit(eta[i]);
  return X.transpose() * resid;
}

LogisticFit logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LogisticOptions& options) {
  LogisticFit fit;
  fit.coef = Eigen::VectorXd::Zero(X.cols());

  // Fit on a column subset of full rank; the rest stay at zero.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  std::vector<Eigen::Index> keep;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index j = 0; j < rank; ++j) keep.push_back(perm[j]);
  std::sort(keep.begin(), keep.end());
  for (Eigen::Index j = rank; j < X.cols(); ++j) fit.dropped.push_back(static_cast<std::size_t>(perm[j]));
  std::sort(fit.dropped.begin(), fit.dropped.end());

  Eigen::MatrixXd Xk(X.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) Xk.col(static_cast<Eigen::Index>(j)) = X.col(keep[j]);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Xk.cols());
  double ll = logistic_log_likelihood(Xk, y, beta);
  Eigen::VectorXd score = logistic_score(Xk, y, beta);

  int it = 0;
  for (; it < options.max_iter; ++it) {
    if (score.norm() <= options.tol) {
      fit.converged = true;
      break;
    }
    const Eigen::VectorXd p = (Xk * beta).unaryExpr([](double v) { return expit(v); });
    const Eigen::VectorXd w = p.array() * (1.0 - p.array());
    const Eigen::MatrixXd info = Xk.transpose() * w.asDiagonal() * Xk;
    const Eigen::VectorXd step = info.ldlt().solve(score);
    if (!step.allFinite()) break;

    double scale = 1.0;
    Eigen::VectorXd cand = beta + step;
    double cand_ll = logistic_log_likelihood(Xk, y, cand);
    // Near the optimum the likelihood change drops below rounding noise.
    const double slack = 1e-12 * (std::abs(ll) + 1.0);
    int halvings = 0;
    while (!(cand_ll >= ll - slack) && halvings < 40) {
      scale *= 0.5;
      cand = beta + scale * step;
      cand_ll = logistic_log_likelihood(Xk, y, cand);
      ++halvings;
    }
    if (!(cand_ll >= ll - slack)) break;  // no ascent possible at machine precision
    beta = cand;
    ll = cand_ll;
    score = logistic_score(Xk, y, beta);
    if (beta.norm() > options.separation_norm) {
      fit.separated = true;
      break;
    }
  }
  if (!fit.converged && score.norm() <= options.tol) fit.converged = true;
  // Complete separation: the likelihood approaches 1 and no finite maximizer exists.
  if (!fit.separated && ll > -1e-6) fit.separated = true;
  if (fit.separated) fit.converged = false;

  for (std::size_t j = 0; j < keep.size(); ++j) fit.coef[keep[j]] = beta[static_cast<Eigen::Index>(j)];
  fit.iterations = it;
  fit.score_norm = score.norm();
  fit.log_likelihood = ll;
  return fit;
}

bool clip_distribution(std::span<double> probs, const std::vector<bool>& supported, double eta) {
  const std::size_t m = probs.size();
  double total = 0.0;
  std::size_t n_supported = 0;
  for (std::size_t s = 0; s < m; ++s) {
    if (!supported[s]) {
      probs[s] = 0.0;
      continue;
    }
    probs[s] = std::max(probs[s], 0.0);
    total += probs[s];
    ++n_supported;
  }
  if (n_supported == 0) return false;
  if (total <= 0.0) {
    for (std::size_t s = 0; s < m; ++s)
      if (supported[s]) probs[s] = 1.0 / static_cast<double>(n_supported);
    return true;
  }
  for (std::size_t s = 0; s < m; ++s) probs[s] /= total;
  if (n_supported == 1) return false;

  std::vector<bool> pinned(m, false);
  bool moved = false;
  for (std::size_t pass = 0; pass < m; ++pass) {
    bool changed = false;
    for (std::size_t s = 0; s < m; ++s)
      if (supported[s] && !pinned[s] && probs[s] < eta) {
        pinned[s] = true;
        changed = true;
      }
    if (!changed) break;
    moved = true;
    std::size_t n_pinned = 0;
    double free_mass = 0.0;
    for (std::size_t s = 0; s < m; ++s) {
      if (!supported[s]) continue;
      if (pinned[s]) ++n_pinned;
      else free_mass += probs[s];
    }
    const double target = 1.0 - static_cast<double>(n_pinned) * eta;
    for (std::size_t s = 0; s < m; ++s) {
      if (!supported[s]) continue;
      if (pinned[s]) probs[s] = eta;
      else probs[s] = free_mass > 0 ? probs[s] * target / free_mass : target;
    }
  }
  return moved;
}

PropensityFit fit_propensity(const PropensityDesign& design, const LogisticOptions& options) {
  PropensityFit out;
  out.T = design.T;
  out.frequency = design.frequency;
  out.degenerate = design.degenerate;
  out.column_names = design.column_names;
  for (int t = 0; t <= design.T; ++t) {
    std::vector<LogisticFit> row;
    for (int k = 1; k <= design.T; ++k) {
      if (design.degenerate[static_cast<std::size_t>(k - 1)]) {
        LogisticFit f;
        f.coef = Eigen::VectorXd::Zero(design.X[static_cast<std::size_t>(t)].cols());
        f.converged = true;
        row.push_back(std::move(f));
        continue;
      }
      row.push_back(logistic(design.X[static_cast<std::size_t>(t)],
                             design.y[static_cast<std::size_t>(t)][static_cast<std::size_t>(k - 1)], options));
    }
    out.fits.push_back(std::move(row));
  }
  return out;
}

double NuisanceSet::survivor(int k, int t, std::span<const double> x) const {
  std::vector<double> probs(static_cast<std::size_t>(T) + 1);
  group_probs(t, x, probs);
  double s = 0.0;
  for (std::size_t slot = 0; slot < probs.size(); ++slot)
    if (slot_group(slot, T) > k) s += probs[slot];
  return s;
}

NuisanceSet fit_nuisances(const Panel& panel, const NuisanceOptions& options) {
  NuisanceSet ns;
  ns.T = panel.T();
  ns.eta = options.eta;
  ns.heteroskedastic = options.heteroskedastic;
  const int T = ns.T;
  const GroupTally tl = tally(panel);
  ns.group_supported.resize(tl.counts.size());
  for (std::size_t s = 0; s < tl.counts.size(); ++s) ns.group_supported[s] = tl.counts[s] > 0;

  // Outcome regression.
  OutcomeDesign od = build_outcome_design(panel);
  ns.outcome_fit = ols(od.X, od.y, column_names(od.layout), options.rank_tol);
  for (const auto& w : ns.outcome_fit.warnings) ns.warnings.push_back("outcome model: " + w);
  auto layout = std::make_shared<const OutcomeLayout>(od.layout);
  auto coef = std::make_shared<const Eigen::VectorXd>(ns.outcome_fit.coef);
  ns.mu0 = [layout, coef](int g, int t, std::span<const double> x) { return layout->predict(*coef, g, t, x, true); };
  ns.mu = [layout, coef](int g, int t, std::span<const double> x) { return layout->predict(*coef, g, t, x, false); };
  const int ref = layout->reference_group();
  ns.delta_inf = [layout, coef, ref](int k, std::span<const double> xk, std::span<const double> xkm1) {
    return layout->predict(*coef, ref, k, xk, true) - layout->predict(*coef, ref, k - 1, xkm1, true);
  };

  // Working variance of the outcome change.
  ns.sigma2_homoskedastic = 2.0 * ns.outcome_fit.s2;
  const double hom = ns.sigma2_homoskedastic > 0 ? ns.sigma2_homoskedastic : 1.0;
  ns.sigma2 = [hom](int, int, std::span<const double>) { return hom; };
  if (options.heteroskedastic) {
    VarianceDesign vd = build_variance_design(panel, ns.outcome_fit.residuals);
    for (const auto& w : vd.warnings) ns.warnings.push_back("variance model: " + w);
    if (vd.X.rows() > vd.X.cols()) {
      ns.variance_fit = ols(vd.X, vd.response, vd.layout.column_names(), options.rank_tol);
      for (const auto& w : ns.variance_fit->warnings) ns.warnings.push_back("variance model: " + w);
      auto vlayout = std::make_shared<const VarianceLayout>(vd.layout);
      auto vcoef = std::make_shared<const Eigen::VectorXd>(ns.variance_fit->coef);
      ns.sigma2 = [vlayout, vcoef](int g, int k, std::span<const double> x) {
        return std::exp(vlayout->predict(*vcoef, g, k, x));
      };
    } else {
      ns.heteroskedastic = false;
      ns.warnings.push_back("variance model: too few untreated rows; using a constant variance");
    }
  }

  // Group probabilities from per-threshold logits.
  ns.propensity = fit_propensity(build_propensity_designs(panel), options.logit);
  for (int t = 0; t <= T; ++t)
    for (int k = 1; k <= T; ++k) {
      const auto& f = ns.propensity.fits[static_cast<std::size_t>(t)][static_cast<std::size_t>(k - 1)];
      if (f.separated)
        ns.warnings.push_back("propensity t=" + std::to_string(t) + " k=" + std::to_string(k) + ": separation");
      else if (!f.converged)
        ns.warnings.push_back("propensity t=" + std::to_string(t) + " k=" + std::to_string(k) + ": not converged");
    }
  auto pfit = std::make_shared<const PropensityFit>(ns.propensity);
  auto supported = ns.group_supported;
  const double eta = options.eta;
  ns.group_probs = [pfit, supported, eta](int t, std::span<const double> x, std::span<double> probs) {
    const int TT = pfit->T;
    const auto& fits = pfit->fits[static_cast<std::size_t>(t)];
    std::vector<double> cdf(static_cast<std::size_t>(TT));
    for (int k = 1; k <= TT; ++k) {
      const auto kk = static_cast<std::size_t>(k - 1);
      if (pfit->degenerate[kk]) {
        cdf[kk] = pfit->frequency[kk];
        continue;
      }
      const Eigen::VectorXd& b = fits[kk].coef;
      double lin = b[0];
      for (std::size_t j = 0; j < x.size(); ++j) lin += b[static_cast<Eigen::Index>(j + 1)] * x[j];
      cdf[kk] = expit(lin);
    }
    std::sort(cdf.begin(), cdf.end());
    double prev = 0.0;
    for (int k = 1; k <= TT; ++k) {
      const double c = cdf[static_cast<std::size_t>(k - 1)];
      probs[static_cast<std::size_t>(k - 1)] = c - prev;
      prev = c;
    }
    probs[static_cast<std::size_t>(TT)] = 1.0 - prev;
    return clip_distribution(probs, supported, eta);
  };
  return ns;
}

NuisanceSet misspecify(NuisanceSet ns, Misspecify which) {
  if (which == Misspecify::outcome || which == Misspecify::both) {
    ns.outcome_misspecified = true;
    ns.mu0 = [](int, int, std::span<const double>) { return 0.0; };
    ns.mu = [](int, int, std::span<const double>) { return 0.0; };
    ns.delta_inf = [](int, std::span<const double>, std::span<const double>) { return 0.0; };
  }
  if (which == Misspecify::propensity || which == Misspecify::both) {
    ns.propensity_misspecified = true;
    auto supported = ns.group_supported;
    const auto m = static_cast<double>(std::count(supported.begin(), supported.end(), true));
    ns.group_probs = [supported, m](int, std::span<const double>, std::span<double> probs) {
      for (std::size_t s = 0; s < probs.size(); ++s) probs[s] = supported[s] ? 1.0 / m : 0.0;
      return false;
    };
  }
  return ns;
}

std::string coefficients_csv(const NuisanceSet& ns) {
  std::ostringstream os;
  os << "model,term,estimate\n";
  for (std::size_t j = 0; j < ns.outcome_fit.columns.size(); ++j)
    os << "outcome," << csv::escape(ns.outcome_fit.columns[j]) << ','
       << csv::format_double(ns.outcome_fit.coef[static_cast<Eigen::Index>(j)]) << '\n';
  if (ns.variance_fit)
    for (std::size_t j = 0; j < ns.variance_fit->columns.size(); ++j)
      os << "variance," << csv::escape(ns.variance_fit->columns[j]) << ','
         << csv::format_double(ns.variance_fit->coef[static_cast<Eigen::Index>(j)]) << '\n';
  for (int t = 0; t <= ns.propensity.T; ++t)
    for (int k = 1; k <= ns.propensity.T; ++k) {
      const auto& f = ns.propensity.fits[static_cast<std::size_t>(t)][static_cast<std::size_t>(k - 1)];
      for (std::size_t j = 0; j < ns.propensity.column_names.size(); ++j)
        os << "propensity_t" << t << "_k" << k << ',' << csv::escape(ns.propensity.column_names[j]) << ','
           << csv::format_double(f.coef[static_cast<Eigen::Index>(j)]) << '\n';
    }
  return os.str();
}

}  // namespace stagdid
