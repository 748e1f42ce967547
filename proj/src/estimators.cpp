#include "stagdid/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stagdid/inference.hpp"

namespace stagdid {

std::string to_string(Method m) {
  switch (m) {
    case Method::twfe: return "twfe";
    case Method::reg: return "reg";
    case Method::wt_never: return "wt-nt";
    case Method::wt_notyet: return "wt-ny";
    case Method::aipw: return "aipw";
    case Method::aivw: return "aivw";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "twfe") return Method::twfe;
  if (name == "reg") return Method::reg;
  if (name == "wt-nt") return Method::wt_never;
  if (name == "wt-ny") return Method::wt_notyet;
  if (name == "aipw") return Method::aipw;
  if (name == "aivw") return Method::aivw;
  throw InputError("unknown estimator '" + name + "' (expected twfe|reg|wt-nt|wt-ny|aipw|aivw)");
}

IvwWeights ivw_weights(std::span<const double> pi, std::span<const double> sigma2, int k, int T) {
  IvwWeights out;
  out.k = k;
  out.weight.assign(static_cast<std::size_t>(T) + 1, 0.0);
  double total = 0.0;
  for (std::size_t s = 0; s <= static_cast<std::size_t>(T); ++s) {
    if (slot_group(s, T) <= k) continue;
    if (pi[s] < 0.0 || !(sigma2[s] > 0.0))
      throw std::invalid_argument("ivw_weights: probabilities must be >= 0 and variances > 0");
    out.weight[s] = pi[s] / sigma2[s];
    total += out.weight[s];
  }
  if (!(total > 0.0)) throw std::invalid_argument("ivw_weights: no comparison groups at period " + std::to_string(k));
  for (double& w : out.weight) w /= total;
  return out;
}

FittedTable tabulate(const Panel& panel, const NuisanceSet& ns) {
  FittedTable tb;
  tb.panel = &panel;
  tb.T = panel.T();
  tb.n = panel.n_units();
  tb.eta = ns.eta;
  tb.tally = tally(panel);
  const int T = tb.T;
  const auto n = static_cast<Eigen::Index>(tb.n);
  const std::size_t P = static_cast<std::size_t>(T) + 1;
  tb.dy = Eigen::MatrixXd::Zero(n, T + 1);
  tb.delta = Eigen::MatrixXd::Zero(n, T + 1);
  tb.dmu = Eigen::MatrixXd::Zero(n, T + 1);
  tb.resid0 = Eigen::MatrixXd::Zero(n, T + 1);
  tb.survivor = Eigen::MatrixXd::Zero(n, T + 1);
  tb.ivw_own = Eigen::MatrixXd::Zero(n, T + 1);
  tb.probs.assign(tb.n * P * P, 0.0);
  tb.sigma2.assign(tb.n * P * P, std::nan(""));

  for (std::size_t i = 0; i < tb.n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const int G = panel.group(i);
    for (int t = 0; t <= T; ++t) {
      const auto x = panel.x(i, t);
      const std::size_t base = (i * P + static_cast<std::size_t>(t)) * P;
      std::span<double> pr(tb.probs.data() + base, P);
      if (ns.group_probs(t, x, pr)) ++tb.clipped_evals;
      tb.resid0(ii, t) = panel.y(i, t) - ns.mu0(G, t, x);
      double surv = 0.0;
      for (std::size_t s = 0; s < P; ++s)
        if (slot_group(s, T) > t) surv += pr[s];
      tb.survivor(ii, t) = surv;
      if (t == 0) continue;

      const auto xm = panel.x(i, t - 1);
      tb.dy(ii, t) = panel.y(i, t) - panel.y(i, t - 1);
      tb.delta(ii, t) = ns.delta_inf(t, x, xm);
      tb.dmu(ii, t) = ns.mu(G, t, x) - ns.mu(G, t - 1, xm);
      for (std::size_t s = 0; s < P; ++s) {
        const int l = slot_group(s, T);
        if (l > t) tb.sigma2[base + s] = ns.sigma2(l, t, x);
      }
      if (G > t) {
        if (pr[group_slot(G, T)] < tb.eta) ++tb.ratio_floors;
        try {
          const auto w = ivw_weights(pr, std::span<const double>(tb.sigma2.data() + base, P), t, T);
          tb.ivw_own(ii, t) = w.weight[group_slot(G, T)];
        } catch (const std::invalid_argument&) {
          tb.ivw_own(ii, t) = 0.0;
        }
      }
    }
  }
  return tb;
}

namespace {

std::size_t count_group(const FittedTable& tb, int g) { return tb.tally.count(g); }

std::size_t count_later(const FittedTable& tb, int k) {
  std::size_t c = 0;
  for (std::size_t s = 0; s < tb.tally.counts.size(); ++s)
    if (slot_group(s, tb.T) > k) c += tb.tally.counts[s];
  return c;
}

/// Weight on a not-yet-treated unit i at period k in the augmentation term.
double comparison_weight(const FittedTable& tb, Method method, std::size_t i, int g, int k) {
  const int G = tb.group(i);
  const double pg = tb.prob(i, k, g);
  if (method == Method::aivw) {
    const double pG = std::max(tb.prob(i, k, G), tb.eta);
    return pg / pG * tb.ivw_own(static_cast<Eigen::Index>(i), k);
  }
  return pg / tb.survivor(static_cast<Eigen::Index>(i), k);
}

}  // namespace

std::optional<std::string> cell_unavailable(const FittedTable& tb, Method method, int g, int t, int base_period) {
  if (method == Method::twfe) return "twfe has no cell estimates";
  if (g < 1 || g > tb.T || t < g || t > tb.T)
    return "cell (" + std::to_string(g) + "," + std::to_string(t) + ") outside 1 <= g <= t <= T";
  if (count_group(tb, g) == 0) return "no units in group " + std::to_string(g);
  int first_k = g;
  if (method == Method::reg || method == Method::wt_never || method == Method::wt_notyet) {
    const int s = base_period < 0 ? g - 1 : base_period;
    if (s >= g) return "base period " + std::to_string(s) + " is not before group " + std::to_string(g);
    first_k = s + 1;
  }
  if (method == Method::wt_never) {
    if (count_group(tb, kNever) == 0) return "no never-treated units";
    return std::nullopt;
  }
  if (method == Method::reg) return std::nullopt;
  for (int k = first_k; k <= t; ++k)
    if (count_later(tb, k) == 0) return "no comparison units at period " + std::to_string(k);
  return std::nullopt;
}

CellEstimate att_cell(const FittedTable& tb, Method method, int g, int t, int base_period) {
  if (auto why = cell_unavailable(tb, method, g, t, base_period)) throw std::invalid_argument(*why);
  const Panel& panel = *tb.panel;
  const double pg = tb.tally.prop(g);
  CellEstimate c;
  c.g = g;
  c.t = t;
  c.method = method;
  c.n_treated = count_group(tb, g);
  c.contributions = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tb.n));

  switch (method) {
    case Method::aipw:
    case Method::aivw: {
      c.n_comparison = count_later(tb, g);
      for (std::size_t i = 0; i < tb.n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const int G = panel.group(i);
        double v = 0.0;
        for (int k = g; k <= t; ++k) {
          const double r = tb.dy(ii, k) - tb.delta(ii, k);
          if (G == g) v += r;
          if (G > k) v -= comparison_weight(tb, method, i, g, k) * r;
        }
        c.contributions[ii] = v / pg;
      }
      break;
    }
    case Method::reg: {
      const int s = base_period < 0 ? g - 1 : base_period;
      c.base_period = s;
      c.n_comparison = count_later(tb, g);
      for (std::size_t i = 0; i < tb.n; ++i) {
        if (panel.group(i) != g) continue;
        const auto ii = static_cast<Eigen::Index>(i);
        double v = 0.0;
        for (int k = s + 1; k <= t; ++k) v += tb.dmu(ii, k) - tb.delta(ii, k);
        c.contributions[ii] = v / pg;
      }
      break;
    }
    case Method::wt_never:
    case Method::wt_notyet: {
      const int s = base_period < 0 ? g - 1 : base_period;
      c.base_period = s;
      const bool never = method == Method::wt_never;
      c.n_comparison = never ? count_group(tb, kNever) : count_later(tb, g);
      for (std::size_t i = 0; i < tb.n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const int G = panel.group(i);
        double v = 0.0;
        if (G == g) v += panel.y(i, t) - panel.y(i, s);
        for (int k = s + 1; k <= t; ++k) {
          if (never) {
            if (G == kNever) v -= tb.prob(i, k, g) / std::max(tb.prob(i, k, kNever), tb.eta) * tb.dy(ii, k);
          } else if (G > k) {
            v -= tb.prob(i, k, g) / tb.survivor(ii, k) * tb.dy(ii, k);
          }
        }
        c.contributions[ii] = v / pg;
      }
      break;
    }
    case Method::twfe:
      break;
  }
  c.estimate = c.contributions.mean();
  return c;
}

CellEstimate att_cell_aivw(const Panel& panel, const NuisanceSet& ns, int g, int t) {
  const auto tb = tabulate(panel, ns);
  auto c = att_cell(tb, Method::aivw, g, t);
  c.se = if_se(cell_if(panel, c));
  return c;
}

CellEstimate att_cell_aipw(const Panel& panel, const NuisanceSet& ns, int g, int t) {
  const auto tb = tabulate(panel, ns);
  auto c = att_cell(tb, Method::aipw, g, t);
  c.se = if_se(cell_if(panel, c));
  return c;
}

CellEstimate att_cell_reg(const Panel& panel, const NuisanceSet& ns, int g, int t, int base_period) {
  return att_cell(tabulate(panel, ns), Method::reg, g, t, base_period);
}

CellEstimate att_cell_wt(const Panel& panel, const NuisanceSet& ns, int g, int t, int base_period,
                         bool never_treated_only) {
  return att_cell(tabulate(panel, ns), never_treated_only ? Method::wt_never : Method::wt_notyet, g, t, base_period);
}

CellSweep estimate_cells(const FittedTable& tb, Method method, int base_period) {
  CellSweep sweep;
  sweep.method = method;
  for (int g = 1; g <= tb.T; ++g)
    for (int t = g; t <= tb.T; ++t) {
      if (auto why = cell_unavailable(tb, method, g, t, base_period)) {
        sweep.skipped.push_back({g, t, *why});
        continue;
      }
      auto c = att_cell(tb, method, g, t, base_period);
      if (has_influence(method)) c.se = if_se(cell_if(*tb.panel, c));
      sweep.cells.push_back(std::move(c));
    }
  return sweep;
}

TwfeResult twfe(const Panel& panel) {
  const std::size_t n = panel.n_units();
  const int P = panel.n_periods();
  Eigen::MatrixXd Y(static_cast<Eigen::Index>(n), P), D(static_cast<Eigen::Index>(n), P);
  for (std::size_t i = 0; i < n; ++i)
    for (int t = 0; t < P; ++t) {
      Y(static_cast<Eigen::Index>(i), t) = panel.y(i, t);
      D(static_cast<Eigen::Index>(i), t) = panel.treated(i, t) ? 1.0 : 0.0;
    }
  auto within = [](const Eigen::MatrixXd& M) {
    const Eigen::VectorXd unit_mean = M.rowwise().mean();
    const Eigen::RowVectorXd period_mean = M.colwise().mean();
    Eigen::MatrixXd out = M;
    out.colwise() -= unit_mean;
    out.rowwise() -= period_mean;
    out.array() += M.mean();
    return out;
  };
  const Eigen::MatrixXd Yw = within(Y), Dw = within(D);
  const double sdd = Dw.squaredNorm();
  if (sdd <= 1e-12 * static_cast<double>(Dw.size()))
    throw InputError("twfe: treatment has no within variation (all treated or all control)");

  TwfeResult out;
  out.n_units = n;
  out.estimate = (Dw.array() * Yw.array()).sum() / sdd;
  const Eigen::MatrixXd e = Yw - out.estimate * Dw;
  const Eigen::VectorXd score = (Dw.array() * e.array()).rowwise().sum();
  const double G = static_cast<double>(n);
  const double meat = score.squaredNorm() * (G > 1 ? G / (G - 1.0) : 1.0);
  out.se = std::sqrt(meat) / sdd;
  return out;
}

double h_weight(const FittedTable& tb, Method method, std::size_t i, int t, int g, int r) {
  const int G = tb.group(i);
  double v = 0.0;
  if (G == g) v += (t == r ? 1.0 : 0.0) - (t == g - 1 ? 1.0 : 0.0);
  for (int k = g; k <= r; ++k) {
    if (!(G > k)) continue;
    const double ind = (t == k ? 1.0 : 0.0) - (t == k - 1 ? 1.0 : 0.0);
    if (ind != 0.0) v -= comparison_weight(tb, method, i, g, k) * ind;
  }
  return v;
}

double h_overall(const FittedTable& tb, Method method, std::size_t i, int t) {
  double v = 0.0;
  for (int r = 1; r <= tb.T; ++r)
    for (int g = 1; g <= r; ++g) v += h_weight(tb, method, i, t, g, r);
  return v;
}

double h_overall_aipw_closed(const FittedTable& tb, std::size_t i, int t) {
  const int T = tb.T;
  const int G = tb.group(i);
  const auto ii = static_cast<Eigen::Index>(i);
  auto odds = [&](int s) {
    double below = 0.0;
    for (int l = 1; l <= s; ++l) below += tb.prob(i, s, l);
    return below / tb.survivor(ii, s);
  };
  const double d_t = G <= t ? 1.0 : 0.0;
  double v = d_t;
  if (G != kNever && t == G - 1) v -= static_cast<double>(T - G + 1);
  v -= odds(t) * static_cast<double>(T - t + 1) * (1.0 - d_t);
  if (t < T) {
    const double d_next = G <= t + 1 ? 1.0 : 0.0;
    v += odds(t + 1) * static_cast<double>(T - t) * (1.0 - d_next);
  }
  return v;
}

}  // namespace stagdid
