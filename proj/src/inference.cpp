#include "stagdid/inference.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <map>
#include <stdexcept>

namespace stagdid {

Eigen::VectorXd cell_if(const Panel& panel, const CellEstimate& cell) {
  const double pg = tally(panel).prop(cell.g);
  Eigen::VectorXd f = cell.contributions;
  for (std::size_t i = 0; i < panel.n_units(); ++i)
    if (panel.group(i) == cell.g) f[static_cast<Eigen::Index>(i)] -= cell.estimate / pg;
  return f;
}

double if_se(const Eigen::VectorXd& influence) {
  const auto n = static_cast<double>(influence.size());
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(influence.squaredNorm() / n / n);
}

Interval ci(double estimate, double se, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("ci: level must lie in (0, 1)");
  if (se < 0.0) throw std::invalid_argument("ci: negative standard error");
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
  return {estimate - z * se, estimate + z * se};
}

InfluenceTable influence_table(const Panel& panel, const CellSweep& sweep) {
  InfluenceTable tab;
  tab.method = sweep.method;
  tab.values.resize(static_cast<Eigen::Index>(panel.n_units()), static_cast<Eigen::Index>(sweep.cells.size()));
  for (std::size_t c = 0; c < sweep.cells.size(); ++c) {
    tab.cells.emplace_back(sweep.cells[c].g, sweep.cells[c].t);
    tab.values.col(static_cast<Eigen::Index>(c)) = cell_if(panel, sweep.cells[c]);
  }
  return tab;
}

std::string to_string(AggregateKind kind) {
  switch (kind) {
    case AggregateKind::group: return "group";
    case AggregateKind::period: return "period";
    case AggregateKind::dynamic: return "dynamic";
    case AggregateKind::overall: return "overall";
  }
  return "?";
}

AggregateKind parse_aggregate(const std::string& name) {
  if (name == "group") return AggregateKind::group;
  if (name == "period") return AggregateKind::period;
  if (name == "dynamic") return AggregateKind::dynamic;
  if (name == "overall") return AggregateKind::overall;
  throw InputError("unknown aggregate '" + name + "' (expected group|period|dynamic|overall)");
}

std::vector<std::pair<int, int>> aggregate_members(int T, AggregateKind kind, int index) {
  std::vector<std::pair<int, int>> out;
  for (int g = 1; g <= T; ++g)
    for (int t = g; t <= T; ++t) {
      bool in = false;
      switch (kind) {
        case AggregateKind::group: in = g == index; break;
        case AggregateKind::period: in = t == index; break;
        case AggregateKind::dynamic: in = t == g + index - 1; break;
        case AggregateKind::overall: in = true; break;
      }
      if (in) out.emplace_back(g, t);
    }
  return out;
}

AggregateEstimate aggregate(const Panel& panel, const CellSweep& sweep, AggregateKind kind, int index, double level) {
  AggregateEstimate agg;
  agg.kind = kind;
  agg.index = kind == AggregateKind::overall ? 0 : index;
  agg.method = sweep.method;
  agg.level = level;

  std::map<std::pair<int, int>, const CellEstimate*> by_cell;
  for (const auto& c : sweep.cells) by_cell[{c.g, c.t}] = &c;

  const auto tl = tally(panel);
  std::vector<const CellEstimate*> used;
  std::vector<double> base;
  for (const auto& key : aggregate_members(panel.T(), kind, agg.index)) {
    auto it = by_cell.find(key);
    if (it == by_cell.end()) {
      agg.missing.push_back(key);
      continue;
    }
    used.push_back(it->second);
    agg.members.push_back(key);
    base.push_back(kind == AggregateKind::group ? 1.0 : tl.prop(key.first));
  }
  if (used.empty()) return agg;
  agg.available = true;
  agg.partial = !agg.missing.empty();

  double total = 0.0;
  for (double a : base) total += a;
  agg.estimate = 0.0;
  for (std::size_t c = 0; c < used.size(); ++c) {
    agg.weights.push_back(base[c] / total);
    agg.estimate += agg.weights.back() * used[c]->estimate;
  }
  if (!has_influence(sweep.method)) return agg;

  const auto n = static_cast<Eigen::Index>(panel.n_units());
  agg.influence = Eigen::VectorXd::Zero(n);
  for (std::size_t c = 0; c < used.size(); ++c) {
    const int g = used[c]->g;
    const double pg = tl.prop(g);
    agg.influence += agg.weights[c] * used[c]->contributions;
    for (Eigen::Index i = 0; i < n; ++i)
      if (panel.group(static_cast<std::size_t>(i)) == g) agg.influence[i] -= agg.weights[c] * agg.estimate / pg;
  }
  agg.se = if_se(agg.influence);
  agg.interval = ci(agg.estimate, agg.se, level);
  return agg;
}

std::vector<AggregateEstimate> aggregate_all(const Panel& panel, const CellSweep& sweep, AggregateKind kind,
                                             double level) {
  std::vector<AggregateEstimate> out;
  if (kind == AggregateKind::overall) {
    out.push_back(aggregate(panel, sweep, kind, 0, level));
    return out;
  }
  for (int j = 1; j <= panel.T(); ++j) out.push_back(aggregate(panel, sweep, kind, j, level));
  return out;
}

double cell_via_h(const FittedTable& tb, Method method, int g, int r) {
  double sum = 0.0;
  for (std::size_t i = 0; i < tb.n; ++i)
    for (int t = 0; t <= tb.T; ++t) {
      const double h = h_weight(tb, method, i, t, g, r);
      if (h != 0.0) sum += h * tb.resid0(static_cast<Eigen::Index>(i), t);
    }
  return sum / static_cast<double>(tb.n) / tb.tally.prop(g);
}

AggregateEstimate overall_via_h(const FittedTable& tb, Method method, double level) {
  if (!has_influence(method)) throw std::invalid_argument("overall_via_h: needs aipw or aivw weights");
  const Panel& panel = *tb.panel;
  AggregateEstimate agg;
  agg.kind = AggregateKind::overall;
  agg.method = method;
  agg.level = level;
  for (int g = 1; g <= tb.T; ++g)
    for (int t = g; t <= tb.T; ++t) {
      if (auto why = cell_unavailable(tb, method, g, t, -1)) agg.missing.emplace_back(g, t);
      else agg.members.emplace_back(g, t);
    }
  if (!agg.missing.empty())
    throw std::invalid_argument("overall_via_h: the full triangle of cells must be estimable");

  const auto n = static_cast<Eigen::Index>(tb.n);
  Eigen::MatrixXd H(n, tb.T + 1), D(n, tb.T + 1);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int t = 0; t <= tb.T; ++t) {
      H(i, t) = h_overall(tb, method, static_cast<std::size_t>(i), t);
      D(i, t) = panel.treated(static_cast<std::size_t>(i), t) ? 1.0 : 0.0;
    }
  const double hr = (H.array() * tb.resid0.array()).sum();
  const double d_total = D.sum();
  agg.available = true;
  agg.estimate = hr / d_total;
  const double d_bar = d_total / static_cast<double>(n);
  agg.influence = ((H.array() * (tb.resid0.array() - D.array() * agg.estimate)).rowwise().sum() / d_bar).matrix();
  agg.se = if_se(agg.influence);
  agg.interval = ci(agg.estimate, agg.se, level);

  double total = 0.0;
  for (const auto& m : agg.members) total += tb.tally.prop(m.first);
  for (const auto& m : agg.members) agg.weights.push_back(tb.tally.prop(m.first) / total);
  return agg;
}

}  // namespace stagdid
