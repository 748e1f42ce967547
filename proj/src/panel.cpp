#include "stagdid/panel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "csv.hpp"

namespace stagdid {

std::string group_label(int g) { return g == kNever ? "Inf" : std::to_string(g); }

Panel::Panel(std::size_t n_units, int T, std::vector<std::string> covariate_names)
    : T_(T),
      groups_(n_units, kNever),
      y_(n_units * static_cast<std::size_t>(T + 1), std::nan("")),
      x_(n_units * static_cast<std::size_t>(T + 1) * covariate_names.size(), std::nan("")),
      covariate_names_(std::move(covariate_names)) {
  if (T < 1) throw InputError("panel needs at least two periods (T >= 1)");
  unit_ids_.reserve(n_units);
  for (std::size_t i = 0; i < n_units; ++i) unit_ids_.push_back(std::to_string(i));
  for (int t = 0; t <= T; ++t) period_labels_.push_back(t);
}

bool Panel::cell_present(std::size_t i, int t) const {
  if (std::isnan(y(i, t))) return false;
  for (double v : x(i, t))
    if (std::isnan(v)) return false;
  return true;
}

double GroupTally::prop(int g) const { return proportions[group_slot(g, T)]; }
std::size_t GroupTally::count(int g) const { return counts[group_slot(g, T)]; }

GroupTally tally(const Panel& panel) {
  GroupTally out;
  out.T = panel.T();
  out.n = panel.n_units();
  out.counts.assign(static_cast<std::size_t>(panel.T()) + 1, 0);
  for (int g : panel.groups()) ++out.counts[group_slot(g, panel.T())];
  out.proportions.resize(out.counts.size());
  for (std::size_t s = 0; s < out.counts.size(); ++s)
    out.proportions[s] = out.n ? static_cast<double>(out.counts[s]) / static_cast<double>(out.n) : 0.0;
  return out;
}

std::vector<CheckResult> validate(const Panel& panel) {
  std::vector<CheckResult> out;
  const int T = panel.T();
  const std::size_t n = panel.n_units();

  {
    CheckResult c{"balance", CheckStatus::pass, "every (unit, period) cell present"};
    std::size_t missing = 0;
    std::string first;
    for (std::size_t i = 0; i < n; ++i)
      for (int t = 0; t <= T; ++t)
        if (!panel.cell_present(i, t)) {
          if (missing++ == 0)
            first = "unit " + panel.unit_ids()[i] + " period " +
                    std::to_string(panel.period_labels()[static_cast<std::size_t>(t)]);
        }
    if (missing > 0) {
      c.status = CheckStatus::fail;
      c.message = std::to_string(missing) + " missing (unit, period) cell(s); first: " + first;
    }
    out.push_back(c);
  }

  {
    CheckResult c{"group_labels", CheckStatus::pass, "group labels in {1..T, Inf}"};
    for (std::size_t i = 0; i < n; ++i) {
      const int g = panel.group(i);
      if (g != kNever && (g < 1 || g > T)) {
        c.status = CheckStatus::fail;
        c.message = "unit " + panel.unit_ids()[i] + " has group label " + std::to_string(g) +
                    (g == 0 ? " (treated in the pre-treatment period)" : " (outside 1..T)");
        break;
      }
    }
    out.push_back(c);
  }

  {
    CheckResult c{"monotone_treatment", CheckStatus::pass, "treatment never reverts"};
    if (const auto& d = panel.treatment_paths()) {
      for (std::size_t i = 0; i < n && c.status == CheckStatus::pass; ++i) {
        const auto& row = (*d)[i];
        for (std::size_t t = 1; t < row.size(); ++t)
          if (row[t] < row[t - 1]) {
            c.status = CheckStatus::fail;
            c.message = "non-monotone treatment for unit " + panel.unit_ids()[i];
            break;
          }
      }
    }
    out.push_back(c);
  }

  const GroupTally tl = tally(panel);
  {
    CheckResult c{"group_support", CheckStatus::pass, "every group 1..T has units"};
    std::string empty;
    for (int g = 1; g <= T; ++g)
      if (tl.count(g) == 0) empty += (empty.empty() ? "" : ",") + std::to_string(g);
    if (!empty.empty()) {
      c.status = CheckStatus::warn;
      c.message = "no units in group(s) " + empty + "; their cells are not estimable";
    }
    out.push_back(c);
  }

  {
    CheckResult c{"positivity", CheckStatus::pass, "a comparison group exists at every period"};
    std::string bad;
    for (int t = 1; t <= T; ++t) {
      std::size_t later = 0;
      for (int g : panel.groups())
        if (g > t) ++later;
      if (later == 0) bad += (bad.empty() ? "" : ",") + std::to_string(t);
    }
    if (!bad.empty()) {
      c.status = CheckStatus::warn;
      c.message = "no not-yet-treated or never-treated units at period(s) " + bad;
    }
    out.push_back(c);
  }

  {
    CheckResult c{"treated_units", CheckStatus::pass, "some units are treated"};
    if (tl.count(kNever) == n) {
      c.status = CheckStatus::warn;
      c.message = "no unit is ever treated";
    }
    out.push_back(c);
  }
  return out;
}

bool checks_pass(const std::vector<CheckResult>& checks) {
  return std::none_of(checks.begin(), checks.end(),
                      [](const CheckResult& c) { return c.status == CheckStatus::fail; });
}

namespace {

bool is_never_token(const std::string& s) {
  std::string l;
  for (char c : s) l.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return l.empty() || l == "inf" || l == "+inf" || l == "infinity" || l == "never" || l == "na_never";
}

std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return j;
  throw InputError("missing column '" + name + "'");
}

}  // namespace

Panel parse_long_csv(const std::string& text, const CsvSchema& schema) {
  const auto lines = csv::lines(text);
  if (lines.empty()) throw InputError("empty CSV (header required)");

  std::vector<std::string> header;
  for (auto& h : csv::split_record(lines[0])) header.push_back(csv::trim(h));

  const bool by_group = schema.treat.empty();
  if (by_group && schema.group.empty()) throw InputError("either a group or a treat column is required");
  const std::size_t c_unit = find_column(header, schema.unit);
  const std::size_t c_period = find_column(header, schema.period);
  const std::size_t c_assign = find_column(header, by_group ? schema.group : schema.treat);
  const std::size_t c_y = find_column(header, schema.outcome);
  std::vector<std::size_t> c_x;
  for (const auto& name : schema.covariates) c_x.push_back(find_column(header, name));

  struct Row {
    std::size_t unit;
    long long period;
    std::string assign;
    double y;
    std::vector<double> x;
  };
  std::vector<Row> rows;
  rows.reserve(lines.size() - 1);
  std::vector<std::string> unit_ids;
  std::unordered_map<std::string, std::size_t> unit_index;
  std::vector<long long> periods;

  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const auto f = csv::split_record(lines[ln]);
    const std::string where = "line " + std::to_string(ln + 1);
    if (f.size() != header.size())
      throw InputError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(f.size()));
    Row r;
    const std::string uid = csv::trim(f[c_unit]);
    auto [it, inserted] = unit_index.emplace(uid, unit_ids.size());
    if (inserted) unit_ids.push_back(uid);
    r.unit = it->second;
    if (!csv::parse_int(f[c_period], r.period))
      throw InputError(where + ": non-numeric period '" + f[c_period] + "'");
    r.assign = csv::trim(f[c_assign]);
    if (!csv::parse_double(f[c_y], r.y))
      throw InputError(where + ": non-numeric outcome '" + f[c_y] + "'");
    for (std::size_t j = 0; j < c_x.size(); ++j) {
      double v = 0.0;
      if (!csv::parse_double(f[c_x[j]], v))
        throw InputError(where + ": non-numeric covariate " + schema.covariates[j] + " '" + f[c_x[j]] + "'");
      r.x.push_back(v);
    }
    periods.push_back(r.period);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw InputError("CSV has a header but no data rows");

  std::sort(periods.begin(), periods.end());
  periods.erase(std::unique(periods.begin(), periods.end()), periods.end());
  if (periods.size() < 2) throw InputError("panel needs at least two periods");
  const int T = static_cast<int>(periods.size()) - 1;
  auto period_index = [&](long long label) -> int {
    auto it = std::lower_bound(periods.begin(), periods.end(), label);
    return (it != periods.end() && *it == label) ? static_cast<int>(it - periods.begin()) : -1;
  };

  Panel panel(unit_ids.size(), T, schema.covariates);
  panel.set_unit_ids(unit_ids);
  panel.set_period_labels(periods);

  std::vector<std::optional<int>> unit_group(unit_ids.size());
  std::vector<std::vector<int>> paths;
  if (!by_group) paths.assign(unit_ids.size(), std::vector<int>(periods.size(), -1));

  for (const Row& r : rows) {
    const int t = period_index(r.period);
    if (!std::isnan(panel.y(r.unit, t)))
      throw InputError("duplicate row for unit " + unit_ids[r.unit] + " period " + std::to_string(r.period));
    panel.y(r.unit, t) = r.y;
    auto xs = panel.x(r.unit, t);
    std::copy(r.x.begin(), r.x.end(), xs.begin());

    if (by_group) {
      int g = 0;
      if (is_never_token(r.assign)) {
        g = kNever;
      } else {
        long long label = 0;
        if (!csv::parse_int(r.assign, label))
          throw InputError("unit " + unit_ids[r.unit] + ": non-numeric group '" + r.assign + "'");
        if (label > periods.back()) {
          g = kNever;  // first treated after the observation window
        } else {
          g = period_index(label);
          if (g < 0)
            throw InputError("unit " + unit_ids[r.unit] + ": group " + r.assign + " is not a panel period");
          if (g == 0)
            throw InputError("unit " + unit_ids[r.unit] + ": group label 0 (treated in the first period)");
        }
      }
      if (unit_group[r.unit] && *unit_group[r.unit] != g)
        throw InputError("unit " + unit_ids[r.unit] + ": group label changes over time");
      unit_group[r.unit] = g;
    } else {
      long long d = 0;
      if (!csv::parse_int(r.assign, d) || (d != 0 && d != 1))
        throw InputError("unit " + unit_ids[r.unit] + ": treatment must be 0/1, got '" + r.assign + "'");
      paths[r.unit][static_cast<std::size_t>(t)] = static_cast<int>(d);
    }
  }

  for (std::size_t i = 0; i < unit_ids.size(); ++i) {
    if (by_group) {
      panel.set_group(i, unit_group[i].value_or(kNever));
      continue;
    }
    int g = kNever;
    int prev = 0;
    for (std::size_t t = 0; t < paths[i].size(); ++t) {
      const int d = paths[i][t];
      if (d < 0) continue;  // missing cell, reported by the balance check
      if (d < prev) throw InputError("non-monotone treatment for unit " + unit_ids[i]);
      if (d == 1 && prev == 0) g = static_cast<int>(t);
      prev = d;
    }
    if (g == 0) throw InputError("unit " + unit_ids[i] + ": group label 0 (treated in the first period)");
    panel.set_group(i, g);
  }
  if (!by_group) panel.set_treatment_paths(std::move(paths));

  const auto checks = validate(panel);
  for (const auto& c : checks)
    if (c.status == CheckStatus::fail) throw InputError(c.name + ": " + c.message);
  return panel;
}

Panel load_long_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_long_csv(ss.str(), schema);
}

std::string to_long_csv(const Panel& panel) {
  std::ostringstream os;
  os << "unit,period,group,y";
  for (const auto& name : panel.covariate_names()) os << ',' << csv::escape(name);
  os << '\n';
  const auto& labels = panel.period_labels();
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    const int g = panel.group(i);
    const std::string glabel = g == kNever ? "Inf" : std::to_string(labels[static_cast<std::size_t>(g)]);
    for (int t = 0; t <= panel.T(); ++t) {
      os << csv::escape(panel.unit_ids()[i]) << ',' << labels[static_cast<std::size_t>(t)] << ',' << glabel << ','
         << csv::format_double(panel.y(i, t));
      for (double v : panel.x(i, t)) os << ',' << csv::format_double(v);
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace stagdid
