#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unistd.h>

#include "stagdid/estimators.hpp"
#include "stagdid/inference.hpp"
#include "stagdid/linmod.hpp"
#include "stagdid/panel.hpp"
#include "stagdid/report.hpp"
#include "stagdid/simlab.hpp"

namespace stagdid::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Files staged in memory and published together: each goes to a temp name in
/// its target directory, then all are renamed. Nothing is left on failure.
class OutputBatch {
 public:
  void add(fs::path path, std::string content) { files_.emplace_back(std::move(path), std::move(content)); }

  void commit() {
    std::vector<std::pair<fs::path, fs::path>> staged;
    try {
      for (const auto& [path, content] : files_) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        fs::path tmp = path;
        tmp += ".tmp" + std::to_string(::getpid());
        std::ofstream os(tmp, std::ios::binary);
        staged.emplace_back(tmp, path);
        os << content;
        os.close();
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
      }
      for (const auto& [tmp, path] : staged) fs::rename(tmp, path);
    } catch (...) {
      std::error_code ec;
      for (const auto& [tmp, path] : staged) fs::remove(tmp, ec);
      throw;
    }
  }

 private:
  std::vector<std::pair<fs::path, std::string>> files_;
};

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct EstimateConfig {
  std::string input;
  std::string unit_col = "unit";
  std::string period_col = "period";
  std::string group_col = "group";
  std::string treat_col;
  std::string outcome_col = "y";
  std::vector<std::string> covariates;
  std::vector<std::string> estimators{"aipw", "aivw"};
  std::vector<std::string> aggregates{"cell", "overall"};
  long long base_period = -1;
  bool base_period_set = false;
  double level = 0.95;
  double eta = 0.01;
  bool homoskedastic = false;
  double logit_tol = 1e-8;
  int logit_max_iter = 100;
  std::string out_dir = ".";
};

struct SimulateConfig {
  int scenario = 1;
  std::size_t n = 2000;
  std::size_t reps = 1000;
  std::uint64_t seed = 1;
  std::vector<std::string> methods{"twfe", "aipw", "aivw"};
  std::size_t workers = 1;
  double level = 0.95;
  double eta = 0.01;
  bool homoskedastic = false;
  bool aggregates = false;
  std::string export_panel;
  std::string out_dir = ".";
};

struct ReportConfig {
  std::string input;
  std::string format = "csv";
  std::string table = "cells";
};

json echo(const EstimateConfig& c) {
  return {{"command", "estimate"},
          {"input", c.input},
          {"unit_col", c.unit_col},
          {"period_col", c.period_col},
          {"group_col", c.treat_col.empty() ? c.group_col : ""},
          {"treat_col", c.treat_col},
          {"outcome_col", c.outcome_col},
          {"covariates", c.covariates},
          {"estimators", c.estimators},
          {"aggregates", c.aggregates},
          {"base_period", c.base_period_set ? json(c.base_period) : json(nullptr)},
          {"level", c.level},
          {"eta", c.eta},
          {"homoskedastic", c.homoskedastic},
          {"logit_tol", c.logit_tol},
          {"logit_max_iter", c.logit_max_iter},
          {"out_dir", c.out_dir}};
}

void check_common(double level, double eta) {
  if (!(level > 0.0 && level < 1.0)) throw InputError("level must lie in (0, 1)");
  if (!(eta > 0.0 && eta < 0.5)) throw InputError("eta must lie in (0, 0.5)");
}

int cmd_estimate(const EstimateConfig& c, std::ostream& out) {
  check_common(c.level, c.eta);
  std::vector<Method> methods;
  for (const auto& e : c.estimators) {
    const Method m = parse_method(e);
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }
  bool want_cells = false;
  std::vector<AggregateKind> kinds;
  for (const auto& a : c.aggregates) {
    if (a == "cell") want_cells = true;
    else kinds.push_back(parse_aggregate(a));
  }

  CsvSchema schema;
  schema.unit = c.unit_col;
  schema.period = c.period_col;
  schema.group = c.treat_col.empty() ? c.group_col : "";
  schema.treat = c.treat_col;
  schema.outcome = c.outcome_col;
  schema.covariates = c.covariates;
  const Panel panel = load_long_csv(c.input, schema);

  int base = -1;
  if (c.base_period_set) {
    const auto& labels = panel.period_labels();
    const auto it = std::find(labels.begin(), labels.end(), c.base_period);
    if (it == labels.end()) throw InputError("base period " + std::to_string(c.base_period) + " is not a panel period");
    base = static_cast<int>(it - labels.begin());
  }

  NuisanceOptions nopt;
  nopt.heteroskedastic = !c.homoskedastic;
  nopt.eta = c.eta;
  nopt.logit.tol = c.logit_tol;
  nopt.logit.max_iter = c.logit_max_iter;

  json report;
  report["config"] = echo(c);
  report["panel"] = {{"n_units", panel.n_units()},
                     {"periods", panel.period_labels()},
                     {"covariates", panel.covariate_names()},
                     {"tally", to_json(tally(panel))},
                     {"checks", to_json(validate(panel))}};
  report["cells"] = json::array();
  report["aggregates"] = json::array();
  report["twfe"] = json::array();
  json skipped = json::array();
  json warnings = json::array();
  std::size_t clipped = 0, floors = 0;

  std::vector<CellEstimate> all_cells;
  std::vector<AggregateEstimate> all_aggs;
  OutputBatch batch;
  const fs::path dir = c.out_dir;

  const bool need_fit = std::any_of(methods.begin(), methods.end(), [](Method m) { return m != Method::twfe; });
  std::optional<NuisanceSet> ns;
  std::optional<FittedTable> table;
  if (need_fit) {
    ns = fit_nuisances(panel, nopt);
    table = tabulate(panel, *ns);
    clipped = table->clipped_evals;
    floors = table->ratio_floors;
    for (const auto& w : ns->warnings) warnings.push_back(w);
    json fits = json::array();
    for (int t = 0; t <= ns->propensity.T; ++t)
      for (int k = 1; k <= ns->propensity.T; ++k) {
        const auto& f = ns->propensity.fits[static_cast<std::size_t>(t)][static_cast<std::size_t>(k - 1)];
        fits.push_back({{"t", t},
                        {"k", k},
                        {"degenerate", static_cast<bool>(ns->propensity.degenerate[static_cast<std::size_t>(k - 1)])},
                        {"converged", f.converged},
                        {"separated", f.separated},
                        {"iterations", f.iterations},
                        {"score_norm", f.score_norm}});
      }
    report["nuisances"] = {{"outcome_rank", ns->outcome_fit.rank},
                           {"outcome_orthogonality", ns->outcome_fit.orthogonality},
                           {"variance_model", ns->variance_fit.has_value()},
                           {"sigma2_homoskedastic", ns->sigma2_homoskedastic},
                           {"propensity", fits}};
    batch.add(dir / "coefficients.csv", coefficients_csv(*ns));
  }

  for (Method m : methods) {
    if (m == Method::twfe) {
      report["twfe"].push_back(to_json(twfe(panel), c.level));
      continue;
    }
    const auto sweep = estimate_cells(*table, m, base);
    for (const auto& s : sweep.skipped)
      skipped.push_back({{"method", to_string(m)}, {"g", s.g}, {"t", s.t}, {"reason", s.reason}});
    for (const auto& cell : sweep.cells) {
      report["cells"].push_back(to_json(cell, c.level));
      all_cells.push_back(cell);
    }
    for (AggregateKind k : kinds) {
      const auto aggs = aggregate_all(panel, sweep, k, c.level);
      for (const auto& a : aggs) {
        report["aggregates"].push_back(to_json(a));
        all_aggs.push_back(a);
      }
      if (k == AggregateKind::dynamic && has_influence(m))
        batch.add(dir / ("event_study_" + to_string(m) + ".csv"), event_study_csv(aggs));
    }
  }
  report["diagnostics"] = {
      {"clipped_evals", clipped}, {"ratio_floors", floors}, {"skipped_cells", skipped}, {"warnings", warnings}};

  if (want_cells) batch.add(dir / "cells.csv", cells_csv(all_cells));
  if (!kinds.empty()) batch.add(dir / "aggregates.csv", aggregates_csv(all_aggs));
  batch.add(dir / "report.json", report.dump(2) + "\n");
  batch.commit();

  out << "wrote " << (dir / "report.json").string() << " (" << all_cells.size() << " cells, " << all_aggs.size()
      << " aggregates, " << skipped.size() << " skipped)\n";
  return kOk;
}

int cmd_simulate(const SimulateConfig& c, std::ostream& out) {
  check_common(c.level, c.eta);
  check_scenario(c.scenario);
  if (c.n < 1) throw InputError("n must be positive");
  ScenarioSpec spec{c.scenario, c.n, c.seed};
  McOptions opt;
  for (const auto& m : c.methods) opt.methods.push_back(parse_mc_method(m));
  opt.reps = c.reps;
  opt.workers = std::max<std::size_t>(c.workers, 1);
  opt.level = c.level;
  opt.collect_aggregates = c.aggregates;
  opt.nuisance.eta = c.eta;
  opt.nuisance.heteroskedastic = !c.homoskedastic;

  OutputBatch batch;
  const fs::path dir = c.out_dir;
  if (!c.export_panel.empty()) batch.add(c.export_panel, to_long_csv(generate(spec)));
  const McReport report = run_mc(spec, opt);
  batch.add(dir / "mc.csv", mc_csv(report));
  if (c.aggregates) batch.add(dir / "mc_detail.csv", mc_detail_csv(report));
  batch.add(dir / "mc.json", to_json(report).dump(2) + "\n");
  batch.commit();
  out << mc_csv(report);
  return kOk;
}

int cmd_report(const ReportConfig& c, std::ostream& out) {
  json j;
  try {
    j = json::parse(read_file(c.input));
  } catch (const json::parse_error& e) {
    throw InputError("not a JSON report: " + std::string(e.what()));
  }
  if (c.format == "json") {
    out << j.dump(2) << "\n";
    return kOk;
  }
  try {
    if (j.contains("rows")) out << mc_csv(j);
    else if (c.table == "aggregates") out << aggregates_csv(j);
    else out << cells_csv(j);
  } catch (const json::exception& e) {
    throw InputError("report is missing expected fields: " + std::string(e.what()));
  }
  return kOk;
}

/// Expands `--config FILE` into flags placed before the command-line flags.
/// The file holds `key = value` lines named like the long flags; list values
/// may be comma separated or bracketed, booleans switch flags. A key that is
/// also given on the command line is skipped, so flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  std::string path;
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) {
      path = args[++k];
    } else if (args[k].rfind("--config=", 0) == 0) {
      path = args[k].substr(9);
    } else {
      rest.push_back(args[k]);
    }
  }
  if (path.empty() || rest.empty()) return rest;

  auto given = [&](const std::string& key) {
    return std::any_of(rest.begin(), rest.end(), [&](const std::string& a) {
      return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
    });
  };
  auto strip = [](std::string v) {
    std::string out;
    for (char c : v)
      if (c != '[' && c != ']' && c != '"' && c != '\'') out.push_back(c);
    const auto b = out.find_first_not_of(" \t"), e = out.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : out.substr(b, e - b + 1);
  };

  std::vector<std::string> out{rest[0]};
  std::istringstream is(read_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (strip(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = strip(line.substr(0, eq));
    std::string value = strip(line.substr(eq + 1));
    value.erase(std::remove(value.begin(), value.end(), ' '), value.end());
    if (given(key)) continue;
    if (value == "true") {
      out.push_back("--" + key);
    } else if (value != "false") {
      out.push_back("--" + key);
      out.push_back(value);
    }
  }
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

json error_json(const std::string& kind, const std::string& message) {
  return {{"status", "error"}, {"kind", kind}, {"message", message}};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Doubly robust ATT estimation for staggered difference-in-differences", "stagdid"};
  app.require_subcommand(1);

  EstimateConfig ec;
  auto* est = app.add_subcommand("estimate", "estimate group-period and aggregated ATTs from a panel CSV");
  est->add_option("--config", "flat key = value file; command-line flags take precedence");
  est->add_option("--input", ec.input, "long-format panel CSV")->required()->check(CLI::ExistingFile);
  est->add_option("--unit-col", ec.unit_col);
  est->add_option("--period-col", ec.period_col);
  est->add_option("--group-col", ec.group_col, "first treated period; Inf/never/empty for never treated");
  est->add_option("--treat-col", ec.treat_col, "0/1 treatment indicator, instead of --group-col");
  est->add_option("--outcome-col", ec.outcome_col);
  est->add_option("--covariates", ec.covariates)->delimiter(',');
  est->add_option("--estimator", ec.estimators, "twfe|reg|wt-nt|wt-ny|aipw|aivw")->delimiter(',');
  est->add_option("--aggregate", ec.aggregates, "cell|group|period|dynamic|overall")->delimiter(',');
  auto* base_opt = est->add_option("--base-period", ec.base_period, "base period label for reg and wt estimators");
  est->add_option("--level", ec.level);
  est->add_option("--eta", ec.eta, "probability clipping bound");
  est->add_flag("--homoskedastic", ec.homoskedastic, "constant working variance (AIVW reduces to AIPW)");
  est->add_option("--logit-tol", ec.logit_tol);
  est->add_option("--logit-max-iter", ec.logit_max_iter);
  est->add_option("--out-dir", ec.out_dir);

  SimulateConfig sc;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo study on a built-in scenario");
  sim->add_option("--config", "flat key = value file; command-line flags take precedence");
  sim->add_option("--scenario", sc.scenario, "1..6")->required();
  sim->add_option("--n", sc.n);
  sim->add_option("--reps", sc.reps);
  sim->add_option("--seed", sc.seed);
  sim->add_option("--methods", sc.methods, "method or method/outcome|propensity|both")->delimiter(',');
  sim->add_option("--workers", sc.workers);
  sim->add_option("--level", sc.level);
  sim->add_option("--eta", sc.eta);
  sim->add_flag("--homoskedastic", sc.homoskedastic);
  sim->add_flag("--aggregates", sc.aggregates, "also summarize cells and group/period/dynamic ATTs");
  sim->add_option("--export-panel", sc.export_panel, "write the panel drawn with --seed as CSV");
  sim->add_option("--out-dir", sc.out_dir);

  ReportConfig rc;
  auto* rep = app.add_subcommand("report", "re-emit a saved JSON report");
  rep->add_option("--input", rc.input)->required()->check(CLI::ExistingFile);
  rep->add_option("--format", rc.format)->check(CLI::IsMember({"csv", "json"}));
  rep->add_option("--table", rc.table, "cells|aggregates for estimate reports")
      ->check(CLI::IsMember({"cells", "aggregates"}));

  try {
    const auto expanded = expand_config(args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << error_json("usage", e.what()).dump() << "\n";
    return kUserError;
  } catch (const InputError& e) {
    err << error_json("input", e.what()).dump() << "\n";
    return kUserError;
  }
  ec.base_period_set = base_opt->count() > 0;

  try {
    if (est->parsed()) return cmd_estimate(ec, out);
    if (sim->parsed()) return cmd_simulate(sc, out);
    return cmd_report(rc, out);
  } catch (const InputError& e) {
    err << error_json("input", e.what()).dump() << "\n";
    return kUserError;
  } catch (const std::exception& e) {
    err << error_json("internal", e.what()).dump() << "\n";
    return kInternal;
  }
}

}  // namespace stagdid::cli
