#include "stagdid/simlab.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <thread>

#include "stagdid/rng.hpp"

namespace stagdid {

void check_scenario(int id) {
  if (id < 1 || id > 6) throw InputError("scenario must be 1..6, got " + std::to_string(id));
}

double survivor_prob(int k, double index) {
  if (k <= 0) return 1.0;
  if (k > kSimPeriods) return 0.0;
  return 1.0 / (1.0 + std::exp(kZeta[static_cast<std::size_t>(k - 1)] + index));
}

Panel generate(const ScenarioSpec& spec) {
  check_scenario(spec.id);
  constexpr int T = kSimPeriods;
  Panel panel(spec.n, T, {"z1", "z2", "z3", "z3_lag"});
  Rng rng(spec.seed);
  const bool hetero_effect = spec.effect() == Effect::heterogeneous;
  const ErrorKind error = spec.error();

  for (std::size_t i = 0; i < spec.n; ++i) {
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    std::array<double, T + 1> z3{};
    for (int t = 0; t <= T; ++t) z3[static_cast<std::size_t>(t)] = rng.normal() * (1.0 + 0.1 * t);

    const double index = 0.3 * z1 + 0.4 * z2;
    const double u = rng.uniform();
    int G = kNever;
    for (int k = 1; k <= T; ++k)
      if (u < 1.0 - survivor_prob(k, index)) {
        G = k;
        break;
      }
    panel.set_group(i, G);
    const double gnum = numeric_group(G, T);
    const double xi = rng.normal();

    double cumulative = 0.0;
    for (int t = 0; t <= T; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      double ut = 0.0;
      switch (error) {
        case ErrorKind::homoskedastic:
          ut = rng.normal();
          break;
        case ErrorKind::heteroskedastic:
          ut = rng.normal() * std::exp(0.5 * (0.2 * z2 + 0.3 * t - 0.3 * gnum));
          break;
        case ErrorKind::cumulative:
          cumulative += rng.normal() * std::exp(0.5 * (0.2 * z2 + 0.3 * t - 0.3 * gnum));
          ut = cumulative;
          break;
      }
      double y = 0.5 * (1.0 + t) * z1 + z2 + 0.2 * t + 0.1 * gnum + xi + ut;
      if (G <= t) {
        y += 1.0 + z3[ts];
        if (hetero_effect) y += (0.5 + 0.2 * z3[ts]) * static_cast<double>(t - G);
      }
      panel.y(i, t) = y;
      auto x = panel.x(i, t);
      x[0] = z1;
      x[1] = z2;
      x[2] = z3[ts];
      x[3] = t == 0 ? 0.0 : z3[ts - 1];
    }
  }
  return panel;
}

std::vector<double> true_group_props() {
  using boost::math::quadrature::gauss_kronrod;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> out;
  for (int g = 1; g <= kSimPeriods + 1; ++g) {
    auto f = [g](double v) {
      const double density = std::exp(-2.0 * v * v) / std::sqrt(std::numbers::pi / 2.0);
      return (survivor_prob(g - 1, v) - survivor_prob(g, v)) * density;
    };
    out.push_back(gauss_kronrod<double, 61>::integrate(f, -inf, inf, 15, 1e-14));
  }
  return out;
}

double true_cell_att(Effect effect, int g, int t) {
  return effect == Effect::homogeneous ? 1.0 : 1.0 + 0.5 * static_cast<double>(t - g);
}

double true_aggregate(const ScenarioSpec& spec, AggregateKind kind, int index) {
  static const std::vector<double> pi = true_group_props();
  double num = 0.0, den = 0.0;
  for (const auto& [g, t] : aggregate_members(kSimPeriods, kind, index)) {
    const double a = kind == AggregateKind::group ? 1.0 : pi[static_cast<std::size_t>(g - 1)];
    num += a * true_cell_att(spec.effect(), g, t);
    den += a;
  }
  return num / den;
}

TruthTables true_atts(const ScenarioSpec& spec) {
  TruthTables tt;
  tt.overall = true_aggregate(spec, AggregateKind::overall, 0);
  for (int j = 1; j <= kSimPeriods; ++j) {
    tt.group.push_back(true_aggregate(spec, AggregateKind::group, j));
    tt.period.push_back(true_aggregate(spec, AggregateKind::period, j));
    tt.dynamic.push_back(true_aggregate(spec, AggregateKind::dynamic, j));
  }
  return tt;
}

double true_overall_att(const ScenarioSpec& spec) { return true_aggregate(spec, AggregateKind::overall, 0); }

std::string McMethod::label() const {
  std::string s = to_string(method);
  if (misspecified) {
    switch (*misspecified) {
      case Misspecify::outcome: s += "/outcome"; break;
      case Misspecify::propensity: s += "/propensity"; break;
      case Misspecify::both: s += "/both"; break;
    }
  }
  return s;
}

McMethod parse_mc_method(const std::string& label) {
  McMethod m;
  const auto slash = label.find('/');
  m.method = parse_method(label.substr(0, slash));
  if (slash == std::string::npos) return m;
  const std::string which = label.substr(slash + 1);
  if (which == "outcome") m.misspecified = Misspecify::outcome;
  else if (which == "propensity") m.misspecified = Misspecify::propensity;
  else if (which == "both") m.misspecified = Misspecify::both;
  else throw InputError("unknown misspecification '" + which + "' (expected outcome|propensity|both)");
  if (m.method == Method::twfe) throw InputError("twfe has no nuisance models to misspecify");
  return m;
}

void Moments::add(double v) {
  ++count;
  const double d = v - mean;
  mean += d / static_cast<double>(count);
  m2 += d * (v - mean);
}

double Moments::sd() const { return count > 1 ? std::sqrt(m2 / static_cast<double>(count - 1)) : 0.0; }

double McSummary::mc_se() const { return replicates > 0 ? sd / std::sqrt(static_cast<double>(replicates)) : 0.0; }

namespace {

struct Target {
  std::string name;
  bool cell = false;
  int g = 0, t = 0;
  AggregateKind kind = AggregateKind::overall;
  int index = 0;
};

std::vector<Target> detail_targets() {
  std::vector<Target> out;
  for (int g = 1; g <= kSimPeriods; ++g)
    for (int t = g; t <= kSimPeriods; ++t)
      out.push_back({"cell " + std::to_string(g) + "," + std::to_string(t), true, g, t});
  for (auto kind : {AggregateKind::group, AggregateKind::period, AggregateKind::dynamic})
    for (int j = 1; j <= kSimPeriods; ++j) {
      Target tg;
      tg.name = to_string(kind) + " " + std::to_string(j);
      tg.kind = kind;
      tg.index = j;
      out.push_back(tg);
    }
  return out;
}

struct Replicate {
  std::vector<double> est, se;    // [method]
  std::vector<double> dest, dse;  // [method * targets + target]
  FitDiagnostics diag;
};

void note_if(FitDiagnostics& d, const Eigen::VectorXd& f) {
  if (f.size() > 0) d.max_abs_if_mean = std::max(d.max_abs_if_mean, std::abs(f.mean()));
}

Replicate run_replicate(const ScenarioSpec& spec, const McOptions& opt, const std::vector<Target>& targets) {
  const std::size_t M = opt.methods.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Replicate rep;
  rep.est.assign(M, nan);
  rep.se.assign(M, nan);
  if (opt.collect_aggregates) {
    rep.dest.assign(M * targets.size(), nan);
    rep.dse.assign(M * targets.size(), nan);
  }
  const Panel panel = generate(spec);

  bool need_fit = false;
  for (const auto& m : opt.methods) need_fit = need_fit || m.method != Method::twfe;
  std::optional<NuisanceSet> ns;
  std::array<std::optional<FittedTable>, 4> tables;  // correct, outcome, propensity, both
  if (need_fit) {
    try {
      ns = fit_nuisances(panel, opt.nuisance);
    } catch (const std::exception&) {
      rep.diag.failed_replicates = 1;
    }
  }
  if (ns) {
    auto& d = rep.diag;
    d.max_ols_orthogonality = ns->outcome_fit.orthogonality;
    if (ns->variance_fit) d.max_ols_orthogonality = std::max(d.max_ols_orthogonality, ns->variance_fit->orthogonality);
    for (std::size_t k = 0; k < ns->propensity.degenerate.size(); ++k) {
      if (ns->propensity.degenerate[k]) continue;
      for (const auto& per_t : ns->propensity.fits) {
        const auto& f = per_t[k];
        d.max_logit_score = std::max(d.max_logit_score, f.score_norm);
        if (!f.converged) ++d.logit_nonconverged;
        if (f.separated) ++d.logit_separated;
      }
    }
  }

  for (std::size_t m = 0; m < M; ++m) {
    const McMethod& mm = opt.methods[m];
    try {
      if (mm.method == Method::twfe) {
        const auto r = twfe(panel);
        rep.est[m] = r.estimate;
        rep.se[m] = r.se;
        continue;
      }
      if (!ns) continue;
      const std::size_t v = mm.misspecified ? static_cast<std::size_t>(*mm.misspecified) + 1 : 0;
      if (!tables[v]) {
        tables[v] = mm.misspecified ? tabulate(panel, misspecify(*ns, *mm.misspecified)) : tabulate(panel, *ns);
        if (v == 0) {
          rep.diag.clipped_evals += tables[v]->clipped_evals;
          rep.diag.ratio_floors += tables[v]->ratio_floors;
        }
      }
      const FittedTable& tb = *tables[v];
      const auto sweep = estimate_cells(tb, mm.method);
      const auto overall = aggregate(panel, sweep, AggregateKind::overall, 0, opt.level);
      if (!overall.available || overall.partial) continue;
      rep.est[m] = overall.estimate;
      rep.se[m] = overall.se;
      note_if(rep.diag, overall.influence);
      if (!opt.collect_aggregates) continue;
      for (std::size_t j = 0; j < targets.size(); ++j) {
        const Target& tg = targets[j];
        double e = nan, s = nan;
        if (tg.cell) {
          for (const auto& c : sweep.cells)
            if (c.g == tg.g && c.t == tg.t) {
              e = c.estimate;
              s = c.se;
              if (has_influence(mm.method)) note_if(rep.diag, cell_if(panel, c));
            }
        } else {
          const auto a = aggregate(panel, sweep, tg.kind, tg.index, opt.level);
          if (a.available && !a.partial) {
            e = a.estimate;
            s = a.se;
            note_if(rep.diag, a.influence);
          }
        }
        rep.dest[m * targets.size() + j] = e;
        rep.dse[m * targets.size() + j] = s;
      }
    } catch (const std::exception&) {
      // recorded as a failure through the NaN estimate
    }
  }
  return rep;
}

struct Accumulator {
  Moments est;
  double se_sum = 0.0;
  std::size_t se_count = 0;
  std::size_t hits = 0;
  std::size_t failures = 0;

  void add(double e, double s, double truth, double z) {
    if (!std::isfinite(e)) {
      ++failures;
      return;
    }
    est.add(e);
    if (std::isfinite(s)) {
      se_sum += s;
      ++se_count;
      if (std::abs(e - truth) <= z * s) ++hits;
    }
  }

  McSummary summary(std::string label, std::string target, double truth) const {
    McSummary s;
    s.label = std::move(label);
    s.target = std::move(target);
    s.truth = truth;
    s.replicates = est.count;
    s.failures = failures;
    s.mean_estimate = est.mean;
    s.bias = est.mean - truth;
    s.sd = est.sd();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean_se = se_count > 0 ? se_sum / static_cast<double>(se_count) : nan;
    s.coverage = se_count > 0 ? static_cast<double>(hits) / static_cast<double>(se_count) : nan;
    return s;
  }
};

}  // namespace

McReport run_mc(const ScenarioSpec& spec, const McOptions& opt) {
  check_scenario(spec.id);
  if (opt.reps < 2) throw InputError("reps must be at least 2");
  if (opt.methods.empty()) throw InputError("no methods requested");
  const auto targets = detail_targets();

  std::vector<Replicate> reps(opt.reps);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t r = next++; r < opt.reps; r = next++) {
      ScenarioSpec s = spec;
      s.seed = replicate_seed(spec.seed, r);
      reps[r] = run_replicate(s, opt, targets);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(opt.workers, 1, opt.reps);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  McReport report;
  report.spec = spec;
  report.options = opt;
  report.truth = true_overall_att(spec);
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + opt.level / 2.0);
  const std::size_t M = opt.methods.size();

  std::vector<Accumulator> acc(M), dacc(opt.collect_aggregates ? M * targets.size() : 0);
  std::vector<double> dtruth;
  for (const auto& tg : targets)
    dtruth.push_back(tg.cell ? true_cell_att(spec.effect(), tg.g, tg.t) : true_aggregate(spec, tg.kind, tg.index));

  auto& d = report.diagnostics;
  for (const auto& rep : reps) {
    for (std::size_t m = 0; m < M; ++m) acc[m].add(rep.est[m], rep.se[m], report.truth, z);
    for (std::size_t j = 0; j < dacc.size(); ++j) dacc[j].add(rep.dest[j], rep.dse[j], dtruth[j % targets.size()], z);
    d.max_ols_orthogonality = std::max(d.max_ols_orthogonality, rep.diag.max_ols_orthogonality);
    d.max_logit_score = std::max(d.max_logit_score, rep.diag.max_logit_score);
    d.logit_nonconverged += rep.diag.logit_nonconverged;
    d.logit_separated += rep.diag.logit_separated;
    d.clipped_evals += rep.diag.clipped_evals;
    d.ratio_floors += rep.diag.ratio_floors;
    d.max_abs_if_mean = std::max(d.max_abs_if_mean, rep.diag.max_abs_if_mean);
    d.failed_replicates += rep.diag.failed_replicates;
  }
  for (std::size_t m = 0; m < M; ++m) report.rows.push_back(acc[m].summary(opt.methods[m].label(), "overall", report.truth));
  for (std::size_t j = 0; j < dacc.size(); ++j) {
    const std::size_t m = j / targets.size(), k = j % targets.size();
    if (opt.methods[m].method == Method::twfe) continue;
    report.detail.push_back(dacc[j].summary(opt.methods[m].label(), targets[k].name, dtruth[k]));
  }
  return report;
}

}  // namespace stagdid
