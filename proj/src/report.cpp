#include "stagdid/report.hpp"

#include <cmath>
#include <sstream>

#include "csv.hpp"

namespace stagdid {

using nlohmann::json;

namespace {

std::string num(double v) { return csv::format_double(v); }

double num(const json& j) { return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN(); }

std::string check_status(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::warn: return "warn";
    case CheckStatus::fail: return "fail";
  }
  return "?";
}

}  // namespace

json to_json(const GroupTally& tl) {
  json groups = json::array();
  for (std::size_t s = 0; s < tl.counts.size(); ++s)
    groups.push_back({{"group", group_label(slot_group(s, tl.T))},
                      {"count", tl.counts[s]},
                      {"proportion", tl.proportions[s]}});
  return {{"n", tl.n}, {"T", tl.T}, {"groups", groups}};
}

json to_json(const std::vector<CheckResult>& checks) {
  json out = json::array();
  for (const auto& c : checks)
    out.push_back({{"check", c.name}, {"status", check_status(c.status)}, {"message", c.message}});
  return out;
}

json to_json(const CellEstimate& c, double level) {
  json j = {{"g", c.g},
            {"t", c.t},
            {"method", to_string(c.method)},
            {"estimate", c.estimate},
            {"se", c.se},
            {"n_treated", c.n_treated},
            {"n_comparison", c.n_comparison}};
  if (std::isfinite(c.se)) {
    const auto iv = ci(c.estimate, c.se, level);
    j["lo"] = iv.lo;
    j["hi"] = iv.hi;
  }
  if (c.base_period >= 0) j["base_period"] = c.base_period;
  return j;
}

json to_json(const AggregateEstimate& a) {
  json members = json::array();
  for (std::size_t k = 0; k < a.members.size(); ++k)
    members.push_back({{"g", a.members[k].first}, {"t", a.members[k].second}, {"weight", a.weights[k]}});
  json missing = json::array();
  for (const auto& m : a.missing) missing.push_back({{"g", m.first}, {"t", m.second}});
  return {{"kind", to_string(a.kind)},
          {"index", a.index},
          {"method", to_string(a.method)},
          {"available", a.available},
          {"partial", a.partial},
          {"estimate", a.estimate},
          {"se", a.se},
          {"lo", a.interval.lo},
          {"hi", a.interval.hi},
          {"level", a.level},
          {"members", members},
          {"missing", missing}};
}

json to_json(const TwfeResult& r, double level) {
  const auto iv = ci(r.estimate, r.se, level);
  return {{"method", "twfe"}, {"estimate", r.estimate}, {"se", r.se}, {"lo", iv.lo}, {"hi", iv.hi},
          {"level", level}, {"n_units", r.n_units}};
}

json to_json(const McSummary& s) {
  return {{"method", s.label},  {"target", s.target},         {"truth", s.truth},
          {"bias", s.bias},     {"sd", s.sd},                 {"se", s.mean_se},
          {"cp", s.coverage},   {"mean_estimate", s.mean_estimate}, {"replicates", s.replicates},
          {"failures", s.failures}};
}

json to_json(const McReport& r) {
  json methods = json::array();
  for (const auto& m : r.options.methods) methods.push_back(m.label());
  json rows = json::array(), detail = json::array();
  for (const auto& s : r.rows) rows.push_back(to_json(s));
  for (const auto& s : r.detail) detail.push_back(to_json(s));
  const auto& d = r.diagnostics;
  return {{"config",
           {{"scenario", r.spec.id},
            {"n", r.spec.n},
            {"seed", r.spec.seed},
            {"reps", r.options.reps},
            {"workers", r.options.workers},
            {"methods", methods},
            {"level", r.options.level},
            {"eta", r.options.nuisance.eta},
            {"heteroskedastic", r.options.nuisance.heteroskedastic},
            {"aggregates", r.options.collect_aggregates}}},
          {"rng", r.rng},
          {"truth", r.truth},
          {"rows", rows},
          {"detail", detail},
          {"diagnostics",
           {{"max_ols_orthogonality", d.max_ols_orthogonality},
            {"max_logit_score", d.max_logit_score},
            {"logit_nonconverged", d.logit_nonconverged},
            {"logit_separated", d.logit_separated},
            {"clipped_evals", d.clipped_evals},
            {"ratio_floors", d.ratio_floors},
            {"max_abs_if_mean", d.max_abs_if_mean},
            {"failed_replicates", d.failed_replicates}}}};
}

std::string cells_csv(const std::vector<CellEstimate>& cells) {
  std::ostringstream os;
  os << "g,t,estimate,se,n_treated,n_comparison,method\n";
  for (const auto& c : cells)
    os << c.g << ',' << c.t << ',' << num(c.estimate) << ',' << num(c.se) << ',' << c.n_treated << ','
       << c.n_comparison << ',' << to_string(c.method) << '\n';
  return os.str();
}

std::string aggregates_csv(const std::vector<AggregateEstimate>& aggs) {
  std::ostringstream os;
  os << "method,kind,index,estimate,se,lo,hi,level,partial\n";
  for (const auto& a : aggs)
    os << to_string(a.method) << ',' << to_string(a.kind) << ',' << a.index << ',' << num(a.estimate) << ','
       << num(a.se) << ',' << num(a.interval.lo) << ',' << num(a.interval.hi) << ',' << num(a.level) << ','
       << (a.partial ? 1 : 0) << '\n';
  return os.str();
}

std::string event_study_csv(const std::vector<AggregateEstimate>& dynamic) {
  std::ostringstream os;
  os << "s,estimate,lo,hi\n";
  for (const auto& a : dynamic)
    if (a.kind == AggregateKind::dynamic && a.available)
      os << a.index << ',' << num(a.estimate) << ',' << num(a.interval.lo) << ',' << num(a.interval.hi) << '\n';
  return os.str();
}

std::string mc_csv(const McReport& r) { return mc_csv(to_json(r)); }

std::string mc_detail_csv(const McReport& r) {
  std::ostringstream os;
  os << "method,target,truth,mean_estimate,bias,sd,se,cp,replicates,failures\n";
  for (const auto& s : r.detail)
    os << csv::escape(s.label) << ',' << csv::escape(s.target) << ',' << num(s.truth) << ',' << num(s.mean_estimate)
       << ',' << num(s.bias) << ',' << num(s.sd) << ',' << num(s.mean_se) << ',' << num(s.coverage) << ','
       << s.replicates << ',' << s.failures << '\n';
  return os.str();
}

std::string cells_csv(const json& report) {
  std::ostringstream os;
  os << "g,t,estimate,se,n_treated,n_comparison,method\n";
  for (const auto& c : report.at("cells"))
    os << c.at("g").get<int>() << ',' << c.at("t").get<int>() << ',' << num(num(c.at("estimate"))) << ','
       << num(num(c.at("se"))) << ',' << c.at("n_treated").get<std::size_t>() << ','
       << c.at("n_comparison").get<std::size_t>() << ',' << c.at("method").get<std::string>() << '\n';
  return os.str();
}

std::string aggregates_csv(const json& report) {
  std::ostringstream os;
  os << "method,kind,index,estimate,se,lo,hi,level,partial\n";
  for (const auto& a : report.at("aggregates"))
    os << a.at("method").get<std::string>() << ',' << a.at("kind").get<std::string>() << ','
       << a.at("index").get<int>() << ',' << num(num(a.at("estimate"))) << ',' << num(num(a.at("se"))) << ','
       << num(num(a.at("lo"))) << ',' << num(num(a.at("hi"))) << ',' << num(num(a.at("level"))) << ','
       << (a.at("partial").get<bool>() ? 1 : 0) << '\n';
  return os.str();
}

std::string mc_csv(const json& report) {
  std::ostringstream os;
  os << "method,bias,sd,se,cp,replicates,failures,truth\n";
  for (const auto& s : report.at("rows"))
    os << csv::escape(s.at("method").get<std::string>()) << ',' << num(num(s.at("bias"))) << ','
       << num(num(s.at("sd"))) << ',' << num(num(s.at("se"))) << ',' << num(num(s.at("cp"))) << ','
       << s.at("replicates").get<std::size_t>() << ',' << s.at("failures").get<std::size_t>() << ','
       << num(num(s.at("truth"))) << '\n';
  return os.str();
}

}  // namespace stagdid
