#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cli.hpp"
#include "stagdid/panel.hpp"
#include "stagdid/simlab.hpp"

using namespace stagdid;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("stagdid_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

std::string slurp(const fs::path& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const char* kP1 =
    "unit,period,group,y\n"
    "a,0,1,0\na,1,1,3\nb,0,1,1\nb,1,1,4\n"
    "c,0,Inf,0\nc,1,Inf,2\nd,0,Inf,1\nd,1,Inf,2\n";

}  // namespace

TEST_CASE("estimate on the micro-panel writes the overall ATT") {
  const auto dir = scratch("p1");
  write(dir / "p1.csv", kP1);
  const auto r = run({"estimate", "--input", (dir / "p1.csv").string(), "--estimator", "aipw", "--aggregate",
                      "overall", "--out-dir", (dir / "out").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
  REQUIRE(j["aggregates"].size() == 1);
  CHECK(j["aggregates"][0]["estimate"].get<double>() == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(j["config"]["estimators"][0] == "aipw");
  CHECK(j["diagnostics"]["skipped_cells"].empty());
  CHECK(fs::exists(dir / "out" / "aggregates.csv"));
  CHECK_FALSE(fs::exists(dir / "out" / "cells.csv"));
}

TEST_CASE("homoskedastic AIVW output equals AIPW output") {
  const auto dir = scratch("collapse");
  write(dir / "panel.csv", to_long_csv(generate({4, 300, 3})));
  auto go = [&](const std::string& est, const std::string& out) {
    const auto r = run({"estimate", "--input", (dir / "panel.csv").string(), "--group-col", "group", "--outcome-col",
                        "y", "--covariates", "z1,z2,z3,z3_lag", "--estimator", est, "--aggregate",
                        "cell,group,period,dynamic,overall", "--homoskedastic", "--out-dir", (dir / out).string()});
    REQUIRE(r.code == 0);
    return nlohmann::json::parse(slurp(dir / out / "report.json"));
  };
  const auto a = go("aipw", "a"), v = go("aivw", "v");
  REQUIRE(a["cells"].size() == 10);
  for (std::size_t k = 0; k < a["cells"].size(); ++k) {
    CHECK(a["cells"][k]["estimate"].get<double>() == doctest::Approx(v["cells"][k]["estimate"].get<double>()).epsilon(1e-12));
    CHECK(a["cells"][k]["se"].get<double>() == doctest::Approx(v["cells"][k]["se"].get<double>()).epsilon(1e-12));
  }
  for (std::size_t k = 0; k < a["aggregates"].size(); ++k)
    CHECK(a["aggregates"][k]["estimate"].get<double>() ==
          doctest::Approx(v["aggregates"][k]["estimate"].get<double>()).epsilon(1e-12));
  const auto es = slurp(dir / "a" / "event_study_aipw.csv");
  CHECK(es.rfind("s,estimate,lo,hi\n", 0) == 0);
}

TEST_CASE("input errors exit 2 with a JSON diagnostic and no outputs") {
  const auto dir = scratch("bad");
  write(dir / "bad.csv", "unit,period,group,y\n0,0,Inf,1\n0,1,Inf,oops\n");
  const auto r = run({"estimate", "--input", (dir / "bad.csv").string(), "--out-dir", (dir / "out").string()});
  CHECK(r.code == 2);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["status"] == "error");
  CHECK(j["kind"] == "input");
  CHECK_FALSE(fs::exists(dir / "out"));

  write(dir / "ok.csv", kP1);
  CHECK(run({"estimate", "--input", (dir / "ok.csv").string(), "--eta", "0.7"}).code == 2);
  CHECK(run({"estimate", "--input", (dir / "ok.csv").string(), "--estimator", "ols"}).code == 2);
  CHECK(run({"estimate", "--input", (dir / "missing.csv").string()}).code == 2);
  CHECK(run({"simulate", "--scenario", "8"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
}

TEST_CASE("simulate is reproducible and worker-count independent") {
  const auto dir = scratch("sim");
  auto sim = [&](const std::string& out, const std::string& workers) {
    const auto r = run({"simulate", "--scenario", "1", "--n", "100", "--reps", "12", "--seed", "7", "--workers", workers,
                        "--out-dir", (dir / out).string()});
    REQUIRE(r.code == 0);
    return slurp(dir / out / "mc.json") + slurp(dir / out / "mc.csv");
  };
  const auto first = sim("a", "1");
  CHECK(first == sim("b", "1"));
  const auto eight = sim("c", "8");
  // The config echo records the worker count; everything else must match.
  auto strip = [](std::string s) {
    const auto at = s.find("\"workers\"");
    return s.erase(at, s.find('\n', at) - at);
  };
  CHECK(strip(first) == strip(eight));
  const auto j = nlohmann::json::parse(slurp(dir / "a" / "mc.json"));
  CHECK(j["rng"] == kRngId);
  CHECK(j["rows"].size() == 3);

  const auto rep = run({"report", "--input", (dir / "a" / "mc.json").string(), "--format", "csv"});
  CHECK(rep.code == 0);
  CHECK(rep.out == slurp(dir / "a" / "mc.csv"));
}

TEST_CASE("flags override a flat config file") {
  const auto dir = scratch("config");
  write(dir / "p1.csv", kP1);
  write(dir / "run.cfg", "input = " + (dir / "p1.csv").string() + "\nestimator = [\"reg\"]\naggregate = [\"cell\"]\nlevel = 0.9\n");
  const auto r = run({"estimate", "--config", (dir / "run.cfg").string(), "--level", "0.8", "--out-dir",
                      (dir / "out").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
  CHECK(j["config"]["level"].get<double>() == doctest::Approx(0.8));
  CHECK(j["config"]["estimators"][0] == "reg");
  CHECK(j["cells"][0]["method"] == "reg");

  const auto csv = run({"report", "--input", (dir / "out" / "report.json").string(), "--format", "csv"});
  CHECK(csv.out == slurp(dir / "out" / "cells.csv"));
}
