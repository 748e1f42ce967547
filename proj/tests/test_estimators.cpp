#include <doctest.h>

#include <cmath>
#include <random>

#include "stagdid/estimators.hpp"
#include "stagdid/inference.hpp"
#include "stagdid/simlab.hpp"
#include "support.hpp"

using namespace stagdid;

namespace {

/// Unit effects, period effects and an exposure-only effect; no noise.
Panel noiseless_panel(std::size_t n, int T, std::uint64_t seed) {
  Panel p(n, T, {});
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> N;
  for (std::size_t i = 0; i < n; ++i) {
    const int G = slot_group(i % static_cast<std::size_t>(T + 1), T);
    p.set_group(i, G);
    const double a = N(eng);
    for (int t = 0; t <= T; ++t) p.y(i, t) = a + 0.3 * t * t + (G <= t ? 1.0 + 0.5 * (t - G) : 0.0);
  }
  return p;
}

}  // namespace

TEST_CASE("ivw weights") {
  const double pi[3] = {0.2, 0.3, 0.5}, s2[3] = {1, 2, 4};
  const auto w = ivw_weights(pi, s2, 0, 2);
  CHECK(w.weight[0] == doctest::Approx(0.42105).epsilon(1e-5));
  CHECK(w.weight[1] == doctest::Approx(0.31579).epsilon(1e-5));
  CHECK(w.weight[2] == doctest::Approx(0.26316).epsilon(1e-5));

  const double s7[3] = {7, 14, 28};
  const auto w7 = ivw_weights(pi, s7, 0, 2);
  for (int s = 0; s < 3; ++s) CHECK(w7.weight[s] == doctest::Approx(w.weight[s]).epsilon(1e-15));

  const double same[3] = {3, 3, 3};
  const auto we = ivw_weights(pi, same, 1, 2);
  CHECK(we.weight[0] == 0.0);
  CHECK(we.weight[1] == doctest::Approx(0.3 / 0.8));
  CHECK(we.weight[1] + we.weight[2] == doctest::Approx(1.0));

  const double no_never[3] = {0.5, 0.5, 0.0};
  CHECK_THROWS_WITH(ivw_weights(no_never, same, 2, 2), doctest::Contains("no comparison groups"));
}

TEST_CASE("micro-panel P1: every estimator gives 1.5") {
  const Panel p = test::micro_panel_p1();
  const auto ns = fit_nuisances(p);
  const auto tb = tabulate(p, ns);
  for (Method m : {Method::reg, Method::wt_never, Method::wt_notyet, Method::aipw, Method::aivw})
    CHECK(att_cell(tb, m, 1, 1).estimate == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(twfe(p).estimate == doctest::Approx(1.5).epsilon(1e-12));

  const auto c = att_cell_aipw(p, ns, 1, 1);
  const double expected[4] = {3, 3, -1, 1};
  for (int i = 0; i < 4; ++i) CHECK(c.contributions[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  const auto f = cell_if(p, c);
  CHECK(f[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[3] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.se == doctest::Approx(std::sqrt(0.125)).epsilon(1e-12));
  CHECK(c.n_treated == 2);
  CHECK(c.n_comparison == 2);
}

TEST_CASE("cell estimators agree with direct formula evaluation") {
  struct Case {
    std::uint64_t seed;
    std::size_t n;
    int T;
    std::size_t p;
  };
  for (const Case& cs : {Case{21, 8, 2, 1}, Case{22, 60, 3, 2}, Case{23, 120, 4, 1}}) {
    const Panel panel = test::random_panel(cs.seed, cs.n, cs.T, cs.p);
    const auto ns = fit_nuisances(panel);
    const auto tb = tabulate(panel, ns);
    for (int g = 1; g <= cs.T; ++g)
      for (int t = g; t <= cs.T; ++t) {
        CAPTURE(cs.seed);
        CAPTURE(g);
        CAPTURE(t);
        CHECK(att_cell(tb, Method::aipw, g, t).estimate ==
              doctest::Approx(test::oracle_dr_cell(panel, ns, g, t, false)).epsilon(1e-10));
        CHECK(att_cell(tb, Method::aivw, g, t).estimate ==
              doctest::Approx(test::oracle_dr_cell(panel, ns, g, t, true)).epsilon(1e-10));
        for (int s : {0, g - 1}) {
          CHECK(att_cell(tb, Method::reg, g, t, s).estimate ==
                doctest::Approx(test::oracle_reg_cell(panel, ns, g, t, s)).epsilon(1e-10));
          CHECK(att_cell(tb, Method::wt_never, g, t, s).estimate ==
                doctest::Approx(test::oracle_wt_cell(panel, ns, g, t, s, true)).epsilon(1e-10));
          CHECK(att_cell(tb, Method::wt_notyet, g, t, s).estimate ==
                doctest::Approx(test::oracle_wt_cell(panel, ns, g, t, s, false)).epsilon(1e-10));
        }
      }
  }
}

TEST_CASE("two periods without covariates: AIPW is the difference of mean changes") {
  for (std::uint64_t seed = 30; seed < 35; ++seed) {
    const Panel p = test::random_panel(seed, 7 + seed % 5, 1, 0);
    double dt = 0, dc = 0, nt = 0, nc = 0;
    for (std::size_t i = 0; i < p.n_units(); ++i) {
      const double d = p.y(i, 1) - p.y(i, 0);
      if (p.group(i) == 1) dt += d, ++nt;
      else dc += d, ++nc;
    }
    const auto c = att_cell_aipw(p, fit_nuisances(p), 1, 1);
    CHECK(std::abs(c.estimate - (dt / nt - dc / nc)) < 1e-12);
  }
}

TEST_CASE("constant working variance makes AIVW identical to AIPW per unit") {
  const Panel p = generate({4, 400, 31});
  NuisanceOptions opt;
  opt.heteroskedastic = false;
  const auto tb = tabulate(p, fit_nuisances(p, opt));
  for (int g = 1; g <= 4; ++g)
    for (int t = g; t <= 4; ++t) {
      const auto a = att_cell(tb, Method::aipw, g, t), v = att_cell(tb, Method::aivw, g, t);
      CHECK((a.contributions - v.contributions).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("noiseless data: all estimators coincide with the truth") {
  const Panel p = noiseless_panel(50, 3, 40);
  const auto tb = tabulate(p, fit_nuisances(p));
  for (int g = 1; g <= 3; ++g)
    for (int t = g; t <= 3; ++t) {
      const double truth = 1.0 + 0.5 * (t - g);
      for (Method m : {Method::reg, Method::wt_never, Method::wt_notyet, Method::aipw, Method::aivw})
        CHECK(att_cell(tb, m, g, t).estimate == doctest::Approx(truth).epsilon(1e-8));
      for (Method m : {Method::reg, Method::wt_never, Method::wt_notyet})
        CHECK(att_cell(tb, m, g, t, 0).estimate == doctest::Approx(att_cell(tb, m, g, t).estimate).epsilon(1e-8));
    }
}

TEST_CASE("identical treated and control paths give zero effects") {
  Panel p(6, 2, {});
  for (std::size_t i = 0; i < 6; ++i) {
    p.set_group(i, slot_group(i % 3, 2));
    for (int t = 0; t <= 2; ++t) p.y(i, t) = 1.0 + t + 0.1 * static_cast<double>(i % 2);
  }
  const auto tb = tabulate(p, fit_nuisances(p));
  for (Method m : {Method::reg, Method::wt_never, Method::aipw})
    CHECK(std::abs(att_cell(tb, m, 1, 2).estimate) < 1e-10);
  CHECK(std::abs(twfe(p).estimate) < 1e-10);
}

TEST_CASE("not-yet-treated and never-treated weighting coincide when only never-treated remain") {
  const Panel p = test::random_panel(41, 30, 2, 1);
  const auto tb = tabulate(p, fit_nuisances(p));
  CHECK(att_cell(tb, Method::wt_notyet, 2, 2).estimate ==
        doctest::Approx(att_cell(tb, Method::wt_never, 2, 2).estimate).epsilon(1e-12));
}

TEST_CASE("estimability rules") {
  Panel p = test::random_panel(42, 12, 3, 1);
  for (std::size_t i = 0; i < p.n_units(); ++i)
    if (p.group(i) == 2) p.set_group(i, 3);
  const auto tb = tabulate(p, fit_nuisances(p));
  const auto sweep = estimate_cells(tb, Method::aipw);
  CHECK(sweep.cells.size() == 4);  // (1,1..3), (3,3)
  REQUIRE(sweep.skipped.size() == 2);
  CHECK(sweep.skipped[0].reason.find("no units in group 2") != std::string::npos);
  CHECK(cell_unavailable(tb, Method::reg, 3, 3, 3).value().find("base period") != std::string::npos);
  CHECK_THROWS_AS(att_cell(tb, Method::aipw, 2, 2), std::invalid_argument);
  for (const auto& c : sweep.cells) CHECK(std::isfinite(c.se));

  Panel q = test::random_panel(43, 9, 2, 0);
  for (std::size_t i = 0; i < q.n_units(); ++i)
    if (q.group(i) == kNever) q.set_group(i, 2);
  const auto tq = tabulate(q, fit_nuisances(q));
  CHECK(cell_unavailable(tq, Method::aipw, 1, 2, -1).value().find("no comparison units at period 2") !=
        std::string::npos);
  CHECK(cell_unavailable(tq, Method::wt_never, 1, 1, -1).value().find("never-treated") != std::string::npos);
  CHECK_FALSE(cell_unavailable(tq, Method::aipw, 1, 1, -1));
}

TEST_CASE("twfe matches dummy-variable least squares with a clustered sandwich") {
  for (int id : {1, 2}) {
    const Panel p = generate({id, 150, static_cast<std::uint64_t>(50 + id)});
    const auto r = twfe(p);
    const auto o = test::oracle_twfe(p);
    CHECK(r.estimate == doctest::Approx(o.estimate).epsilon(1e-10));
    CHECK(r.se == doctest::Approx(o.se).epsilon(1e-8));
  }
  Panel constant = noiseless_panel(40, 3, 52);
  for (std::size_t i = 0; i < 40; ++i)
    for (int t = 0; t <= 3; ++t)
      if (constant.treated(i, t)) constant.y(i, t) -= 0.5 * (t - constant.group(i));
  CHECK(twfe(constant).estimate == doctest::Approx(1.0).epsilon(1e-10));

  Panel controls = test::random_panel(53, 6, 2, 0);
  for (std::size_t i = 0; i < 6; ++i) controls.set_group(i, kNever);
  CHECK_THROWS_AS(twfe(controls), InputError);
}

TEST_CASE("H weights: indicator algebra") {
  const Panel p = test::random_panel(60, 20, 3, 1);
  const auto tb = tabulate(p, fit_nuisances(p));
  for (std::size_t i = 0; i < p.n_units(); ++i) {
    const int G = p.group(i);
    for (Method m : {Method::aipw, Method::aivw}) {
      if (G != kNever) {
        CHECK(h_weight(tb, m, i, 3, G, 3) == 1.0);
        CHECK(h_weight(tb, m, i, G - 1, G, 3) == -1.0);
        if (G <= 2) CHECK(h_weight(tb, m, i, G, G, 3) == 0.0);
      } else {
        CHECK(h_weight(tb, m, i, 0, 2, 2) == 0.0);
        CHECK(h_weight(tb, m, i, 3, 2, 2) == 0.0);
      }
    }
  }
}

TEST_CASE("AIPW H-weight closed form equals the summed definition") {
  for (std::uint64_t seed = 70; seed < 75; ++seed) {
    const int T = 2 + static_cast<int>(seed % 3);
    const Panel p = test::random_panel(seed, 25, T, 2);
    const auto tb = tabulate(p, fit_nuisances(p));
    for (std::size_t i = 0; i < p.n_units(); ++i)
      for (int t = 0; t <= T; ++t)
        CHECK(std::abs(h_overall(tb, Method::aipw, i, t) - h_overall_aipw_closed(tb, i, t)) < 1e-10);
  }
}
