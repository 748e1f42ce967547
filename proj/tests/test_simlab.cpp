#include <doctest.h>

#include <cmath>

#include "stagdid/linmod.hpp"
#include "stagdid/simlab.hpp"

using namespace stagdid;

namespace {

/// Realized treated-minus-untreated effect of unit i at period t.
double realized_effect(const Panel& p, std::size_t i, int t, Effect effect) {
  const double z3 = p.x(i, t)[2];
  double e = 1.0 + z3;
  if (effect == Effect::heterogeneous) e += (0.5 + 0.2 * z3) * (t - p.group(i));
  return e;
}

bool same_panel(const Panel& a, const Panel& b) {
  if (a.n_units() != b.n_units() || a.groups() != b.groups()) return false;
  for (std::size_t i = 0; i < a.n_units(); ++i)
    for (int t = 0; t <= a.T(); ++t) {
      if (a.y(i, t) != b.y(i, t)) return false;
      for (std::size_t j = 0; j < a.n_covariates(); ++j)
        if (a.x(i, t)[j] != b.x(i, t)[j]) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("group model arithmetic and quadrature proportions") {
  CHECK(survivor_prob(1, 0.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.5))).epsilon(1e-15));
  CHECK(survivor_prob(1, 0.0) == doctest::Approx(0.8176).epsilon(1e-4));
  CHECK(survivor_prob(0, 3.0) == 1.0);
  const auto pi = true_group_props();
  REQUIRE(pi.size() == 5);
  double total = 0;
  for (double v : pi) {
    CHECK(v > 0);
    total += v;
  }
  CHECK(std::abs(total - 1.0) < 1e-8);

  const std::size_t n = 400000;
  const auto tl = tally(generate({1, n, 77}));
  for (std::size_t s = 0; s < 5; ++s)
    CHECK(std::abs(tl.proportions[s] - pi[s]) <= 3.0 * std::sqrt(pi[s] * (1 - pi[s]) / static_cast<double>(n)));
}

TEST_CASE("true ATTs") {
  for (int id : {1, 3, 5}) CHECK(true_overall_att({id, 10, 1}) == 1.0);
  const auto tt = true_atts({4, 10, 1});
  for (int s = 1; s <= 4; ++s) CHECK(tt.dynamic[static_cast<std::size_t>(s - 1)] == doctest::Approx(1.0 + 0.5 * (s - 1)));
  CHECK(tt.group[3] == doctest::Approx(1.0));
  CHECK(tt.group[0] == doctest::Approx(1.75));
  CHECK(tt.period[0] == doctest::Approx(1.0));

  // The heterogeneous overall truth against realized effects in a large draw.
  const Panel p = generate({2, 300000, 78});
  const auto n = static_cast<double>(p.n_units());
  double sa = 0, sb = 0;
  std::vector<double> a(p.n_units()), b(p.n_units());
  for (std::size_t i = 0; i < p.n_units(); ++i) {
    for (int t = 0; t <= 4; ++t)
      if (p.treated(i, t)) {
        a[i] += realized_effect(p, i, t, Effect::heterogeneous);
        b[i] += 1;
      }
    sa += a[i];
    sb += b[i];
  }
  const double ratio = sa / sb;
  double v = 0;
  for (std::size_t i = 0; i < p.n_units(); ++i) v += std::pow(a[i] - ratio * b[i], 2);
  const double se = std::sqrt(v / n) / (sb / n) / std::sqrt(n);
  CHECK(std::abs(ratio - true_overall_att({2, 10, 1})) < 3 * se);
}

TEST_CASE("draws are reproducible from the seed") {
  CHECK(same_panel(generate({5, 200, 9}), generate({5, 200, 9})));
  CHECK_FALSE(same_panel(generate({5, 200, 9}), generate({5, 200, 10})));
  CHECK(replicate_seed(1, 0) != replicate_seed(1, 1));
  CHECK(replicate_seed(1, 0) != replicate_seed(2, 0));
}

TEST_CASE("untreated trends are 0.5 z1 + 0.2 whatever the group") {
  const Panel p = generate({2, 60000, 79});
  std::vector<std::array<double, 6>> rows;
  for (std::size_t i = 0; i < p.n_units(); ++i)
    for (int t = 1; t <= 4; ++t)
      if (p.group(i) > t) {
        const int G = p.group(i);
        rows.push_back({p.y(i, t) - p.y(i, t - 1), p.x(i, t)[0], G == 2 ? 1.0 : 0.0, G == 3 ? 1.0 : 0.0,
                        G == 4 ? 1.0 : 0.0, 0.0});
      }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), 5);
  Eigen::VectorXd y(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    X.row(r) << 1.0, row[1], row[2], row[3], row[4];
    y[r] = row[0];
  }
  const auto fit = ols(X, y);
  const Eigen::VectorXd se = (fit.s2 * (X.transpose() * X).inverse().diagonal()).cwiseSqrt();
  CHECK(std::abs(fit.coef[0] - 0.2) < 3 * se[0]);
  CHECK(std::abs(fit.coef[1] - 0.5) < 3 * se[1]);
  for (int j = 2; j < 5; ++j) CHECK(std::abs(fit.coef[j]) < 3 * se[j]);
}

TEST_CASE("homogeneous scenario: treated effects average one") {
  const Panel p = generate({1, 50000, 80});
  double s = 0, s2 = 0, c = 0;
  for (std::size_t i = 0; i < p.n_units(); ++i)
    if (p.group(i) <= 2) {
      const double e = realized_effect(p, i, 3, Effect::homogeneous);
      s += e, s2 += e * e, ++c;
    }
  const double mean = s / c, sd = std::sqrt(s2 / c - mean * mean);
  CHECK(std::abs(mean - 1.0) < 3 * sd / std::sqrt(c));
}

TEST_CASE("heteroskedastic errors have the stated variance") {
  const Panel p = generate({3, 300000, 81});
  // Never-treated, z2 near 0: var(dY - 0.5 z1 - 0.2) = exp(-1.5) (exp(0.3 t) + exp(0.3 (t - 1))).
  const int t = 4;
  double s = 0, s2 = 0, c = 0;
  for (std::size_t i = 0; i < p.n_units(); ++i) {
    if (p.group(i) != kNever || std::abs(p.x(i, t)[1]) > 0.1) continue;
    const double r = p.y(i, t) - p.y(i, t - 1) - 0.5 * p.x(i, t)[0] - 0.2;
    s += r, s2 += r * r, ++c;
  }
  const double var = s2 / c - (s / c) * (s / c);
  const double expected = std::exp(-1.5) * (std::exp(0.3 * t) + std::exp(0.3 * (t - 1)));
  CHECK(c > 2000);
  CHECK(std::abs(var / expected - 1.0) < 4.0 * std::sqrt(2.0 / c));
}

TEST_CASE("method labels") {
  CHECK(parse_mc_method("aivw").label() == "aivw");
  CHECK(parse_mc_method("aipw/propensity").misspecified == Misspecify::propensity);
  CHECK(parse_mc_method("wt-ny/both").label() == "wt-ny/both");
  CHECK_THROWS_AS(parse_mc_method("twfe/outcome"), InputError);
  CHECK_THROWS_AS(parse_mc_method("aipw/none"), InputError);
  CHECK_THROWS_AS(parse_mc_method("ols"), InputError);
}

TEST_CASE("Monte Carlo smoke run and worker-count determinism") {
  McOptions opt;
  for (auto m : {"twfe", "aipw", "aivw", "reg", "aipw/outcome"}) opt.methods.push_back(parse_mc_method(m));
  opt.reps = 2;
  const auto small = run_mc({6, 300, 5}, opt);
  REQUIRE(small.rows.size() == 5);
  for (const auto& r : small.rows) {
    CHECK(r.replicates == 2);
    CHECK(std::isfinite(r.bias));
    CHECK(std::isfinite(r.sd));
  }
  CHECK(std::isnan(small.rows[3].mean_se));

  opt.reps = 6;
  opt.collect_aggregates = true;
  opt.workers = 1;
  const auto one = run_mc({2, 300, 6}, opt);
  opt.workers = 4;
  const auto four = run_mc({2, 300, 6}, opt);
  REQUIRE(one.rows.size() == four.rows.size());
  for (std::size_t k = 0; k < one.rows.size(); ++k) {
    CHECK(one.rows[k].bias == four.rows[k].bias);
    CHECK(one.rows[k].sd == four.rows[k].sd);
  }
  REQUIRE(one.detail.size() == four.detail.size());
  for (std::size_t k = 0; k < one.detail.size(); ++k) CHECK(one.detail[k].mean_estimate == four.detail[k].mean_estimate);
  CHECK_THROWS_AS(run_mc({7, 300, 1}, opt), InputError);
}
