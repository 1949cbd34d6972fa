#include <gtest/gtest.h>

#include "support.hpp"

using namespace multibreak;

using mbtest::Instance;
using mbtest::random_instance;

TEST(Tuples, CountMatchesEnumeration) {
  for (int T : {20, 37, 60})
    for (int m : {1, 2, 3})
      for (int h : {3, 5}) {
        if (T < h * (m + 1)) continue;
        const auto all = detail::admissible_tuples(T, m, h);
        EXPECT_EQ(static_cast<double>(all.size()), detail::count_tuples(T, m, h)) << T << " " << m << " " << h;
        for (const auto& t : all) {
          EXPECT_GE(t.front(), h);
          EXPECT_GE(T - t.back(), h);
        }
      }
}

TEST(Common, MeanShiftFoundAndMatchesExhaustive) {
  Stream rng(31, 0, 0);
  Eigen::MatrixXd y(60, 1);
  for (int t = 0; t < 60; ++t) y(t, 0) = (t >= 30 ? 5.0 : 0.0) + rng.normal();
  const RegressorPanel panel(y, {Regressor::constant()});
  SystemSpec s = SystemSpec::from_equations({{0}}, 1);
  s.breaks = 1;
  const Model model(panel, s);
  const SearchResult r = estimate_common(model);
  EXPECT_EQ(r.method, "dynamic-programming");
  EXPECT_EQ(r.fit.segmentation.date(0, 0), 30);
  const auto bf = mbtest::brute_force(panel, s, all_common(1));
  EXPECT_EQ(bf.seg, r.fit.segmentation);
  EXPECT_NEAR(bf.loglik, r.fit.loglik, 1e-8);
}

TEST(Common, NoBreaks) {
  Stream rng(32, 0, 0);
  const auto panel = mbtest::random_panel(rng, 30, 1, false);
  SystemSpec s = SystemSpec::from_equations({{0}}, 1);
  s.breaks = 0;
  const SearchResult r = estimate_common(Model(panel, s));
  EXPECT_EQ(r.fit.segmentation.breaks(), 0);
  EXPECT_EQ(r.method, "no-break");
}

TEST(Common, TwoBreaksDpMatchesExhaustive) {
  Stream rng(33, 0, 0);
  Eigen::MatrixXd y(45, 2);
  for (int t = 0; t < 45; ++t)
    for (int i = 0; i < 2; ++i) y(t, i) = (t >= 15 ? 2.0 : 0.0) - (t >= 31 ? 3.0 * i : 0.0) + rng.normal();
  const RegressorPanel panel(y, {Regressor::constant()});
  SystemSpec s = SystemSpec::from_equations({{0}, {0}}, 1);
  s.breaks = 2;
  s.trim = 0.15;
  const Model model(panel, s);
  const SearchResult dp = estimate_common(model);
  EXPECT_NEAR(dp.fit.segmentation.date(0, 0), 15, 2);
  EXPECT_NEAR(dp.fit.segmentation.date(0, 1), 31, 2);
  const auto bf = mbtest::brute_force(panel, s, all_common(1));
  EXPECT_EQ(bf.seg, dp.fit.segmentation);
  EXPECT_NEAR(bf.loglik, dp.fit.loglik, 1e-8);
}

TEST(Groupwise, SingleGroupDelegatesToCommon) {
  Stream rng(34, 0, 0);
  const auto panel = mbtest::random_panel(rng, 40, 2, false);
  SystemSpec s = SystemSpec::from_equations({{0}, {0}}, 1);
  s.breaks = 1;
  const Model model(panel, s);
  const auto a = estimate_common(model), b = estimate_groupwise(model);
  EXPECT_EQ(a.fit.segmentation, b.fit.segmentation);
  EXPECT_EQ(a.fit.loglik, b.fit.loglik);
  EXPECT_EQ(cb_statistic(model).statistic, 0.0);
}

TEST(Groupwise, BivariateInterceptBruteForce) {
  Stream rng(35, 0, 0);
  Eigen::MatrixXd y(20, 2);
  for (int t = 0; t < 20; ++t) {
    y(t, 0) = (t >= 8 ? 2.0 : 0.0) + rng.normal();
    y(t, 1) = (t >= 12 ? -2.0 : 0.0) + rng.normal();
  }
  const RegressorPanel panel(y, {Regressor::constant()});
  SystemSpec s = SystemSpec::from_equations({{0}, {0}}, 1);
  s.groups = {{0}, {1}};
  s.breaks = 1;
  s.trim = 0.2;
  const Model model(panel, s);
  const auto r = estimate_groupwise(model);
  EXPECT_EQ(r.method, "exhaustive");
  const auto bf = mbtest::brute_force(panel, s, all_separate(2));
  EXPECT_EQ(r.fit.segmentation, bf.seg);
  EXPECT_NEAR(r.fit.loglik, bf.loglik, 1e-8);
  const auto cb = cb_statistic(model);
  const auto bfr = mbtest::brute_force(panel, s, all_common(2));
  EXPECT_NEAR(cb.statistic, 2.0 * (bf.loglik - bfr.loglik), 1e-7);
}

TEST(Oracle, RandomSmallSystems) {
  Stream rng(36, 0, 0);
  for (int rep = 0; rep < 30; ++rep) {
    const Instance ins = random_instance(rng);
    const Model model(ins.panel, ins.spec);
    const auto common = estimate_common(model);
    const auto bfc = mbtest::brute_force(ins.panel, ins.spec, all_common(ins.spec.G()));
    EXPECT_EQ(common.fit.segmentation, bfc.seg) << rep;
    EXPECT_NEAR(common.fit.loglik, bfc.loglik, 1e-8) << rep;
    const auto group = estimate_groupwise(model);
    const auto bfg = mbtest::brute_force(ins.panel, ins.spec, all_separate(ins.spec.G()));
    EXPECT_EQ(group.fit.segmentation, bfg.seg) << rep;
    EXPECT_NEAR(group.fit.loglik, bfg.loglik, 1e-8) << rep;
  }
}

TEST(Invariance, StatisticNonNegativeAndPermutationInvariant) {
  Stream rng(37, 0, 0);
  for (int rep = 0; rep < 20; ++rep) {
    RegressorPanel panel = mbtest::random_panel(rng, 30, 2, false);
    SystemSpec s = SystemSpec::from_equations({{0}, {0}}, 1);
    s.groups = {{0}, {1}};
    s.breaks = 1;
    const double cb = cb_statistic(Model(panel, s)).statistic;
    EXPECT_GE(cb, 0.0);
    Eigen::MatrixXd y = panel.y().rowwise().reverse();
    const RegressorPanel swapped(y, panel.regressors());
    // swapping equations also swaps which group carries the covariance dates
    SystemSpec s2 = s;
    s2.groups = {{1}, {0}};
    EXPECT_NEAR(cb_statistic(Model(swapped, s2)).statistic, cb, 1e-8);
    y = panel.y();
    y.col(0) *= 7.0;
    const RegressorPanel scaled(y, panel.regressors());
    EXPECT_NEAR(cb_statistic(Model(scaled, s)).statistic, cb, 1e-8);
  }
}

TEST(Partial, FullSubsetEqualsFullTest) {
  Stream rng(38, 0, 0);
  const auto panel = mbtest::random_panel(rng, 30, 2, false);
  SystemSpec s = SystemSpec::from_equations({{0}, {0}}, 1);
  s.groups = {{0}, {1}};
  s.breaks = 1;
  const Model model(panel, s);
  EXPECT_EQ(cb_statistic_partial(model, {0, 1}).statistic, cb_statistic(model).statistic);
  EXPECT_THROW(cb_statistic_partial(model, {1}), ConfigError);
}

TEST(Partial, ThreeGroupsNesting) {
  Stream rng(39, 0, 0);
  const auto panel = mbtest::random_panel(rng, 40, 2, true);
  SystemSpec s = SystemSpec::from_equations({{0, 1}, {0}}, 2);
  s.groups = {{0}, {1}, {2}};
  s.breaks = 1;
  const Model model(panel, s);
  const auto full = cb_statistic(model);
  const auto part = cb_statistic_partial(model, {1, 2});
  EXPECT_GE(part.statistic, 0.0);
  EXPECT_LE(part.statistic, full.statistic + 1e-9);
  EXPECT_EQ(part.restricted.fit.segmentation.date(1, 0), part.restricted.fit.segmentation.date(2, 0));
  EXPECT_NEAR(part.unrestricted.fit.loglik, full.unrestricted.fit.loglik, 1e-9);
}

TEST(CoordinateDescent, NeverBelowInitialization) {
  Stream rng(40, 0, 0);
  const auto panel = mbtest::random_panel(rng, 60, 2, true);
  SystemSpec s = SystemSpec::from_equations({{0, 1}, {0, 1}}, 2);
  s.groups = {{0, 1}, {2, 3}};
  s.breaks = 1;
  s.hold_constant(1);
  s.hold_constant(3);
  s.sigma_constant = true;
  const Model model(panel, s);
  SearchOptions exhaustive;
  SearchOptions cd;
  cd.budget = 0;  // force alternation / coordinate descent
  const auto ex = cb_statistic(model, exhaustive);
  const auto approx = cb_statistic(model, cd);
  EXPECT_EQ(approx.restricted.method, "alternation");
  EXPECT_EQ(approx.unrestricted.method, "coordinate-descent");
  EXPECT_GE(approx.statistic, 0.0);
  EXPECT_LE(approx.unrestricted.fit.loglik, ex.unrestricted.fit.loglik + 1e-9);
  EXPECT_LE(approx.restricted.fit.loglik, ex.restricted.fit.loglik + 1e-9);
}

TEST(Search, ThreadCountDoesNotChangeResult) {
  Stream rng(41, 0, 0);
  const auto panel = mbtest::random_panel(rng, 40, 2, false);
  SystemSpec s = SystemSpec::from_equations({{0}, {0}}, 1);
  s.groups = {{0}, {1}};
  s.breaks = 1;
  s.sigma_constant = true;
  const Model model(panel, s);
  SearchOptions a, b;
  b.threads = 4;
  const auto ra = cb_statistic(model, a), rb = cb_statistic(model, b);
  EXPECT_EQ(ra.statistic, rb.statistic);
  EXPECT_EQ(ra.unrestricted.fit.segmentation, rb.unrestricted.fit.segmentation);
}
