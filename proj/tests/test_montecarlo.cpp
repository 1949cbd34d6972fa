#include <gtest/gtest.h>

#include <multibreak/montecarlo.hpp>

#include <sstream>

using namespace multibreak;

TEST(Dgp, NoBreakWhiteNoiseMeans) {
  BivariateArDgp d;
  d.delta1 = d.delta2 = 0.0;
  int inside = 0;
  for (std::uint64_t rep = 0; rep < 50; ++rep) {
    const RegressorPanel p = gen_bivariate_ar(d, rep);
    ASSERT_EQ(p.T(), 100);
    for (int i = 0; i < 2; ++i)
      if (std::abs(p.y().col(i).mean() - 1.0) < 3.0 / std::sqrt(100.0)) ++inside;
  }
  // three standard errors: essentially every series
  EXPECT_GE(inside, 99);
}

TEST(Dgp, StationaryMeanUnderPersistence) {
  BivariateArDgp d;
  d.T = 20000;
  d.k1 = d.k2 = d.T - 1;
  d.alpha = 0.8;
  d.delta1 = d.delta2 = 0.0;
  const RegressorPanel p = gen_bivariate_ar(d, 0);
  // long-run sd of the mean is 1/(1-alpha)/sqrt(T) = 0.035
  EXPECT_NEAR(p.y().col(0).mean(), 5.0, 0.15);
  EXPECT_NEAR(p.y().col(1).mean(), 5.0, 0.15);
}

TEST(Dgp, LagsAndShifts) {
  BivariateArDgp d;
  d.delta1 = 3.0;
  d.delta2 = -2.0;
  d.k1 = 30;
  d.k2 = 70;
  d.alpha = 0.5;
  const RegressorPanel p = gen_bivariate_ar(d, 3);
  for (int t = 2; t <= p.T(); ++t) {
    EXPECT_EQ(p.design()(t - 1, 1), p.y()(t - 2, 0));
    EXPECT_EQ(p.design()(t - 1, 2), p.y()(t - 2, 1));
  }
  // the pre/post sample means move towards the shifted stationary means
  const double pre = p.y().col(0).segment(5, 25).mean(), post = p.y().col(0).segment(60, 40).mean();
  EXPECT_GT(post - pre, 3.0);
}

TEST(Dgp, ErrorCorrelation) {
  BivariateArDgp d;
  d.T = 20000;
  d.k1 = d.k2 = d.T - 1;
  d.delta1 = d.delta2 = 0.0;
  d.rho = 0.5;
  const RegressorPanel p = gen_bivariate_ar(d, 0);
  const Eigen::VectorXd a = p.y().col(0).array() - p.y().col(0).mean();
  const Eigen::VectorXd b = p.y().col(1).array() - p.y().col(1).mean();
  EXPECT_NEAR(a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm()), 0.5, 0.03);
}

TEST(Dgp, DeterministicPerSeedAndRep) {
  BivariateArDgp d;
  const RegressorPanel a = gen_bivariate_ar(d, 7), b = gen_bivariate_ar(d, 7), c = gen_bivariate_ar(d, 8);
  EXPECT_EQ(a.y(), b.y());
  EXPECT_NE(a.y(), c.y());
  d.alpha = 1.0;
  EXPECT_THROW(gen_bivariate_ar(d, 0), ConfigError);
}

TEST(Dgp, SpecShape) {
  const SystemSpec s = bivariate_ar_spec(0.15);
  EXPECT_EQ(s.n, 2);
  EXPECT_EQ(s.p, 4);
  EXPECT_EQ(s.G(), 2);
  EXPECT_TRUE(s.sigma_constant);
}

TEST(Grids, DeltaLayouts) {
  EXPECT_EQ(size_delta_grid().size(), 15u);
  const auto pg = power_delta_grid();
  ASSERT_EQ(pg.size(), 9u);
  EXPECT_EQ(pg[1], std::make_pair(0.5, 1.0));
  EXPECT_EQ(pg[3], std::make_pair(1.0, 0.5));
  EXPECT_NE(cv_seed(1, 0), cv_seed(1, 1));
  EXPECT_NE(cv_seed(1, 0), cv_seed(2, 0));
}

namespace {

ExperimentConfig smoke_config() {
  ExperimentConfig cfg;
  cfg.alphas = {0.0};
  cfg.deltas = {{1.5, 1.5}};
  cfg.reps = 3;
  cfg.cv_reps = 100;
  cfg.threads = 1;
  cfg.grid.M = 20.0;
  return cfg;
}

}  // namespace

TEST(Experiment, SmokeCellIsDeterministic) {
  const ExperimentConfig cfg = smoke_config();
  const auto a = run_size_experiment(cfg);
  const auto b = run_size_experiment(cfg);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].valid, 3);
  EXPECT_FALSE(a[0].invalid);
  EXPECT_EQ(a[0].k1, 50);
  EXPECT_EQ(a[0].k2, 50);
  EXPECT_GE(a[0].mean_statistic, 0.0);
  std::ostringstream ca, cb;
  write_cells_csv(ca, a);
  write_cells_csv(cb, b);
  EXPECT_EQ(ca.str(), cb.str());
  for (std::size_t l = 0; l < a[0].levels.size(); ++l) {
    EXPECT_GE(a[0].rejection[l], 0.0);
    EXPECT_LE(a[0].rejection[l], 1.0);
  }
  // a looser level can only reject more often
  EXPECT_GE(a[0].rejection[0], a[0].rejection[1]);
  EXPECT_GE(a[0].rejection[1], a[0].rejection[2]);
}

TEST(Experiment, ThreadCountDoesNotChangeResults) {
  ExperimentConfig cfg = smoke_config();
  cfg.reps = 2;
  const auto one = run_size_experiment(cfg);
  cfg.threads = 3;
  const auto three = run_size_experiment(cfg);
  EXPECT_EQ(one[0].mean_statistic, three[0].mean_statistic);
  EXPECT_EQ(one[0].rejection, three[0].rejection);
}

TEST(Experiment, PowerCellsAndCsvColumns) {
  ExperimentConfig cfg = smoke_config();
  cfg.reps = 1;
  cfg.k1 = 35;
  cfg.k2s = {35, 55};
  const auto cells = run_power_experiment(cfg);
  ASSERT_EQ(cells.size(), 2u);
  std::ostringstream os;
  write_cells_csv(os, cells);
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  EXPECT_EQ(header,
            "alpha,delta1,delta2,k1,k2,difference,trim,rho,reps,valid,failures,invalid,mean_statistic,"
            "reject_0.1,reject_0.05,reject_0.01");
  std::getline(is, row);
  std::getline(is, row);
  EXPECT_EQ(row.substr(0, 21), "0,1.5,1.5,35,55,20,0.");
}

TEST(Experiment, RejectsBadConfig) {
  ExperimentConfig cfg = smoke_config();
  cfg.cv_method = "bogus";
  EXPECT_THROW(run_size_experiment(cfg), ConfigError);
  cfg = smoke_config();
  cfg.reps = 0;
  EXPECT_THROW(run_size_experiment(cfg), ConfigError);
}

TEST(Experiment, SizeTableLayout) {
  CellResult c;
  c.alpha = 0.4;
  c.delta1 = 0.5;
  c.delta2 = 1.0;
  c.levels = {0.10, 0.05};
  c.rejection = {0.1, 0.052};
  std::ostringstream os;
  write_size_table(os, {c});
  const std::string s = os.str();
  EXPECT_NE(s.find("a=0.4 10%"), std::string::npos);
  EXPECT_NE(s.find("a=0.4 5%"), std::string::npos);
  EXPECT_NE(s.find("0.052"), std::string::npos);
}
