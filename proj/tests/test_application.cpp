#include <gtest/gtest.h>

#include <multibreak/multibreak.hpp>

#include <sstream>

using namespace multibreak;

namespace {

ModelConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_model_config(is);
}

SeriesSet ingest(const std::string& text) {
  std::istringstream is(text);
  return ingest_csv(is, "date");
}

std::string error_of(const std::string& csv) {
  try {
    ingest(csv);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

const char* kExampleConfig = R"(
# comment
regressor const  = constant
regressor y1_lag = stationary y1 lag 1
regressor y2_lag = stationary y2 lag 1
equation y1 = const, y1_lag
equation y2 = const, y2_lag   # trailing comment
group eq1 = y1.const, y1.y1_lag
group eq2 = y2.const, y2.y2_lag
hold_constant = y1.y1_lag, y2.y2_lag
sigma_constant = true
trim = 0.15
)";

SeriesSet simulated(int T, std::uint64_t seed) {
  BivariateArDgp d;
  d.T = T;
  d.alpha = 0.4;
  d.k1 = d.k2 = T / 2;
  d.seed = seed;
  const RegressorPanel p = gen_bivariate_ar(d, 0);
  SeriesSet s;
  s.names = {"y1", "y2"};
  s.values.resize(T + 1, 2);
  s.values(0, 0) = p.design()(0, 1);
  s.values(0, 1) = p.design()(0, 2);
  s.values.bottomRows(T) = p.y();
  Quarter q{1980, 1};
  for (int t = 0; t <= T; ++t, q = q.next()) s.labels.push_back(q.str());
  return s;
}

}  // namespace

TEST(Config, ParsesExampleAndMatchesBuiltInSpec) {
  const ModelConfig cfg = parse(kExampleConfig);
  EXPECT_EQ(cfg.equations, (std::vector<std::string>{"y1", "y2"}));
  EXPECT_EQ(cfg.max_lag(), 1);
  const SeriesSet data = simulated(100, 3);
  const SystemData sd = build_system(cfg, data);
  const SystemSpec ref = bivariate_ar_spec(0.15);
  EXPECT_EQ(sd.spec.S, ref.S);
  EXPECT_EQ(sd.spec.groups, ref.groups);
  EXPECT_EQ(sd.spec.restrictions.size(), ref.restrictions.size());
  EXPECT_TRUE(sd.spec.sigma_constant);
  EXPECT_EQ(sd.panel.T(), 100);
  EXPECT_EQ(sd.labels.front(), "1980:Q2");
  // the lagged column is the dependent variable shifted by one
  EXPECT_EQ(sd.panel.design()(5, 1), sd.panel.y()(4, 0));
}

TEST(Config, RestrictionsTripletsAndTrends) {
  const ModelConfig cfg = parse(R"(
regressor c = constant
regressor tr = trend 1
regressor x = integrated y2
equations = y1
coefficients = mu, slope, rho
triplet = 0 0 1
triplet = 1 1 1
triplet = 2 2 1
breaks = 2
restrict = slope@1 == slope@3
estimator = ols
)");
  EXPECT_EQ(cfg.triplets.size(), 3u);
  const SystemData sd = build_system(cfg, simulated(100, 4));
  EXPECT_EQ(sd.spec.p, 3);
  EXPECT_EQ(sd.spec.coef_names[1], "slope");
  ASSERT_EQ(sd.spec.restrictions.size(), 1u);
  EXPECT_EQ(sd.spec.restrictions[0].terms[1].first.regime, 2);
  EXPECT_EQ(sd.spec.estimator, Estimator::Ols);
  EXPECT_EQ(sd.panel.regressors()[2].kind, RegressorKind::Integrated);
}

TEST(Config, ErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      parse(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("regressor c = constant\nbogus = 1\n").find("line 2: unknown key 'bogus'"), std::string::npos);
  EXPECT_NE(message("trim = 0.7\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("regressor c = polynomial\n").find("unrecognized regressor"), std::string::npos);
  EXPECT_NE(message("no equals sign\n").find("expected 'key = value'"), std::string::npos);
  EXPECT_NE(message("restrict = a@0 == b@1\n").find("numbered from 1"), std::string::npos);
  EXPECT_THROW(parse("regressor c = constant\n"), ConfigError);
  // unknown coefficient surfaces at build time
  EXPECT_THROW(build_system(parse(std::string(kExampleConfig) + "hold_constant = y1.nothing\n"), simulated(100, 1)),
               ConfigError);
}

TEST(Ingest, QuarterlyLabels) {
  const SeriesSet s = ingest("date,a,b\n1984Q1,1,2\n1984Q2,3,4\n1984:Q3,5,6\n1984-q4,7,8\n");
  EXPECT_EQ(s.rows(), 4);
  EXPECT_EQ(s.labels, (std::vector<std::string>{"1984:Q1", "1984:Q2", "1984:Q3", "1984:Q4"}));
  EXPECT_EQ(s.values(3, 1), 8.0);
  EXPECT_EQ(s.names, (std::vector<std::string>{"a", "b"}));
}

TEST(Ingest, ErrorsCarryRowNumbers) {
  EXPECT_NE(error_of("date,a\n1990Q1,1\n1990Q2,2\n1990Q4,3\n").find("row 4: gap in dates, 1990:Q3 is missing"),
            std::string::npos);
  EXPECT_NE(error_of("date,a\n1990Q1,1\n1990Q1,2\n").find("row 3: duplicate date 1990:Q1"), std::string::npos);
  EXPECT_NE(error_of("date,a\n1990Q1,1\n1990Q2,x\n").find("row 3, column 'a': non-numeric value 'x'"),
            std::string::npos);
  EXPECT_NE(error_of("date,a\n1990Q1,1\n1990Q2,\n").find("row 3"), std::string::npos);
  EXPECT_NE(error_of("date,a\n1990Q5,1\n").find("cannot parse quarterly date"), std::string::npos);
  EXPECT_NE(error_of("when,a\n1990Q1,1\n").find("date column 'date' not found"), std::string::npos);
  EXPECT_NE(error_of("date,a\n1990Q1,1,2\n").find("row 2: expected 2 fields"), std::string::npos);
}

TEST(Ingest, QuarterArithmetic) {
  EXPECT_EQ(parse_quarter("1999Q4")->next().str(), "2000:Q1");
  EXPECT_FALSE(parse_quarter("99Q1").has_value());
  EXPECT_FALSE(parse_quarter("1999Q0").has_value());
}

TEST(ArLag, Ar3NeverUnderfitsAndIsTheMode) {
  // AIC is not consistent: with five spare lags it overfits with
  // probability near 0.3 even asymptotically
  std::vector<int> counts(9, 0);
  const int R = 200;
  for (int r = 0; r < R; ++r) {
    Stream rng(11, static_cast<std::uint64_t>(r), 0);
    const int T = 5000;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(T + 100);
    for (int t = 3; t < y.size(); ++t) y(t) = 0.5 * y(t - 1) - 0.3 * y(t - 2) + 0.2 * y(t - 3) + rng.normal();
    ++counts[static_cast<std::size_t>(select_ar_lag(y.tail(T), 8))];
  }
  EXPECT_EQ(counts[1] + counts[2], 0);
  EXPECT_EQ(std::max_element(counts.begin(), counts.end()) - counts.begin(), 3);
  EXPECT_GE(counts[3], static_cast<int>(0.6 * R));
  std::cout << "AIC picks lag 3 in " << counts[3] << " of " << R << " replications\n";
}

TEST(ArLag, WhiteNoisePrefersShortLags) {
  int small = 0;
  for (int r = 0; r < 40; ++r) {
    Stream rng(12, static_cast<std::uint64_t>(r), 0);
    Eigen::VectorXd y(300);
    for (Eigen::Index t = 0; t < y.size(); ++t) y(t) = rng.normal();
    if (select_ar_lag(y, 8) <= 2) ++small;
  }
  EXPECT_GE(small, 30);
}

TEST(ArLag, PersistenceIsCoefficientSum) {
  EXPECT_DOUBLE_EQ(persistence(Eigen::Vector2d(0.5, 0.3)), 0.8);
  Stream rng(13, 0, 0);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(20000);
  for (Eigen::Index t = 2; t < y.size(); ++t) y(t) = 1.0 + 0.5 * y(t - 1) + 0.3 * y(t - 2) + rng.normal();
  const ArFit f = fit_ar(y, 2, 2);
  EXPECT_NEAR(f.persistence(), 0.8, 0.02);
  EXPECT_NEAR(f.coef(0), 1.0, 0.15);
}

TEST(Preset, InflationStructure) {
  const ModelConfig cfg = ar_intercept_preset({"y1", "y2"}, {2, 1});
  EXPECT_EQ(cfg.max_lag(), 2);
  const SystemData sd = build_system(cfg, simulated(100, 5));
  EXPECT_EQ(sd.panel.T(), 99);
  EXPECT_EQ(sd.spec.p, 5);
  EXPECT_EQ(sd.spec.G(), 2);
  EXPECT_EQ(sd.group_names, (std::vector<std::string>{"y1", "y2"}));
  EXPECT_EQ(sd.spec.restrictions.size(), 3u);
  EXPECT_TRUE(sd.spec.sigma_constant);
  EXPECT_EQ(sd.spec.coef_names[2], "y1.y1_lag2");
}

TEST(Report, RunRoundTripsAndIsDeterministic) {
  const SystemData sd = build_system(parse(kExampleConfig), simulated(100, 6));
  TestRequest req;
  req.cv_reps = 200;
  req.grid.M = 20.0;
  req.threads = 1;
  RunReport a = run_test(sd, req);
  req.threads = 3;
  RunReport b = run_test(sd, req);
  a.elapsed_seconds.reset();
  b.elapsed_seconds.reset();
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());

  EXPECT_GE(a.statistic, 0.0);
  EXPECT_GT(a.p_value, 0.0);
  EXPECT_LE(a.p_value, 1.0);
  ASSERT_EQ(a.fits.size(), 2u);
  EXPECT_EQ(a.fits[0].breaks.size(), 2u);
  EXPECT_EQ(a.fits[0].persistence.size(), 2u);
  EXPECT_FALSE(a.intervals.empty());
  EXPECT_LE(a.intervals[0].lower, a.intervals[0].point);
  EXPECT_GE(a.intervals[0].upper, a.intervals[0].point);

  a.elapsed_seconds = 1.25;
  const std::string text = nlohmann::json(a).dump(2);
  const RunReport back = nlohmann::json::parse(text).get<RunReport>();
  EXPECT_EQ(back, a);
  EXPECT_EQ(nlohmann::json(back).dump(2), text);
}

TEST(Report, RejectsOtherSchemaVersions) {
  nlohmann::json j = RunReport{};
  j["schema_version"] = 99;
  EXPECT_THROW(j.get<RunReport>(), ConfigError);
}

TEST(Report, PartialRoles) {
  const Segmentation seg({{40}, {50}, {50}});
  const auto roles = partial_roles(seg, {1, 2});
  EXPECT_EQ(roles[0], GroupRole::Pinned);
  EXPECT_EQ(roles[1], GroupRole::Tied);
  const auto r2 = partial_roles(Segmentation({{50}, {50}, {50}}), {0, 2});
  EXPECT_EQ(r2[1], GroupRole::Free);
}
