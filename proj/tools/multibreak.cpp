// multibreak: common-breaks test on user data and Monte Carlo experiments.
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
// failure.

#include <CLI11.hpp>
#include <multibreak/multibreak.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace multibreak;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(what + ": '" + s + "' is not a number");
}

/// MULTIBREAK_SEED wins over --seed when set.
std::uint64_t effective_seed(std::uint64_t flag) {
  if (const char* env = std::getenv("MULTIBREAK_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(env, &pos);
      if (pos == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("MULTIBREAK_SEED is not an unsigned integer: '") + env + "'");
  }
  return flag;
}

std::vector<int> resolve_subset(const std::string& spec, const std::vector<std::string>& groups) {
  std::vector<int> out;
  for (const auto& tok : split(spec, ',')) {
    const auto it = std::find(groups.begin(), groups.end(), tok);
    if (it != groups.end()) {
      out.push_back(static_cast<int>(it - groups.begin()));
      continue;
    }
    const bool digits = tok.find_first_not_of("0123456789") == std::string::npos;
    const int k = digits ? std::stoi(tok) : 0;
    if (k < 1 || k > static_cast<int>(groups.size())) throw ConfigError("--subset: unknown group '" + tok + "'");
    out.push_back(k - 1);
  }
  return out;
}

struct TestArgs {
  std::string data, config, preset, date_column = "date", frequency = "quarterly", out, subset, lags;
  std::string series;
  int max_lag = 8;
  int breaks = 1;
  std::optional<double> trim;
  double alpha = 0.05;
  std::string cv_method = "direct";
  int cv_reps = 1000;
  double grid_M = 50.0, grid_step = 0.5;
  int kl_terms = 500;
  std::uint64_t seed = 20240101;
  unsigned threads = 0;
  double ci_level = 0.95;
  bool no_intervals = false;
  bool timing = false;
  bool drift_as_printed = false;
  std::optional<double> bandwidth;
};

void print_report(std::ostream& os, const RunReport& r) {
  os << std::fixed << std::setprecision(3);
  os << "Sample " << r.sample_start << " to " << r.sample_end << " (T = " << r.T << ")\n";
  os << "H0: " << r.hypothesis << "\n";
  os << "CB statistic " << r.statistic << ", p-value " << r.p_value << " (" << r.cv_method << ", " << r.cv_reps
     << " draws)\n";
  os << "Critical values:";
  for (std::size_t i = 0; i < r.levels.size(); ++i) os << "  " << format_level(r.levels[i]) << " " << r.critical_values[i];
  os << "\n";
  os << (r.reject ? "Reject" : "Do not reject") << " common breaks at " << format_level(r.alpha) << "\n";
  for (const auto& f : r.fits) {
    os << "\n" << f.name << " fit: log-likelihood " << f.loglik << " (" << f.method << ")\n";
    for (const auto& b : f.breaks) {
      os << "  " << std::left << std::setw(16) << b.group << std::right;
      for (std::size_t j = 0; j < b.labels.size(); ++j) os << " " << b.labels[j];
      os << "\n";
    }
    if (!f.persistence.empty()) {
      os << "  persistence:";
      for (const auto& [eq, v] : f.persistence) os << " " << eq << " " << v;
      os << "\n";
    }
  }
  if (!r.no_break_persistence.empty()) {
    os << "\nno-break OLS persistence:";
    for (const auto& [eq, v] : r.no_break_persistence) os << " " << eq << " " << v;
    os << "\n";
  }
  if (!r.intervals.empty()) os << "\nBreak-date intervals (restricted fit)\n";
  for (const auto& ci : r.intervals) {
    std::string gs;
    for (const auto& g : ci.groups) gs += (gs.empty() ? "" : ",") + g;
    os << "  " << gs << " break " << ci.break_index << ": " << ci.point_label << " [" << ci.lower_label << ", "
       << ci.upper_label << "] " << format_level(ci.level) << "\n";
  }
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  os.unsetf(std::ios::floatfield);
}

int run_test_command(const TestArgs& a) {
  const Frequency freq = a.frequency == "quarterly" ? Frequency::Quarterly
                         : a.frequency == "none"    ? Frequency::None
                                                    : throw ConfigError("--frequency must be quarterly or none");
  if (a.data.empty()) throw ConfigError("--data is required");
  RunReport r;
  TestRequest req;
  req.alpha = a.alpha;
  req.cv_method = a.cv_method;
  req.cv_reps = a.cv_reps;
  req.grid.M = a.grid_M;
  req.grid.step = a.grid_step;
  req.kl.terms = a.kl_terms;
  req.seed = effective_seed(a.seed);
  req.threads = a.threads;
  req.intervals = !a.no_intervals;
  req.interval_level = a.ci_level;
  req.variance_drift_as_printed = a.drift_as_printed;
  req.hac.bandwidth = a.bandwidth;
  if (!(a.grid_M > 0.0 && a.grid_step > 0.0 && a.grid_step <= a.grid_M))
    throw ConfigError("--grid-M and --grid-step must be positive with step <= M");

  ModelConfig cfg;
  SeriesSet data;
  std::vector<std::pair<std::string, double>> no_break;
  if (!a.preset.empty()) {
    if (a.preset != "inflation") throw ConfigError("unknown preset '" + a.preset + "'");
    if (!a.config.empty()) throw ConfigError("--preset and --config are mutually exclusive");
    const auto names = split(a.series, ',');
    data = ingest_csv(a.data, a.date_column, names, freq);
    std::vector<int> lags;
    if (!a.lags.empty()) {
      for (const auto& s : split(a.lags, ',')) lags.push_back(static_cast<int>(to_double(s, "--lags")));
    } else {
      for (const auto& n : data.names) lags.push_back(select_ar_lag(data.series(n), a.max_lag));
    }
    cfg = ar_intercept_preset(data.names, lags, a.breaks, a.trim.value_or(0.15));
    const int start = *std::max_element(lags.begin(), lags.end());
    for (std::size_t i = 0; i < lags.size(); ++i)
      no_break.emplace_back(data.names[i], fit_ar(data.series(data.names[i]), lags[i], start).persistence());
  } else {
    if (a.config.empty()) throw ConfigError("either --config or --preset is required");
    cfg = load_model_config(a.config);
    if (a.trim) cfg.trim = *a.trim;
    data = ingest_csv(a.data, a.date_column, {}, freq);
  }
  const SystemData sd = build_system(cfg, data);
  if (!a.subset.empty()) req.subset = resolve_subset(a.subset, sd.group_names);
  r = run_test(sd, req);
  r.no_break_persistence = no_break;
  if (!a.preset.empty()) r.config["preset"] = a.preset;
  const double elapsed = r.elapsed_seconds.value_or(0.0);
  if (!a.timing) r.elapsed_seconds.reset();

  print_report(std::cout, r);
  std::cerr << "elapsed " << std::fixed << std::setprecision(2) << elapsed << " s\n";
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw ConfigError("cannot write '" + a.out + "'");
    os << nlohmann::json(r).dump(2) << "\n";
  }
  return 0;
}

struct McArgs {
  std::string mode = "size";
  std::string alphas = "0,0.4,0.8";
  std::string deltas;
  std::string k2s;
  std::optional<int> k1;
  double trim = 0.15, rho = 0.0;
  int T = 100;
  int reps = 500, cv_reps = 1000;
  std::string cv_method = "direct";
  std::uint64_t seed = 20240101;
  unsigned threads = 0;
  std::string out, table;
};

int run_mc_command(const McArgs& a) {
  if (a.mode != "size" && a.mode != "power") throw ConfigError("mc mode must be size or power");
  ExperimentConfig cfg;
  cfg.alphas.clear();
  for (const auto& s : split(a.alphas, ',')) cfg.alphas.push_back(to_double(s, "--alphas"));
  for (const auto& pair : split(a.deltas, ';')) {
    const auto v = split(pair, ',');
    if (v.size() != 2) throw ConfigError("--deltas expects pairs 'd1,d2' separated by ';'");
    cfg.deltas.emplace_back(to_double(v[0], "--deltas"), to_double(v[1], "--deltas"));
  }
  cfg.trim = a.trim;
  cfg.rho = a.rho;
  cfg.T = a.T;
  cfg.reps = a.reps;
  cfg.cv_reps = a.cv_reps;
  cfg.cv_method = a.cv_method;
  cfg.seed = effective_seed(a.seed);
  cfg.threads = a.threads;
  const bool power = a.mode == "power";
  cfg.k1 = a.k1.value_or(power ? 35 : 50);
  if (power) {
    cfg.k2s.clear();
    if (a.k2s.empty()) cfg.k2s = {35, 40, 45, 50, 55};
    for (const auto& s : split(a.k2s, ',')) cfg.k2s.push_back(static_cast<int>(to_double(s, "--k2")));
  }
  const auto cells = power ? run_power_experiment(cfg) : run_size_experiment(cfg);
  if (power) {
    write_cells_csv(std::cout, cells);
  } else {
    write_size_table(std::cout, cells);
  }
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw ConfigError("cannot write '" + a.out + "'");
    write_cells_csv(os, cells);
  }
  if (!a.table.empty()) {
    std::ofstream os(a.table);
    if (!os) throw ConfigError("cannot write '" + a.table + "'");
    write_size_table(os, cells);
  }
  for (const auto& c : cells)
    if (c.invalid)
      std::cerr << "warning: cell alpha=" << c.alpha << " delta=(" << c.delta1 << "," << c.delta2 << ") k=(" << c.k1
                << "," << c.k2 << ") invalid, " << c.failures << " failed replications: "
                << (c.failure_messages.empty() ? "" : c.failure_messages.front()) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test for common structural breaks in multi-equation systems"};
  app.require_subcommand(1);

  TestArgs ta;
  auto* test = app.add_subcommand("test", "Estimate under common and separate breaks and test for common breaks");
  test->add_option("--data", ta.data, "CSV file with a header row and a date column")->required();
  test->add_option("--config", ta.config, "model configuration file");
  test->add_option("--preset", ta.preset, "built-in model: inflation (AR intercept breaks, constant AR terms and covariance)");
  test->add_option("--series", ta.series, "comma-separated series for --preset (default: all columns)");
  test->add_option("--lags", ta.lags, "comma-separated AR orders for --preset (default: AIC choice)");
  test->add_option("--max-lag", ta.max_lag, "largest AR order considered by the AIC")->check(CLI::PositiveNumber);
  test->add_option("--breaks", ta.breaks, "number of breaks for --preset")->check(CLI::PositiveNumber);
  test->add_option("--date-column", ta.date_column, "name of the date column");
  test->add_option("--frequency", ta.frequency, "quarterly or none");
  test->add_option("--alpha", ta.alpha, "significance level of the decision");
  test->add_option("--cv-method", ta.cv_method, "direct or kl-pso");
  test->add_option("--cv-reps", ta.cv_reps, "critical-value replications");
  test->add_option("--grid-M", ta.grid_M, "half-width of the simulation grid");
  test->add_option("--grid-step", ta.grid_step, "grid step");
  test->add_option("--kl-terms", ta.kl_terms, "series terms for kl-pso");
  test->add_option("--trim", ta.trim, "trimming fraction (overrides the config)");
  test->add_option("--seed", ta.seed, "master seed (MULTIBREAK_SEED overrides)");
  test->add_option("--threads", ta.threads, "worker threads (0: all cores)");
  test->add_option("--subset", ta.subset, "groups tied under H0, by name or 1-based index (default: all)");
  test->add_option("--bandwidth", ta.bandwidth, "HAC bandwidth (default: Andrews AR(1) rule)");
  test->add_option("--ci-level", ta.ci_level, "coverage of break-date intervals");
  test->add_flag("--no-intervals", ta.no_intervals, "skip break-date intervals");
  test->add_flag("--timing", ta.timing, "record the elapsed time in the report");
  test->add_flag("--drift-as-printed", ta.drift_as_printed, "use the + sign for the covariance drift term");
  test->add_option("--out", ta.out, "write the JSON report here");

  McArgs ma;
  auto* mc = app.add_subcommand("mc", "Size or power experiment on the bivariate AR(1) system");
  mc->add_option("mode", ma.mode, "size or power")->required();
  mc->add_option("--alphas", ma.alphas, "comma-separated AR coefficients");
  mc->add_option("--deltas", ma.deltas, "break sizes 'd1,d2;d1,d2;...' (default: the full grid)");
  mc->add_option("--k1", ma.k1, "break date in equation 1 (default 50 for size, 35 for power)");
  mc->add_option("--k2", ma.k2s, "comma-separated break dates in equation 2 (power mode)");
  mc->add_option("--trim", ma.trim, "trimming fraction");
  mc->add_option("--rho", ma.rho, "error correlation");
  mc->add_option("--T", ma.T, "sample size");
  mc->add_option("--reps", ma.reps, "Monte Carlo replications per cell");
  mc->add_option("--cv-reps", ma.cv_reps, "critical-value replications");
  mc->add_option("--cv-method", ma.cv_method, "direct or kl-pso");
  mc->add_option("--seed", ma.seed, "master seed (MULTIBREAK_SEED overrides)");
  mc->add_option("--threads", ma.threads, "worker threads (0: all cores)");
  mc->add_option("--out", ma.out, "write the cell CSV here");
  mc->add_option("--table", ma.table, "write the aligned-text table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (test->parsed()) return run_test_command(ta);
    return run_mc_command(ma);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidSegmentation& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
