#pragma once

// End-to-end common-breaks test on a configured system and its JSON report.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "application.hpp"
#include "config.hpp"
#include "estimation.hpp"
#include "hac.hpp"
#include "kl_pso.hpp"
#include "limitdist.hpp"
#include "likelihood.hpp"

namespace multibreak {

inline constexpr int kReportSchemaVersion = 1;

struct TestRequest {
  double alpha = 0.05;
  std::vector<double> levels{0.10, 0.05, 0.01};
  std::string cv_method = "direct";
  int cv_reps = 1000;
  GridConfig grid;
  KlConfig kl;
  std::uint64_t seed = 20240101;
  unsigned threads = 0;
  std::vector<int> subset;  ///< 0-based groups; empty tests all groups
  HacConfig hac;
  SearchOptions search;
  bool intervals = true;
  double interval_level = 0.95;
  bool variance_drift_as_printed = false;
};

struct GroupBreaks {
  std::string group;
  std::vector<int> dates;
  std::vector<std::string> labels;
  bool operator==(const GroupBreaks&) const = default;
};

struct RegimeEstimates {
  int regime = 1;
  std::vector<std::pair<std::string, double>> coefficients;
  std::vector<std::vector<double>> sigma;
  bool operator==(const RegimeEstimates&) const = default;
};

struct FitSummary {
  std::string name;
  double loglik = 0.0;
  std::string method;
  long long candidates = 0;
  std::vector<GroupBreaks> breaks;
  std::vector<RegimeEstimates> regimes;
  std::vector<std::pair<std::string, double>> persistence;  ///< last regime
  bool operator==(const FitSummary&) const = default;
};

struct IntervalSummary {
  std::vector<std::string> groups;
  int break_index = 1;
  int point = 0, lower = 0, upper = 0;
  std::string point_label, lower_label, upper_label;
  double level = 0.95;
  std::string method;
  bool operator==(const IntervalSummary&) const = default;
};

struct RunReport {
  int schema_version = kReportSchemaVersion;
  std::string hypothesis;
  std::vector<std::string> subset;
  double statistic = 0.0;
  double alpha = 0.05;
  bool reject = false;
  double p_value = 1.0;
  std::vector<double> levels;
  std::vector<double> critical_values;
  std::string cv_method;
  int cv_reps = 0;
  double boundary_fraction = 0.0;
  long long convergence_warnings = 0;
  long long floored_draws = 0;
  std::vector<std::string> warnings;
  std::vector<FitSummary> fits;
  std::vector<IntervalSummary> intervals;
  std::vector<std::pair<std::string, double>> no_break_persistence;
  std::uint64_t seed = 0;
  int T = 0;
  std::string sample_start, sample_end;
  nlohmann::json config = nlohmann::json::object();
  std::optional<double> elapsed_seconds;  ///< only serialized when set
  bool operator==(const RunReport&) const = default;
};

// JSON mapping; pairs are written as two-element arrays.

inline void to_json(nlohmann::json& j, const GroupBreaks& v) {
  j = {{"group", v.group}, {"dates", v.dates}, {"labels", v.labels}};
}
inline void from_json(const nlohmann::json& j, GroupBreaks& v) {
  j.at("group").get_to(v.group);
  j.at("dates").get_to(v.dates);
  j.at("labels").get_to(v.labels);
}
inline void to_json(nlohmann::json& j, const RegimeEstimates& v) {
  j = {{"regime", v.regime}, {"coefficients", v.coefficients}, {"sigma", v.sigma}};
}
inline void from_json(const nlohmann::json& j, RegimeEstimates& v) {
  j.at("regime").get_to(v.regime);
  j.at("coefficients").get_to(v.coefficients);
  j.at("sigma").get_to(v.sigma);
}
inline void to_json(nlohmann::json& j, const FitSummary& v) {
  j = {{"name", v.name},         {"loglik", v.loglik}, {"method", v.method},
       {"candidates", v.candidates}, {"breaks", v.breaks}, {"regimes", v.regimes},
       {"persistence", v.persistence}};
}
inline void from_json(const nlohmann::json& j, FitSummary& v) {
  j.at("name").get_to(v.name);
  j.at("loglik").get_to(v.loglik);
  j.at("method").get_to(v.method);
  j.at("candidates").get_to(v.candidates);
  j.at("breaks").get_to(v.breaks);
  j.at("regimes").get_to(v.regimes);
  j.at("persistence").get_to(v.persistence);
}
inline void to_json(nlohmann::json& j, const IntervalSummary& v) {
  j = {{"groups", v.groups},           {"break_index", v.break_index}, {"point", v.point},
       {"lower", v.lower},             {"upper", v.upper},             {"point_label", v.point_label},
       {"lower_label", v.lower_label}, {"upper_label", v.upper_label}, {"level", v.level},
       {"method", v.method}};
}
inline void from_json(const nlohmann::json& j, IntervalSummary& v) {
  j.at("groups").get_to(v.groups);
  j.at("break_index").get_to(v.break_index);
  j.at("point").get_to(v.point);
  j.at("lower").get_to(v.lower);
  j.at("upper").get_to(v.upper);
  j.at("point_label").get_to(v.point_label);
  j.at("lower_label").get_to(v.lower_label);
  j.at("upper_label").get_to(v.upper_label);
  j.at("level").get_to(v.level);
  j.at("method").get_to(v.method);
}
inline void to_json(nlohmann::json& j, const RunReport& v) {
  j = {{"schema_version", v.schema_version},
       {"hypothesis", v.hypothesis},
       {"subset", v.subset},
       {"statistic", v.statistic},
       {"alpha", v.alpha},
       {"reject", v.reject},
       {"p_value", v.p_value},
       {"levels", v.levels},
       {"critical_values", v.critical_values},
       {"cv_method", v.cv_method},
       {"cv_reps", v.cv_reps},
       {"boundary_fraction", v.boundary_fraction},
       {"convergence_warnings", v.convergence_warnings},
       {"floored_draws", v.floored_draws},
       {"warnings", v.warnings},
       {"fits", v.fits},
       {"intervals", v.intervals},
       {"no_break_persistence", v.no_break_persistence},
       {"seed", v.seed},
       {"T", v.T},
       {"sample_start", v.sample_start},
       {"sample_end", v.sample_end},
       {"config", v.config}};
  if (v.elapsed_seconds) j["elapsed_seconds"] = *v.elapsed_seconds;
}
inline void from_json(const nlohmann::json& j, RunReport& v) {
  j.at("schema_version").get_to(v.schema_version);
  if (v.schema_version != kReportSchemaVersion)
    throw ConfigError("unsupported report schema version " + std::to_string(v.schema_version));
  j.at("hypothesis").get_to(v.hypothesis);
  j.at("subset").get_to(v.subset);
  j.at("statistic").get_to(v.statistic);
  j.at("alpha").get_to(v.alpha);
  j.at("reject").get_to(v.reject);
  j.at("p_value").get_to(v.p_value);
  j.at("levels").get_to(v.levels);
  j.at("critical_values").get_to(v.critical_values);
  j.at("cv_method").get_to(v.cv_method);
  j.at("cv_reps").get_to(v.cv_reps);
  j.at("boundary_fraction").get_to(v.boundary_fraction);
  j.at("convergence_warnings").get_to(v.convergence_warnings);
  j.at("floored_draws").get_to(v.floored_draws);
  j.at("warnings").get_to(v.warnings);
  j.at("fits").get_to(v.fits);
  j.at("intervals").get_to(v.intervals);
  j.at("no_break_persistence").get_to(v.no_break_persistence);
  j.at("seed").get_to(v.seed);
  j.at("T").get_to(v.T);
  j.at("sample_start").get_to(v.sample_start);
  j.at("sample_end").get_to(v.sample_end);
  v.config = j.at("config");
  if (j.contains("elapsed_seconds")) v.elapsed_seconds = j.at("elapsed_seconds").get<double>();
  else v.elapsed_seconds.reset();
}

namespace detail {

inline std::string label_of(const SystemData& sd, int t) {
  return t >= 1 && t <= static_cast<int>(sd.labels.size()) ? sd.labels[static_cast<std::size_t>(t - 1)]
                                                           : std::to_string(t);
}

inline FitSummary summarize_fit(const SystemData& sd, const std::string& name, const SearchResult& sr) {
  FitSummary s;
  s.name = name;
  s.loglik = sr.fit.loglik;
  s.method = sr.method;
  s.candidates = sr.candidates;
  for (int g = 0; g < sr.fit.segmentation.groups(); ++g) {
    GroupBreaks b;
    b.group = sd.group_names[static_cast<std::size_t>(g)];
    b.dates = sr.fit.segmentation.dates(g);
    for (int k : b.dates) b.labels.push_back(label_of(sd, k));
    s.breaks.push_back(b);
  }
  for (std::size_t j = 0; j < sr.fit.params.beta.size(); ++j) {
    RegimeEstimates r;
    r.regime = static_cast<int>(j) + 1;
    for (int l = 0; l < sd.spec.p; ++l)
      r.coefficients.emplace_back(sd.spec.coef_names[static_cast<std::size_t>(l)], sr.fit.params.beta[j](l));
    const Eigen::MatrixXd& sg = sr.fit.params.sigma[j];
    for (Eigen::Index a = 0; a < sg.rows(); ++a) {
      std::vector<double> row;
      for (Eigen::Index b = 0; b < sg.cols(); ++b) row.push_back(sg(a, b));
      r.sigma.push_back(row);
    }
    s.regimes.push_back(r);
  }
  const int last = static_cast<int>(sr.fit.params.beta.size()) - 1;
  for (const auto& eq : sd.panel.equation_names()) {
    const std::string prefix = eq + "." + eq + "_lag";
    const bool has = std::any_of(sd.spec.coef_names.begin(), sd.spec.coef_names.end(),
                                 [&](const std::string& c) { return c.rfind(prefix, 0) == 0; });
    if (has) s.persistence.emplace_back(eq, preset_persistence(sd, sr.fit, eq, last));
  }
  return s;
}

inline std::string hypothesis_text(const SystemData& sd, const std::vector<int>& subset) {
  std::string h;
  for (std::size_t i = 0; i < subset.size(); ++i)
    h += (i ? " = " : "") + std::string("k(") + sd.group_names[static_cast<std::size_t>(subset[i])] + ")";
  return subset.size() == 1 ? h + " (single group)" : h;
}

}  // namespace detail

/// Roles for the limit simulation of a partial test: groups in the subset are
/// tied; a group outside it moves freely when its restricted dates coincide
/// with the subset's and is pinned otherwise.
inline std::vector<GroupRole> partial_roles(const Segmentation& restricted, const std::vector<int>& subset) {
  const int G = restricted.groups();
  std::vector<GroupRole> roles(static_cast<std::size_t>(G), GroupRole::Pinned);
  const auto& ref = restricted.dates(subset.front());
  for (int g = 0; g < G; ++g) {
    if (std::find(subset.begin(), subset.end(), g) != subset.end()) roles[static_cast<std::size_t>(g)] = GroupRole::Tied;
    else if (restricted.dates(g) == ref) roles[static_cast<std::size_t>(g)] = GroupRole::Free;
  }
  return roles;
}

inline RunReport run_test(const SystemData& sd, const TestRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  if (req.cv_method != "direct" && req.cv_method != "kl-pso")
    throw ConfigError("unknown critical-value method '" + req.cv_method + "' (use direct or kl-pso)");
  if (!(req.alpha > 0.0 && req.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  const Model model(sd.panel, sd.spec);
  const int G = sd.spec.G();

  SearchOptions so = req.search;
  so.seed = req.seed;
  so.threads = resolve_threads(req.threads);
  const TestOutcome t = cb_statistic_partial(model, req.subset, so);

  std::vector<double> levels = req.levels;
  if (std::find(levels.begin(), levels.end(), req.alpha) == levels.end()) levels.push_back(req.alpha);

  RunReport r;
  r.seed = req.seed;
  r.T = model.T();
  r.sample_start = sd.labels.empty() ? "1" : sd.labels.front();
  r.sample_end = sd.labels.empty() ? std::to_string(r.T) : sd.labels.back();
  for (int g : t.subset) r.subset.push_back(sd.group_names[static_cast<std::size_t>(g)]);
  r.hypothesis = detail::hypothesis_text(sd, t.subset);
  r.statistic = t.statistic;
  r.alpha = req.alpha;
  r.cv_method = req.cv_method;
  r.cv_reps = req.cv_reps;
  r.fits.push_back(detail::summarize_fit(sd, "restricted", t.restricted));
  r.fits.push_back(detail::summarize_fit(sd, "unrestricted", t.unrestricted));

  LimitOptions lo;
  lo.reps = req.cv_reps;
  lo.grid = req.grid;
  lo.seed = req.seed;
  lo.threads = so.threads;
  lo.levels = levels;
  lo.variance_drift_as_printed = req.variance_drift_as_printed;
  if (G > 1) lo.roles = partial_roles(t.restricted.fit.segmentation, t.subset);
  const auto ref_dates = t.restricted.fit.segmentation.dates(t.subset.front());
  const NuisanceSet ns = plug_in_nuisance(model, t.restricted.fit, req.hac, ref_dates);
  const LimitSample ls = req.cv_method == "kl-pso" ? simulate_kl_pso(ns, lo, req.kl) : simulate_direct(ns, lo);
  r.levels = ls.levels;
  r.critical_values = ls.critical_values;
  r.p_value = pvalue(ls, t.statistic);
  const auto ai = static_cast<std::size_t>(std::find(levels.begin(), levels.end(), req.alpha) - levels.begin());
  r.reject = t.statistic > ls.critical_values[ai];
  r.boundary_fraction = ls.boundary_fraction();
  r.convergence_warnings = ls.convergence_warnings;
  r.floored_draws = ls.floored_draws;
  r.warnings = ls.warnings;

  if (req.intervals) {
    // one interval per break and per block of groups sharing dates in the
    // restricted fit
    const Segmentation& seg = t.restricted.fit.segmentation;
    std::vector<char> seen(static_cast<std::size_t>(G), 0);
    LimitOptions co = lo;
    co.roles.clear();
    for (int g = 0; g < G; ++g) {
      if (seen[static_cast<std::size_t>(g)]) continue;
      std::vector<int> block;
      for (int h = g; h < G; ++h)
        if (!seen[static_cast<std::size_t>(h)] && seg.dates(h) == seg.dates(g)) block.push_back(h), seen[static_cast<std::size_t>(h)] = 1;
      try {
        const NuisanceSet bns = block == t.subset || G == 1 ? ns : plug_in_nuisance(model, t.restricted.fit, req.hac, seg.dates(g));
        for (int j = 0; j < sd.spec.breaks; ++j) {
          const BreakInterval bi = break_confidence_interval(model, t.restricted.fit, bns, j, 1.0 - req.interval_level, co, block);
          IntervalSummary s;
          for (int h : block) s.groups.push_back(sd.group_names[static_cast<std::size_t>(h)]);
          s.break_index = j + 1;
          s.point = bi.point;
          s.lower = bi.lower;
          s.upper = bi.upper;
          s.point_label = detail::label_of(sd, bi.point);
          s.lower_label = detail::label_of(sd, bi.lower);
          s.upper_label = detail::label_of(sd, bi.upper);
          s.level = bi.level;
          s.method = bi.method;
          r.intervals.push_back(s);
        }
      } catch (const NumericalError& e) {
        r.warnings.push_back(std::string("confidence interval skipped: ") + e.what());
      }
    }
  }

  nlohmann::json cfg;
  cfg["alpha"] = req.alpha;
  cfg["levels"] = req.levels;
  cfg["cv_method"] = req.cv_method;
  cfg["cv_reps"] = req.cv_reps;
  cfg["grid_M"] = req.grid.M;
  cfg["grid_step"] = req.grid.step;
  cfg["kl_terms"] = req.kl.terms;
  cfg["trim"] = sd.spec.trim;
  cfg["breaks"] = sd.spec.breaks;
  cfg["sigma_constant"] = sd.spec.sigma_constant;
  cfg["groups"] = sd.group_names;
  cfg["coefficients"] = sd.spec.coef_names;
  cfg["restrictions"] = sd.spec.restrictions.size();
  cfg["hac_bandwidth"] = req.hac.bandwidth ? nlohmann::json(*req.hac.bandwidth) : nlohmann::json("andrews");
  cfg["interval_level"] = req.interval_level;
  cfg["variance_drift_as_printed"] = req.variance_drift_as_printed;
  r.config = cfg;
  r.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace multibreak
