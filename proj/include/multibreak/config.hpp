#pragma once

// Model configuration files: one `key = value` entry per line, `#` starts a
// comment. Recognized entries:
//
//   regressor <name> = constant | trend <power>
//                    | stationary <series> [lag <k>] | integrated <series> [lag <k>]
//   equation <series> = <regressor>, <regressor>, ...
//   coefficients = <name>, ...          (with triplet entries instead of equations)
//   triplet = <row> <col> <value>       (row a*n+i of S, 0-based)
//   equations = <series>, ...           (required with triplets)
//   group <name> = <coef>, ...          (in order; the last group carries the covariance break)
//   restrict = <coef>@<regime> == <coef>@<regime>   (regimes 1-based)
//   hold_constant = <coef>, ...
//   sigma_constant = true | false
//   breaks = <m>
//   trim = <fraction>
//   estimator = qml | ols
//
// Coefficient names are <series>.<regressor>.

#include <Eigen/Dense>

#include <algorithm>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "core.hpp"

namespace multibreak {

struct KeyValue {
  std::string key;   ///< first word of the left-hand side
  std::string name;  ///< remainder of the left-hand side, may be empty
  std::string value;
  int line = 0;
};

namespace detail {

inline std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    item = trim_copy(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

inline std::string at_line(int line) { return "line " + std::to_string(line) + ": "; }

inline int parse_int(const std::string& s, int line, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(at_line(line) + what + " must be an integer, got '" + s + "'");
}

inline double parse_double(const std::string& s, int line, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(at_line(line) + what + " must be a number, got '" + s + "'");
}

inline bool parse_bool(const std::string& s, int line, const std::string& what) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw ConfigError(at_line(line) + what + " must be true or false, got '" + s + "'");
}

}  // namespace detail

inline std::vector<KeyValue> parse_key_values(std::istream& in) {
  std::vector<KeyValue> out;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string s = detail::trim_copy(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    // "==" inside a restriction belongs to the value
    if (eq == std::string::npos || eq == 0 || (eq + 1 < s.size() && s[eq + 1] == '='))
      throw ConfigError(detail::at_line(line) + "expected 'key = value'");
    KeyValue kv;
    kv.line = line;
    const auto lhs = detail::words(s.substr(0, eq));
    kv.key = lhs.front();
    for (std::size_t i = 1; i < lhs.size(); ++i) kv.name += (i > 1 ? " " : "") + lhs[i];
    kv.value = detail::trim_copy(s.substr(eq + 1));
    out.push_back(kv);
  }
  return out;
}

struct RegressorDef {
  std::string name;
  RegressorKind kind = RegressorKind::Stationary;
  bool constant = false;
  std::string series;  ///< source column for stationary and integrated regressors
  int lag = 0;
  int power = 0;  ///< trend power
};

struct RestrictionDef {
  std::string lhs, rhs;
  int lhs_regime = 1, rhs_regime = 1;
  int line = 0;
};

struct ModelConfig {
  std::vector<RegressorDef> regressors;
  std::vector<std::string> equations;
  std::vector<std::vector<std::string>> equation_regressors;  ///< empty when triplets are used
  std::vector<std::tuple<int, int, double>> triplets;
  std::vector<std::string> coefficients;  ///< names for triplet columns
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
  std::vector<RestrictionDef> restrictions;
  std::vector<std::string> hold_constant;
  bool sigma_constant = false;
  int breaks = 1;
  double trim = 0.15;
  Estimator estimator = Estimator::QuasiML;

  int max_lag() const {
    int m = 0;
    for (const auto& r : regressors) m = std::max(m, r.lag);
    return m;
  }
};

namespace detail {

inline RegressorDef parse_regressor(const std::string& name, const std::string& value, int line) {
  if (name.empty() || name.find(' ') != std::string::npos)
    throw ConfigError(at_line(line) + "regressor entries need a single-word name: 'regressor <name> = ...'");
  const auto w = words(value);
  RegressorDef r;
  r.name = name;
  if (w.empty()) throw ConfigError(at_line(line) + "empty regressor definition");
  if (w[0] == "constant" && w.size() == 1) {
    r.constant = true;
  } else if (w[0] == "trend" && w.size() == 2) {
    r.kind = RegressorKind::Trend;
    r.power = parse_int(w[1], line, "trend power");
    if (r.power < 1) throw ConfigError(at_line(line) + "trend power must be at least 1");
  } else if ((w[0] == "stationary" || w[0] == "integrated") && (w.size() == 2 || (w.size() == 4 && w[2] == "lag"))) {
    r.kind = w[0] == "stationary" ? RegressorKind::Stationary : RegressorKind::Integrated;
    r.series = w[1];
    if (w.size() == 4) r.lag = parse_int(w[3], line, "lag");
    if (r.lag < 0) throw ConfigError(at_line(line) + "lag must be non-negative");
  } else {
    throw ConfigError(at_line(line) + "unrecognized regressor definition '" + value + "'");
  }
  return r;
}

inline std::pair<std::string, int> parse_coef_at(const std::string& s, int line) {
  const auto at = s.find('@');
  if (at == std::string::npos) throw ConfigError(at_line(line) + "expected <coef>@<regime>, got '" + s + "'");
  const int regime = parse_int(trim_copy(s.substr(at + 1)), line, "regime");
  if (regime < 1) throw ConfigError(at_line(line) + "regimes are numbered from 1");
  return {trim_copy(s.substr(0, at)), regime};
}

}  // namespace detail

inline ModelConfig parse_model_config(std::istream& in) {
  ModelConfig cfg;
  bool explicit_equations = false;
  for (const auto& kv : parse_key_values(in)) {
    const int line = kv.line;
    if (kv.key == "regressor") {
      cfg.regressors.push_back(detail::parse_regressor(kv.name, kv.value, line));
    } else if (kv.key == "equation") {
      if (explicit_equations) throw ConfigError(detail::at_line(line) + "'equation' cannot be combined with 'equations'");
      if (kv.name.empty()) throw ConfigError(detail::at_line(line) + "equation entries need a series: 'equation <series> = ...'");
      cfg.equations.push_back(kv.name);
      cfg.equation_regressors.push_back(detail::split_list(kv.value));
      if (cfg.equation_regressors.back().empty())
        throw ConfigError(detail::at_line(line) + "equation '" + kv.name + "' has no regressors");
    } else if (kv.key == "equations") {
      if (!cfg.equation_regressors.empty())
        throw ConfigError(detail::at_line(line) + "'equations' cannot be combined with 'equation' entries");
      explicit_equations = true;
      cfg.equations = detail::split_list(kv.value);
    } else if (kv.key == "coefficients") {
      cfg.coefficients = detail::split_list(kv.value);
    } else if (kv.key == "triplet") {
      const auto w = detail::words(kv.value);
      if (w.size() != 3) throw ConfigError(detail::at_line(line) + "triplet needs '<row> <col> <value>'");
      cfg.triplets.emplace_back(detail::parse_int(w[0], line, "row"), detail::parse_int(w[1], line, "column"),
                                detail::parse_double(w[2], line, "value"));
    } else if (kv.key == "group") {
      if (kv.name.empty()) throw ConfigError(detail::at_line(line) + "group entries need a name: 'group <name> = ...'");
      cfg.groups.emplace_back(kv.name, detail::split_list(kv.value));
    } else if (kv.key == "restrict") {
      const auto eq = kv.value.find("==");
      if (eq == std::string::npos) throw ConfigError(detail::at_line(line) + "restriction needs '=='");
      RestrictionDef r;
      r.line = line;
      std::tie(r.lhs, r.lhs_regime) = detail::parse_coef_at(kv.value.substr(0, eq), line);
      std::tie(r.rhs, r.rhs_regime) = detail::parse_coef_at(kv.value.substr(eq + 2), line);
      cfg.restrictions.push_back(r);
    } else if (kv.key == "hold_constant") {
      for (auto& c : detail::split_list(kv.value)) cfg.hold_constant.push_back(c);
    } else if (kv.key == "sigma_constant") {
      cfg.sigma_constant = detail::parse_bool(kv.value, line, "sigma_constant");
    } else if (kv.key == "breaks") {
      cfg.breaks = detail::parse_int(kv.value, line, "breaks");
      if (cfg.breaks < 1) throw ConfigError(detail::at_line(line) + "breaks must be at least 1");
    } else if (kv.key == "trim") {
      cfg.trim = detail::parse_double(kv.value, line, "trim");
      if (!(cfg.trim > 0.0 && cfg.trim < 0.5)) throw ConfigError(detail::at_line(line) + "trim must lie in (0, 0.5)");
    } else if (kv.key == "estimator") {
      if (kv.value == "qml") cfg.estimator = Estimator::QuasiML;
      else if (kv.value == "ols") cfg.estimator = Estimator::Ols;
      else throw ConfigError(detail::at_line(line) + "estimator must be qml or ols");
    } else {
      throw ConfigError(detail::at_line(line) + "unknown key '" + kv.key + "'");
    }
  }
  if (cfg.equations.empty()) throw ConfigError("configuration defines no equations");
  if (cfg.regressors.empty()) throw ConfigError("configuration defines no regressors");
  if (cfg.equation_regressors.empty() && cfg.triplets.empty())
    throw ConfigError("configuration needs 'equation' entries or 'triplet' entries");
  if (!cfg.equation_regressors.empty() && !cfg.triplets.empty())
    throw ConfigError("'triplet' entries cannot be combined with 'equation' entries");
  return cfg;
}

inline ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file '" + path + "'");
  try {
    return parse_model_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Named numeric columns over a common index of observation labels.
struct SeriesSet {
  std::vector<std::string> labels;
  std::vector<std::string> names;
  Eigen::MatrixXd values;  ///< rows are observations

  int rows() const { return static_cast<int>(values.rows()); }

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < names.size(); ++c)
      if (names[c] == name) return static_cast<int>(c);
    return -1;
  }

  Eigen::VectorXd series(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw DataError("series '" + name + "' not found in the data");
    return values.col(c);
  }
};

struct SystemData {
  RegressorPanel panel;
  SystemSpec spec;
  int offset = 0;  ///< data row of observation t = 1
  std::vector<std::string> labels;  ///< label of observation t = 1..T
  std::vector<std::string> group_names;
};

/// Drop the first max-lag rows, assemble the regressor panel and the system
/// specification.
inline SystemData build_system(const ModelConfig& cfg, const SeriesSet& data) {
  const int off = cfg.max_lag();
  const int T = data.rows() - off;
  if (T < 10) throw DataError("too few observations after lags: " + std::to_string(T));
  const auto Ti = static_cast<Eigen::Index>(T);

  std::vector<Regressor> regs;
  std::vector<std::string> reg_names;
  for (const auto& r : cfg.regressors) {
    if (std::find(reg_names.begin(), reg_names.end(), r.name) != reg_names.end())
      throw ConfigError("regressor '" + r.name + "' defined twice");
    reg_names.push_back(r.name);
    if (r.constant) {
      regs.push_back(Regressor::constant(r.name));
    } else if (r.kind == RegressorKind::Trend) {
      regs.push_back(Regressor::trend(r.name, r.power));
    } else {
      const Eigen::VectorXd v = data.series(r.series).segment(off - r.lag, Ti);
      regs.push_back(r.kind == RegressorKind::Stationary ? Regressor::stationary(r.name, v)
                                                         : Regressor::integrated(r.name, v));
    }
  }
  Eigen::MatrixXd Y(Ti, static_cast<Eigen::Index>(cfg.equations.size()));
  for (std::size_t i = 0; i < cfg.equations.size(); ++i)
    Y.col(static_cast<Eigen::Index>(i)) = data.series(cfg.equations[i]).segment(off, Ti);

  SystemSpec spec;
  if (!cfg.equation_regressors.empty()) {
    std::vector<std::vector<int>> eqs;
    for (std::size_t i = 0; i < cfg.equations.size(); ++i) {
      std::vector<int> cols;
      for (const auto& name : cfg.equation_regressors[i]) {
        const auto it = std::find(reg_names.begin(), reg_names.end(), name);
        if (it == reg_names.end())
          throw ConfigError("equation '" + cfg.equations[i] + "' uses undefined regressor '" + name + "'");
        cols.push_back(static_cast<int>(it - reg_names.begin()));
      }
      eqs.push_back(cols);
    }
    spec = SystemSpec::from_equations(eqs, static_cast<int>(regs.size()), cfg.equations, reg_names);
  } else {
    int p = 0;
    for (const auto& [r, c, v] : cfg.triplets) p = std::max(p, c + 1);
    spec.n = static_cast<int>(cfg.equations.size());
    spec.q = static_cast<int>(regs.size());
    spec.p = p;
    spec.S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.n) * spec.q, p);
    for (const auto& [r, c, v] : cfg.triplets) {
      if (r < 0 || r >= spec.S.rows() || c < 0) throw ConfigError("triplet (" + std::to_string(r) + ", " +
                                                                  std::to_string(c) + ") out of range");
      spec.S(r, c) = v;
    }
    if (!cfg.coefficients.empty() && static_cast<int>(cfg.coefficients.size()) != p)
      throw ConfigError("'coefficients' lists " + std::to_string(cfg.coefficients.size()) + " names for " +
                        std::to_string(p) + " triplet columns");
    for (int l = 0; l < p; ++l)
      spec.coef_names.push_back(cfg.coefficients.empty() ? "b" + std::to_string(l + 1)
                                                         : cfg.coefficients[static_cast<std::size_t>(l)]);
    std::vector<int> all(static_cast<std::size_t>(p));
    for (int l = 0; l < p; ++l) all[static_cast<std::size_t>(l)] = l;
    spec.groups = {all};
  }
  spec.breaks = cfg.breaks;
  spec.trim = cfg.trim;
  spec.sigma_constant = cfg.sigma_constant;
  spec.estimator = cfg.estimator;

  auto coef = [&](const std::string& name, int line) {
    const int l = spec.coef_index(name);
    if (l < 0)
      throw ConfigError((line > 0 ? detail::at_line(line) : std::string()) + "unknown coefficient '" + name + "'");
    return l;
  };
  SystemData out{RegressorPanel(Y, regs, cfg.equations), spec, off, {}, {}};
  if (!cfg.groups.empty()) {
    out.spec.groups.clear();
    for (const auto& [name, members] : cfg.groups) {
      std::vector<int> g;
      for (const auto& c : members) g.push_back(coef(c, 0));
      out.spec.groups.push_back(g);
      out.group_names.push_back(name);
    }
  } else {
    out.group_names = {"all"};
  }
  for (const auto& c : cfg.hold_constant) out.spec.hold_constant(coef(c, 0));
  for (const auto& r : cfg.restrictions) {
    if (r.lhs_regime > cfg.breaks + 1 || r.rhs_regime > cfg.breaks + 1)
      throw ConfigError(detail::at_line(r.line) + "regime exceeds breaks + 1");
    out.spec.restrictions.push_back(
        LinearRestriction::equal({r.lhs_regime - 1, coef(r.lhs, r.line)}, {r.rhs_regime - 1, coef(r.rhs, r.line)}));
  }
  for (int t = 0; t < T; ++t) {
    const auto row = static_cast<std::size_t>(off + t);
    out.labels.push_back(row < data.labels.size() ? data.labels[row] : std::to_string(t + 1));
  }
  if (const auto diag = validate(out.spec, out.panel); !diag.empty()) throw ConfigError(format_diagnostics(diag));
  return out;
}

}  // namespace multibreak
