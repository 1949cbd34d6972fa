#pragma once

// Data ingestion with quarterly dates, AR lag selection and the inflation
// persistence preset.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "core.hpp"
#include "likelihood.hpp"

namespace multibreak {

struct Quarter {
  int year = 0;
  int q = 1;  ///< 1..4

  int index() const { return year * 4 + (q - 1); }
  static Quarter from_index(int i) { return {i / 4, i % 4 + 1}; }
  Quarter next() const { return from_index(index() + 1); }
  std::string str() const { return std::to_string(year) + ":Q" + std::to_string(q); }
  bool operator==(const Quarter&) const = default;
};

/// Accepts 1984Q1, 1984:Q1, 1984-Q1 and lower-case q.
inline std::optional<Quarter> parse_quarter(const std::string& raw) {
  const std::string s = detail::trim_copy(raw);
  const auto qpos = s.find_first_of("Qq");
  if (qpos == std::string::npos || qpos < 4 || qpos + 2 != s.size()) return std::nullopt;
  std::string y = s.substr(0, qpos);
  if (y.back() == ':' || y.back() == '-' || y.back() == ' ') y.pop_back();
  if (y.size() != 4 || y.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  const char c = s[qpos + 1];
  if (c < '1' || c > '4') return std::nullopt;
  return Quarter{std::stoi(y), c - '0'};
}

enum class Frequency { Quarterly, None };

namespace detail {

inline std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(trim_copy(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim_copy(cur));
  return out;
}

}  // namespace detail

/// Header row, one date column and numeric series columns. `series` empty
/// selects every column other than the date. Row numbers in errors count
/// file lines from 1 (the header).
inline SeriesSet ingest_csv(std::istream& in, const std::string& date_column, const std::vector<std::string>& series = {},
                            Frequency freq = Frequency::Quarterly) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV input");
  const auto header = detail::csv_fields(line);
  int date_idx = -1;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == date_column) date_idx = static_cast<int>(c);
  if (date_idx < 0) throw DataError("date column '" + date_column + "' not found in header");
  std::vector<int> cols;
  SeriesSet out;
  if (series.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (static_cast<int>(c) != date_idx) cols.push_back(static_cast<int>(c)), out.names.push_back(header[c]);
  } else {
    for (const auto& s : series) {
      const auto it = std::find(header.begin(), header.end(), s);
      if (it == header.end()) throw DataError("column '" + s + "' not found in header");
      cols.push_back(static_cast<int>(it - header.begin()));
      out.names.push_back(s);
    }
  }
  if (cols.empty()) throw DataError("no series columns selected");

  std::vector<std::vector<double>> rows;
  std::optional<Quarter> prev;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim_copy(line).empty()) continue;
    const auto f = detail::csv_fields(line);
    if (f.size() != header.size())
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(f.size()));
    const std::string& d = f[static_cast<std::size_t>(date_idx)];
    if (freq == Frequency::Quarterly) {
      const auto q = parse_quarter(d);
      if (!q) throw DataError("row " + std::to_string(row) + ": cannot parse quarterly date '" + d + "'");
      if (prev) {
        if (q->index() == prev->index())
          throw DataError("row " + std::to_string(row) + ": duplicate date " + q->str());
        if (q->index() < prev->index())
          throw DataError("row " + std::to_string(row) + ": date " + q->str() + " is out of order after " + prev->str());
        if (q->index() != prev->index() + 1)
          throw DataError("row " + std::to_string(row) + ": gap in dates, " + prev->next().str() + " is missing before " +
                          q->str());
      }
      prev = q;
      out.labels.push_back(q->str());
    } else {
      if (std::find(out.labels.begin(), out.labels.end(), d) != out.labels.end())
        throw DataError("row " + std::to_string(row) + ": duplicate date " + d);
      out.labels.push_back(d);
    }
    std::vector<double> v;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const std::string& cell = f[static_cast<std::size_t>(cols[k])];
      std::size_t pos = 0;
      double x = 0.0;
      try {
        x = std::stod(cell, &pos);
      } catch (const std::exception&) {
        pos = std::string::npos;
      }
      if (cell.empty() || pos != cell.size() || !std::isfinite(x))
        throw DataError("row " + std::to_string(row) + ", column '" + out.names[k] + "': non-numeric value '" + cell + "'");
      v.push_back(x);
    }
    rows.push_back(v);
  }
  if (rows.empty()) throw DataError("CSV has no data rows");
  out.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return out;
}

inline SeriesSet ingest_csv(const std::string& path, const std::string& date_column,
                            const std::vector<std::string>& series = {}, Frequency freq = Frequency::Quarterly) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  try {
    return ingest_csv(in, date_column, series, freq);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// AR models by OLS

struct ArFit {
  Eigen::VectorXd coef;  ///< intercept, then lags 1..k
  double ssr = 0.0;
  int nobs = 0;

  double persistence() const { return coef.tail(coef.size() - 1).sum(); }
};

/// OLS of y_t on (1, y_{t-1}, ..., y_{t-k}) for t = start..end-1 (0-based, start >= k).
inline ArFit fit_ar(const Eigen::VectorXd& y, int k, int start) {
  const int T = static_cast<int>(y.size());
  if (start < k) throw ConfigError("fit_ar: start must leave room for the lags");
  const int N = T - start;
  Eigen::MatrixXd X(N, k + 1);
  Eigen::VectorXd Y = y.segment(start, N);
  X.col(0).setOnes();
  for (int l = 1; l <= k; ++l) X.col(l) = y.segment(start - l, N);
  ArFit f;
  f.coef = X.colPivHouseholderQr().solve(Y);
  f.ssr = (Y - X * f.coef).squaredNorm();
  f.nobs = N;
  return f;
}

inline double ar_aic(const ArFit& f, int k) { return f.nobs * std::log(f.ssr / f.nobs) + 2.0 * (k + 1); }

/// AIC lag choice over 1..max_lag on the common sample that drops the first
/// max_lag observations; ties go to the smaller lag.
inline int select_ar_lag(const Eigen::VectorXd& y, int max_lag) {
  if (max_lag < 1) throw ConfigError("select_ar_lag: max lag must be at least 1");
  if (y.size() <= max_lag + 10) throw DataError("select_ar_lag: need more than max lag + 10 observations");
  int best = 1;
  double best_aic = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= max_lag; ++k) {
    const double a = ar_aic(fit_ar(y, k, max_lag), k);
    if (a < best_aic) best_aic = a, best = k;
  }
  return best;
}

inline double persistence(const Eigen::VectorXd& ar_coefficients) { return ar_coefficients.sum(); }

// ---------------------------------------------------------------------------
// Inflation preset: AR(p_i) per series with an intercept break, AR
// coefficients and error covariance constant across regimes. Each equation
// is one group.

inline std::string lag_name(const std::string& series, int k) { return series + "_lag" + std::to_string(k); }

inline ModelConfig ar_intercept_preset(const std::vector<std::string>& series, const std::vector<int>& lags, int breaks = 1,
                                       double trim = 0.15) {
  if (series.size() != lags.size()) throw ConfigError("preset needs one lag order per series");
  ModelConfig cfg;
  cfg.breaks = breaks;
  cfg.trim = trim;
  cfg.sigma_constant = true;
  cfg.regressors.push_back({"const", RegressorKind::Stationary, true, "", 0, 0});
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (lags[i] < 1) throw ConfigError("preset lag orders must be at least 1");
    std::vector<std::string> eq{"const"};
    std::vector<std::string> members{series[i] + ".const"};
    for (int k = 1; k <= lags[i]; ++k) {
      cfg.regressors.push_back({lag_name(series[i], k), RegressorKind::Stationary, false, series[i], k, 0});
      eq.push_back(lag_name(series[i], k));
      const std::string c = series[i] + "." + lag_name(series[i], k);
      members.push_back(c);
      cfg.hold_constant.push_back(c);
    }
    cfg.equations.push_back(series[i]);
    cfg.equation_regressors.push_back(eq);
    cfg.groups.emplace_back(series[i], members);
  }
  return cfg;
}

/// Sum of the fitted AR coefficients of `series` in regime `regime`.
inline double preset_persistence(const SystemData& sd, const FitResult& fit, const std::string& series, int regime) {
  double s = 0.0;
  const std::string prefix = series + "." + series + "_lag";
  for (int l = 0; l < sd.spec.p; ++l)
    if (sd.spec.coef_names[static_cast<std::size_t>(l)].rfind(prefix, 0) == 0)
      s += fit.params.beta[static_cast<std::size_t>(regime)](l);
  return s;
}

}  // namespace multibreak
