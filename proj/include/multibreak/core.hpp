#pragma once

// Domain types for multi-equation regression systems with parameter groups
// whose coefficients may break at group-specific dates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <compare>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace multibreak {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed model configuration or arguments (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (CLI exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: singular normal equations, non-PD covariance, etc.
/// (CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class InvalidSegmentation : public Error {
 public:
  InvalidSegmentation(int group, int regime, const std::string& what)
      : Error(what), group_(group), regime_(regime) {}
  int group() const { return group_; }
  int regime() const { return regime_; }

 private:
  int group_;
  int regime_;
};

// ---------------------------------------------------------------------------
// Regressors and panel data

enum class RegressorKind { Stationary, Trend, Integrated };

inline std::string to_string(RegressorKind k) {
  switch (k) {
    case RegressorKind::Stationary: return "stationary";
    case RegressorKind::Trend: return "trend";
    case RegressorKind::Integrated: return "integrated";
  }
  return "?";
}

struct Regressor {
  std::string name;
  RegressorKind kind = RegressorKind::Stationary;
  int power = 0;           // trend power r, only for Trend
  Eigen::VectorXd values;  // raw values; trends are generated

  static Regressor constant(std::string name = "const") {
    return {std::move(name), RegressorKind::Stationary, 0, Eigen::VectorXd()};
  }
  static Regressor stationary(std::string name, Eigen::VectorXd v) {
    return {std::move(name), RegressorKind::Stationary, 0, std::move(v)};
  }
  static Regressor trend(std::string name, int power) {
    return {std::move(name), RegressorKind::Trend, power, Eigen::VectorXd()};
  }
  /// Raw I(1) series; the design uses T^{-1/2} times these values.
  static Regressor integrated(std::string name, Eigen::VectorXd v) {
    return {std::move(name), RegressorKind::Integrated, 0, std::move(v)};
  }
};

/// Observed system data. Immutable after construction.
///
/// Row t-1 of y() / design() is observation t (1-based dates throughout the
/// library). A constant regressor (empty `values` with Stationary kind) is
/// filled with ones; trend columns are generated as (t/T)^r; integrated
/// columns enter the design scaled by T^{-1/2}. A coefficient estimated on a
/// scaled integrated regressor maps back to the raw series by multiplying
/// with T^{-1/2}.
class RegressorPanel {
 public:
  RegressorPanel() = default;

  RegressorPanel(Eigen::MatrixXd y, std::vector<Regressor> regressors,
                 std::vector<std::string> equation_names = {})
      : y_(std::move(y)),
        regressors_(std::move(regressors)),
        equation_names_(std::move(equation_names)) {
    const auto T = static_cast<int>(y_.rows());
    if (T == 0 || y_.cols() == 0) throw DataError("panel: empty dependent matrix");
    if (equation_names_.empty()) {
      for (int i = 0; i < y_.cols(); ++i) equation_names_.push_back("y" + std::to_string(i + 1));
    }
    if (static_cast<int>(equation_names_.size()) != y_.cols())
      throw DataError("panel: equation name count does not match columns of y");
    x_.resize(T, static_cast<Eigen::Index>(regressors_.size()));
    const double scale = 1.0 / std::sqrt(static_cast<double>(T));
    for (std::size_t a = 0; a < regressors_.size(); ++a) {
      auto& r = regressors_[a];
      const auto col = static_cast<Eigen::Index>(a);
      switch (r.kind) {
        case RegressorKind::Stationary:
          if (r.values.size() == 0) r.values = Eigen::VectorXd::Ones(T);
          if (r.values.size() != T) throw DataError("panel: regressor '" + r.name + "' has wrong length");
          x_.col(col) = r.values;
          break;
        case RegressorKind::Trend:
          if (r.power < 1) throw ConfigError("panel: trend '" + r.name + "' needs power >= 1");
          r.values.resize(T);
          for (int t = 1; t <= T; ++t)
            r.values(t - 1) = std::pow(static_cast<double>(t) / T, r.power);
          x_.col(col) = r.values;
          break;
        case RegressorKind::Integrated:
          if (r.values.size() != T) throw DataError("panel: regressor '" + r.name + "' has wrong length");
          x_.col(col) = scale * r.values;
          break;
      }
    }
  }

  int T() const { return static_cast<int>(y_.rows()); }
  int n() const { return static_cast<int>(y_.cols()); }
  int q() const { return static_cast<int>(x_.cols()); }

  const Eigen::MatrixXd& y() const { return y_; }
  /// T x q design with trends generated and integrated columns scaled.
  const Eigen::MatrixXd& design() const { return x_; }
  const std::vector<Regressor>& regressors() const { return regressors_; }
  const std::vector<std::string>& equation_names() const { return equation_names_; }

  std::vector<int> columns_of(RegressorKind kind) const {
    std::vector<int> out;
    for (std::size_t a = 0; a < regressors_.size(); ++a)
      if (regressors_[a].kind == kind) out.push_back(static_cast<int>(a));
    return out;
  }

  /// Index of the first stationary column identically equal to one, or -1.
  int constant_column() const {
    for (int a : columns_of(RegressorKind::Stationary))
      if ((x_.col(a).array() == 1.0).all()) return a;
    return -1;
  }

  int column_index(const std::string& name) const {
    for (std::size_t a = 0; a < regressors_.size(); ++a)
      if (regressors_[a].name == name) return static_cast<int>(a);
    return -1;
  }

 private:
  Eigen::MatrixXd y_;
  std::vector<Regressor> regressors_;
  std::vector<std::string> equation_names_;
  Eigen::MatrixXd x_;
};

// ---------------------------------------------------------------------------
// System specification

/// Reference to coefficient `coef` of regime `regime` (both 0-based) in the
/// stacked vector (beta_1', ..., beta_{m+1}')'.
struct CoefRef {
  int regime = 0;
  int coef = 0;
};

/// sum_k weight_k * theta[ref_k] == rhs
struct LinearRestriction {
  std::vector<std::pair<CoefRef, double>> terms;
  double rhs = 0.0;

  static LinearRestriction equal(CoefRef a, CoefRef b) {
    return {{{a, 1.0}, {b, -1.0}}, 0.0};
  }
};

enum class Estimator {
  QuasiML,  ///< iterated feasible GLS to the Gaussian quasi-ML fixed point
  Ols,      ///< identity weights for the coefficients, one covariance update
};

struct SystemSpec {
  int n = 0;
  int q = 0;
  int p = 0;
  Eigen::MatrixXd S;  ///< nq x p; row a*n + i is regressor a in equation i
  std::vector<std::string> coef_names;
  /// Partition of {0..p-1}. The covariance matrix breaks with the last group,
  /// which may be empty.
  std::vector<std::vector<int>> groups;
  std::vector<LinearRestriction> restrictions;
  bool sigma_constant = false;
  int breaks = 1;
  double trim = 0.15;
  Estimator estimator = Estimator::QuasiML;

  int G() const { return static_cast<int>(groups.size()); }
  int sigma_group() const { return G() - 1; }

  /// Minimum regime length ceil(T * trim), counted in observations.
  int min_spacing(int T) const {
    return static_cast<int>(std::ceil(T * trim - 1e-9));
  }

  /// Group owning coefficient l, or -1.
  int group_of(int l) const {
    for (int g = 0; g < G(); ++g)
      if (std::find(groups[g].begin(), groups[g].end(), l) != groups[g].end()) return g;
    return -1;
  }

  int coef_index(const std::string& name) const {
    for (std::size_t l = 0; l < coef_names.size(); ++l)
      if (coef_names[l] == name) return static_cast<int>(l);
    return -1;
  }

  /// True when every coefficient and the covariance may change at each break
  /// (no linear restrictions, regime-specific covariance).
  bool pure_change() const { return restrictions.empty() && !sigma_constant; }

  /// Build S from per-equation regressor lists; coefficients are numbered
  /// equation by equation in list order and named "<equation>.<regressor>".
  static SystemSpec from_equations(const std::vector<std::vector<int>>& equation_regressors, int q,
                                   const std::vector<std::string>& equation_names = {},
                                   const std::vector<std::string>& regressor_names = {}) {
    SystemSpec s;
    s.n = static_cast<int>(equation_regressors.size());
    s.q = q;
    for (const auto& eq : equation_regressors) s.p += static_cast<int>(eq.size());
    s.S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.n) * q, s.p);
    int l = 0;
    for (int i = 0; i < s.n; ++i) {
      for (int a : equation_regressors[i]) {
        if (a < 0 || a >= q) throw ConfigError("from_equations: regressor index out of range");
        s.S(a * s.n + i, l) = 1.0;
        const std::string en = i < static_cast<int>(equation_names.size()) ? equation_names[i] : "y" + std::to_string(i + 1);
        const std::string rn = a < static_cast<int>(regressor_names.size()) ? regressor_names[a] : "x" + std::to_string(a + 1);
        s.coef_names.push_back(en + "." + rn);
        ++l;
      }
    }
    std::vector<int> all(s.p);
    std::iota(all.begin(), all.end(), 0);
    s.groups = {all};
    return s;
  }

  /// Restrict the named coefficients to be equal across all regimes.
  void hold_constant(int coef) {
    for (int j = 1; j <= breaks; ++j)
      restrictions.push_back(LinearRestriction::equal({0, coef}, {j, coef}));
  }
};

// ---------------------------------------------------------------------------
// Segmentations

/// Per-group break dates. Date k is the last observation of its regime, so
/// regime j covers k_{j-1}+1 .. k_j with k_0 = 0 and k_{m+1} = T.
class Segmentation {
 public:
  Segmentation() = default;
  explicit Segmentation(std::vector<std::vector<int>> dates) : dates_(std::move(dates)) {
    for (const auto& d : dates_)
      if (d.size() != dates_.front().size())
        throw Error("segmentation: groups have different numbers of breaks");
  }

  static Segmentation common(int groups, const std::vector<int>& dates) {
    return Segmentation(std::vector<std::vector<int>>(static_cast<std::size_t>(groups), dates));
  }

  int groups() const { return static_cast<int>(dates_.size()); }
  int breaks() const { return dates_.empty() ? 0 : static_cast<int>(dates_.front().size()); }
  const std::vector<int>& dates(int g) const { return dates_[static_cast<std::size_t>(g)]; }
  int date(int g, int j) const { return dates_[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)]; }
  const std::vector<std::vector<int>>& all() const { return dates_; }

  bool is_common() const {
    return std::all_of(dates_.begin(), dates_.end(), [&](const auto& d) { return d == dates_.front(); });
  }

  std::string str() const {
    std::ostringstream os;
    os << "{";
    for (std::size_t g = 0; g < dates_.size(); ++g) {
      os << (g ? ", " : "") << "(";
      for (std::size_t j = 0; j < dates_[g].size(); ++j) os << (j ? "," : "") << dates_[g][j];
      os << ")";
    }
    os << "}";
    return os.str();
  }

  auto operator<=>(const Segmentation&) const = default;
  friend std::ostream& operator<<(std::ostream& os, const Segmentation& s) { return os << s.str(); }

 private:
  std::vector<std::vector<int>> dates_;
};

/// Coefficients and covariance matrices of the m+1 regimes.
struct ParamSet {
  std::vector<Eigen::VectorXd> beta;   ///< m+1 vectors of length p
  std::vector<Eigen::MatrixXd> sigma;  ///< m+1 SPD n x n matrices

  /// beta_{gj}: regime-j coefficients restricted to group g (others zero).
  Eigen::VectorXd group_slice(const SystemSpec& spec, int g, int j) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(spec.p);
    for (int l : spec.groups[static_cast<std::size_t>(g)]) out(l) = beta[static_cast<std::size_t>(j)](l);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Regime map

struct RegimePiece {
  int first = 1;  ///< first observation (1-based, inclusive)
  int last = 0;   ///< last observation (inclusive)
  std::vector<int> group_regime;  ///< 0-based active regime per group
  int sigma_regime = 0;
  int length() const { return last - first + 1; }
};

struct RegimeMap {
  std::vector<RegimePiece> pieces;
};

/// Throws InvalidSegmentation naming the first offending (group, regime),
/// both 1-based in the message.
inline void check_spacing(const Segmentation& seg, int T, int min_spacing) {
  for (int g = 0; g < seg.groups(); ++g) {
    int prev = 0;
    const int m = seg.breaks();
    for (int j = 0; j <= m; ++j) {
      const int k = j < m ? seg.date(g, j) : T;
      if (k - prev < min_spacing) {
        std::ostringstream os;
        os << "invalid segmentation: group " << g + 1 << " regime " << j + 1 << " spans " << k - prev
           << " observations (" << prev + 1 << ".." << k << "), minimum is " << min_spacing;
        throw InvalidSegmentation(g, j, os.str());
      }
      prev = k;
    }
  }
}

/// Refine [1, T] into maximal intervals on which every group's regime is
/// constant. The covariance regime follows the last group.
inline RegimeMap build_regime_map(const SystemSpec& spec, const Segmentation& seg, int T) {
  if (seg.groups() != spec.G()) throw Error("regime map: segmentation has wrong number of groups");
  check_spacing(seg, T, spec.min_spacing(T));
  std::vector<int> cuts;
  for (const auto& d : seg.all()) cuts.insert(cuts.end(), d.begin(), d.end());
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  cuts.push_back(T);

  RegimeMap map;
  int first = 1;
  for (int cut : cuts) {
    RegimePiece piece;
    piece.first = first;
    piece.last = cut;
    piece.group_regime.resize(static_cast<std::size_t>(seg.groups()));
    for (int g = 0; g < seg.groups(); ++g) {
      const auto& d = seg.dates(g);
      piece.group_regime[static_cast<std::size_t>(g)] =
          static_cast<int>(std::count_if(d.begin(), d.end(), [&](int k) { return k < first; }));
    }
    piece.sigma_regime = piece.group_regime.back();
    map.pieces.push_back(std::move(piece));
    first = cut + 1;
  }
  return map;
}

// ---------------------------------------------------------------------------
// Validation

struct Diagnostic {
  std::string field;
  std::string message;
};

inline std::vector<Diagnostic> validate(const SystemSpec& spec, const RegressorPanel& panel,
                                        const Segmentation* seg = nullptr) {
  std::vector<Diagnostic> out;
  auto add = [&](std::string f, std::string m) { out.push_back({std::move(f), std::move(m)}); };

  if (spec.n != panel.n()) add("n", "spec has n=" + std::to_string(spec.n) + " but data has " + std::to_string(panel.n()) + " equations");
  if (spec.q != panel.q()) add("q", "spec has q=" + std::to_string(spec.q) + " but data has " + std::to_string(panel.q()) + " regressors");
  if (spec.S.rows() != static_cast<Eigen::Index>(spec.n) * spec.q || spec.S.cols() != spec.p) {
    add("S", "selection matrix must be " + std::to_string(spec.n * spec.q) + "x" + std::to_string(spec.p));
  } else if (spec.p > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(spec.S);
    const auto rank = static_cast<int>(qr.rank());
    if (rank < spec.p)
      add("S", "selection matrix rank " + std::to_string(rank) + " < p = " + std::to_string(spec.p));
  }
  if (static_cast<int>(spec.coef_names.size()) != spec.p && !spec.coef_names.empty())
    add("coef_names", "expected " + std::to_string(spec.p) + " coefficient names");

  if (spec.groups.empty()) add("groups", "at least one parameter group is required");
  std::vector<int> owner(static_cast<std::size_t>(std::max(spec.p, 0)), -1);
  for (int g = 0; g < spec.G(); ++g) {
    for (int l : spec.groups[static_cast<std::size_t>(g)]) {
      if (l < 0 || l >= spec.p) {
        add("groups", "group " + std::to_string(g + 1) + " references coefficient " + std::to_string(l + 1) + " outside 1.." + std::to_string(spec.p));
        continue;
      }
      if (owner[static_cast<std::size_t>(l)] >= 0)
        add("groups", "coefficient " + std::to_string(l + 1) + " belongs to groups " + std::to_string(owner[static_cast<std::size_t>(l)] + 1) + " and " + std::to_string(g + 1));
      else
        owner[static_cast<std::size_t>(l)] = g;
    }
  }
  for (int l = 0; l < spec.p; ++l)
    if (owner[static_cast<std::size_t>(l)] < 0) add("groups", "coefficient " + std::to_string(l + 1) + " is in no group");
  for (int g = 0; g + 1 < spec.G(); ++g)
    if (spec.groups[static_cast<std::size_t>(g)].empty()) add("groups", "only the last group may be empty (group " + std::to_string(g + 1) + ")");

  if (spec.breaks < 0) add("breaks", "number of breaks must be non-negative");
  const double trim_max = 1.0 / (2.0 * (spec.breaks + 1));
  if (!(spec.trim > 0.0 && spec.trim < trim_max))
    add("trim", "trim must lie in (0, " + std::to_string(trim_max) + ")");

  const int dim = spec.p * (spec.breaks + 1);
  if (!spec.restrictions.empty() && spec.breaks >= 0) {
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.restrictions.size()), dim);
    bool ok = true;
    for (std::size_t r = 0; r < spec.restrictions.size(); ++r) {
      for (const auto& [ref, w] : spec.restrictions[r].terms) {
        if (ref.regime < 0 || ref.regime > spec.breaks || ref.coef < 0 || ref.coef >= spec.p) {
          add("restrictions", "restriction " + std::to_string(r + 1) + " references a coefficient or regime out of range");
          ok = false;
        } else {
          R(static_cast<Eigen::Index>(r), ref.regime * spec.p + ref.coef) += w;
        }
      }
    }
    if (ok) {
      Eigen::FullPivLU<Eigen::MatrixXd> lu(R);
      if (lu.rank() < R.rows())
        add("restrictions", "restriction rows are linearly dependent (rank " + std::to_string(lu.rank()) + " < " + std::to_string(R.rows()) + ")");
    }
  }

  const int T = panel.T();
  if (!panel.y().allFinite()) add("y", "dependent variables contain missing or non-finite values");
  if (!panel.design().allFinite()) add("x", "regressors contain missing or non-finite values");
  for (const auto& r : panel.regressors()) {
    if (r.kind != RegressorKind::Trend) continue;
    for (int t = 1; t <= T; ++t) {
      if (std::abs(r.values(t - 1) - std::pow(static_cast<double>(t) / T, r.power)) > 1e-12) {
        add("x", "trend column '" + r.name + "' differs from (t/T)^" + std::to_string(r.power));
        break;
      }
    }
  }
  if (panel.constant_column() < 0) add("x", "stationary regressors must include a constant column");
  if (spec.trim > 0 && spec.breaks >= 0) {
    const int h = spec.min_spacing(T);
    if (T < 2 * h * (spec.breaks + 1))
      add("T", "T = " + std::to_string(T) + " is below 2*ceil(T*trim)*(m+1) = " + std::to_string(2 * h * (spec.breaks + 1)));
  }

  if (seg != nullptr) {
    if (seg->groups() != spec.G()) {
      add("segmentation", "segmentation has " + std::to_string(seg->groups()) + " groups, spec has " + std::to_string(spec.G()));
    } else if (seg->breaks() != spec.breaks) {
      add("segmentation", "segmentation has " + std::to_string(seg->breaks()) + " breaks, spec has " + std::to_string(spec.breaks));
    } else {
      const int h = spec.min_spacing(T);
      for (int g = 0; g < seg->groups(); ++g) {
        int prev = 0;
        for (int j = 0; j <= seg->breaks(); ++j) {
          const int k = j < seg->breaks() ? seg->date(g, j) : T;
          if (k - prev < h)
            add("segmentation", "group " + std::to_string(g + 1) + " regime " + std::to_string(j + 1) + ": spacing " + std::to_string(k - prev) + " < " + std::to_string(h));
          prev = k;
        }
      }
    }
  }
  return out;
}

inline std::string format_diagnostics(const std::vector<Diagnostic>& d) {
  std::ostringstream os;
  for (const auto& x : d) os << "  [" << x.field << "] " << x.message << "\n";
  return os.str();
}

}  // namespace multibreak
