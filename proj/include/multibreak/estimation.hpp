#pragma once

// Maximization over segmentations: common breaks, groupwise breaks, and the
// common-breaks likelihood ratio statistic.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <mutex>
#include <string>
#include <vector>

#include "core.hpp"
#include "likelihood.hpp"
#include "random.hpp"

namespace multibreak {

struct SearchOptions {
  double budget = 1e7;  ///< max candidate segmentations for exhaustive search
  int max_cycles = 20;
  int multistart = 0;  ///< extra random starts for coordinate descent
  std::uint64_t seed = 20240101;
  unsigned threads = 1;
  FitOptions fit;
};

struct SearchResult {
  FitResult fit;
  long long candidates = 0;  ///< segmentations evaluated
  long long failures = 0;    ///< candidates skipped as numerically degenerate
  int cycles = 0;
  std::string method;
};

struct TestOutcome {
  double statistic = 0.0;  ///< CB_T
  SearchResult restricted;
  SearchResult unrestricted;
  std::vector<int> subset;  ///< groups constrained to common dates (all for the full test)
};

namespace detail {

/// Compare two candidates: larger value wins; exact ties go to the smaller
/// flattened break tuple.
inline bool better(double v, const Segmentation& s, double best_v, const Segmentation* best_s) {
  if (best_s == nullptr) return true;
  if (v != best_v) return v > best_v;
  return s < *best_s;
}

/// Number of admissible m-tuples of dates in 1..T-1 with regime length >= h.
inline double count_tuples(int T, int m, int h) {
  if (m == 0) return T >= h ? 1.0 : 0.0;
  // ways[t] = number of (j)-tuples whose last date is t
  std::vector<double> ways(static_cast<std::size_t>(T) + 1, 0.0);
  for (int t = h; t <= T; ++t) ways[static_cast<std::size_t>(t)] = 1.0;
  for (int j = 2; j <= m; ++j) {
    std::vector<double> next(static_cast<std::size_t>(T) + 1, 0.0);
    double run = 0.0;
    for (int t = 0; t <= T; ++t) {
      if (t - h >= 0) run += ways[static_cast<std::size_t>(t - h)];
      next[static_cast<std::size_t>(t)] = run;
    }
    ways = std::move(next);
  }
  double total = 0.0;
  for (int t = 0; t + h <= T; ++t) total += ways[static_cast<std::size_t>(t)];
  return total;
}

inline void enumerate_tuples(int T, int m, int h, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  const int j = static_cast<int>(cur.size());
  if (j == m) {
    out.push_back(cur);
    return;
  }
  const int lo = (j == 0 ? 0 : cur.back()) + h;
  const int hi = T - (m - j) * h;
  for (int k = lo; k <= hi; ++k) {
    cur.push_back(k);
    enumerate_tuples(T, m, h, cur, out);
    cur.pop_back();
  }
}

inline std::vector<std::vector<int>> admissible_tuples(int T, int m, int h) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  enumerate_tuples(T, m, h, cur, out);
  return out;
}

/// Optimal m break dates given per-observation values ell(t-1, j) of being
/// in regime j at t; regimes need at least h observations.
inline std::vector<int> dp_pointwise(const Eigen::MatrixXd& ell, int m, int h) {
  const auto T = static_cast<int>(ell.rows());
  if (m == 0) return {};
  Eigen::MatrixXd cum = Eigen::MatrixXd::Zero(T + 1, m + 1);
  for (int t = 1; t <= T; ++t) cum.row(t) = cum.row(t - 1) + ell.row(t - 1);
  const double ninf = -std::numeric_limits<double>::infinity();
  // f(j, b): best value with regimes 0..j covering 1..b, regime j ending at b
  Eigen::MatrixXd f = Eigen::MatrixXd::Constant(m + 1, T + 1, ninf);
  Eigen::MatrixXi arg = Eigen::MatrixXi::Constant(m + 1, T + 1, -1);
  for (int b = h; b <= T; ++b) f(0, b) = cum(b, 0);
  for (int j = 1; j <= m; ++j) {
    for (int b = (j + 1) * h; b <= T; ++b) {
      for (int k = j * h; k + h <= b; ++k) {
        if (f(j - 1, k) == ninf) continue;
        const double v = f(j - 1, k) + cum(b, j) - cum(k, j);
        if (v > f(j, b)) {
          f(j, b) = v;
          arg(j, b) = k;
        }
      }
    }
  }
  std::vector<int> dates(static_cast<std::size_t>(m));
  int b = T;
  for (int j = m; j >= 1; --j) {
    b = arg(j, b);
    if (b < 0) throw Error("dp: no admissible segmentation");
    dates[static_cast<std::size_t>(j - 1)] = b;
  }
  return dates;
}

/// Dynamic programme over segment values cost(a, b).
template <class Cost>
std::pair<std::vector<int>, long long> dp_segments(int T, int m, int h, Cost&& cost, unsigned threads) {
  const double ninf = -std::numeric_limits<double>::infinity();
  // seg(a, b) for b - a + 1 >= h; store dense (T+1)^2, fine for T in the hundreds
  std::vector<double> seg(static_cast<std::size_t>(T + 1) * static_cast<std::size_t>(T + 1), ninf);
  auto at = [&](int a, int b) -> double& {
    return seg[static_cast<std::size_t>(a) * static_cast<std::size_t>(T + 1) + static_cast<std::size_t>(b)];
  };
  std::vector<std::pair<int, int>> jobs;
  for (int a = 1; a <= T; ++a)
    for (int b = a + h - 1; b <= T; ++b) {
      // first regime starts at 1, last ends at T; interior ones need room on both sides
      const int before = a - 1, after = T - b;
      if (before != 0 && before < h) continue;
      if (after != 0 && after < h) continue;
      jobs.emplace_back(a, b);
    }
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const auto [a, b] = jobs[i];
    try {
      at(a, b) = cost(a, b);
    } catch (const NumericalError&) {
      at(a, b) = ninf;
    }
  });
  if (m == 0) return {{}, static_cast<long long>(jobs.size())};
  Eigen::MatrixXd f = Eigen::MatrixXd::Constant(m + 1, T + 1, ninf);
  Eigen::MatrixXi arg = Eigen::MatrixXi::Constant(m + 1, T + 1, -1);
  for (int b = h; b <= T; ++b) f(0, b) = at(1, b);
  for (int j = 1; j <= m; ++j)
    for (int b = (j + 1) * h; b <= T; ++b)
      for (int k = j * h; k + h <= b; ++k) {
        if (f(j - 1, k) == ninf || at(k + 1, b) == ninf) continue;
        const double v = f(j - 1, k) + at(k + 1, b);
        if (v > f(j, b)) {
          f(j, b) = v;
          arg(j, b) = k;
        }
      }
  if (f(m, T) == ninf) throw NumericalError("no admissible segmentation could be fitted");
  std::vector<int> dates(static_cast<std::size_t>(m));
  int b = T;
  for (int j = m; j >= 1; --j) {
    b = arg(j, b);
    dates[static_cast<std::size_t>(j - 1)] = b;
  }
  return {dates, static_cast<long long>(jobs.size())};
}

inline Segmentation from_blocks(int G, const std::vector<std::vector<int>>& blocks,
                                const std::vector<const std::vector<int>*>& block_dates) {
  std::vector<std::vector<int>> d(static_cast<std::size_t>(G));
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (int g : blocks[b]) d[static_cast<std::size_t>(g)] = *block_dates[b];
  return Segmentation(std::move(d));
}

}  // namespace detail

/// Groups tied to common dates, as a partition of {0..G-1}.
using BlockPartition = std::vector<std::vector<int>>;

inline BlockPartition all_common(int G) {
  std::vector<int> all(static_cast<std::size_t>(G));
  std::iota(all.begin(), all.end(), 0);
  return {all};
}

inline BlockPartition all_separate(int G) {
  BlockPartition b;
  for (int g = 0; g < G; ++g) b.push_back({g});
  return b;
}

/// Groups in `subset` share dates; every other group is free.
inline BlockPartition partial_common(int G, const std::vector<int>& subset) {
  BlockPartition b{subset};
  for (int g = 0; g < G; ++g)
    if (std::find(subset.begin(), subset.end(), g) == subset.end()) b.push_back({g});
  return b;
}

/// Maximize the quasi-likelihood over segmentations whose dates are common
/// within each block. `init` seeds coordinate descent (required then).
inline SearchResult estimate_blocks(const Model& model, const BlockPartition& blocks, const SearchOptions& opt,
                                    const Segmentation* init = nullptr) {
  const SystemSpec& spec = model.spec();
  const int T = model.T(), m = spec.breaks, h = spec.min_spacing(T), G = spec.G();
  SearchResult out;

  if (m == 0) {
    out.fit = model.fit(Segmentation(std::vector<std::vector<int>>(static_cast<std::size_t>(G))), opt.fit);
    out.candidates = 1;
    out.method = "no-break";
    return out;
  }

  const bool one_block = blocks.size() == 1;
  if (one_block && spec.pure_change() && spec.estimator == Estimator::QuasiML) {
    auto [dates, n] = detail::dp_segments(
        T, m, h, [&](int a, int b) { return model.segment_loglik(a, b, opt.fit); }, opt.threads);
    out.fit = model.fit(Segmentation::common(G, dates), opt.fit);
    out.candidates = n;
    out.method = "dynamic-programming";
    return out;
  }

  double total = 1.0;
  const double per_block = detail::count_tuples(T, m, h);
  for (std::size_t b = 0; b < blocks.size(); ++b) total *= per_block;
  if (total < 1.0) throw Error("no admissible segmentation: T too small for the trimming");

  if (total <= opt.budget) {
    const auto tuples = detail::admissible_tuples(T, m, h);
    const auto B = blocks.size();
    const auto count = static_cast<std::size_t>(total);
    const unsigned workers = std::max(1u, std::min<unsigned>(resolve_threads(opt.threads), static_cast<unsigned>(count)));
    struct Local {
      double v = -std::numeric_limits<double>::infinity();
      std::optional<FitResult> fit;
      long long failures = 0;
    };
    std::vector<Local> locals(workers);
    parallel_for(workers, workers, [&](std::size_t w) {
      Local& loc = locals[w];
      std::vector<const std::vector<int>*> pick(B);
      for (std::size_t idx = w; idx < count; idx += workers) {
        std::size_t r = idx;
        for (std::size_t b = B; b-- > 0;) {
          pick[b] = &tuples[r % tuples.size()];
          r /= tuples.size();
        }
        const Segmentation seg = detail::from_blocks(G, blocks, pick);
        try {
          FitResult f = model.fit(seg, opt.fit);
          if (detail::better(f.loglik, seg, loc.v, loc.fit ? &loc.fit->segmentation : nullptr)) {
            loc.v = f.loglik;
            loc.fit = std::move(f);
          }
        } catch (const NumericalError&) {
          ++loc.failures;
        }
      }
    });
    const Local* best = nullptr;
    for (const auto& loc : locals) {
      out.failures += loc.failures;
      if (loc.fit && (best == nullptr || detail::better(loc.v, loc.fit->segmentation, best->v, &best->fit->segmentation)))
        best = &loc;
    }
    if (best == nullptr) throw NumericalError("no admissible segmentation could be fitted");
    out.fit = *best->fit;
    out.candidates = static_cast<long long>(count);
    out.method = "exhaustive";
    return out;
  }

  // Alternation: break dates by dynamic programming on per-observation
  // densities with parameters fixed, then refit, keeping the best seen.
  auto descend = [&](Segmentation start, SearchResult& res) {
    FitResult best = model.fit(start, opt.fit);
    ++res.candidates;
    for (int cycle = 0; cycle < opt.max_cycles; ++cycle) {
      ++res.cycles;
      bool changed = false;
      for (const auto& block : blocks) {
        const Segmentation& cur = best.segmentation;
        const Eigen::MatrixXd ell = model.pointwise_loglik(best.params, block, &cur);
        const std::vector<int> dates = detail::dp_pointwise(ell, m, h);
        auto d = cur.all();
        for (int g : block) d[static_cast<std::size_t>(g)] = dates;
        Segmentation cand(std::move(d));
        if (cand == cur) continue;
        try {
          FitResult f = model.fit(cand, opt.fit);
          ++res.candidates;
          if (detail::better(f.loglik, cand, best.loglik, &best.segmentation) && f.loglik > best.loglik) {
            best = std::move(f);
            changed = true;
          }
        } catch (const NumericalError&) {
          ++res.failures;
        }
      }
      if (!changed) break;
    }
    return best;
  };

  Segmentation start;
  if (init != nullptr) {
    start = *init;
  } else {
    // initial common dates from the pure structural change problem
    SystemSpec free_spec = spec;
    free_spec.restrictions.clear();
    free_spec.sigma_constant = false;
    free_spec.estimator = Estimator::QuasiML;
    const Model free_model(model.panel(), free_spec);
    auto [dates, n] = detail::dp_segments(
        T, m, h, [&](int a, int b) { return free_model.segment_loglik(a, b, opt.fit); }, opt.threads);
    out.candidates += n;
    start = Segmentation::common(G, dates);
  }
  out.method = one_block ? "alternation" : "coordinate-descent";
  out.fit = descend(start, out);

  Stream rng(opt.seed, 0, tags::tag(tags::multistart));
  for (int s = 0; s < opt.multistart; ++s) {
    const auto tuples = detail::admissible_tuples(T, m, h);
    std::vector<const std::vector<int>*> pick;
    for (std::size_t b = 0; b < blocks.size(); ++b)
      pick.push_back(&tuples[std::min(tuples.size() - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(tuples.size())))]);
    try {
      FitResult f = descend(detail::from_blocks(G, blocks, pick), out);
      if (detail::better(f.loglik, f.segmentation, out.fit.loglik, &out.fit.segmentation)) out.fit = std::move(f);
    } catch (const NumericalError&) {
      ++out.failures;
    }
  }
  return out;
}

/// Restricted estimator: all groups share the same break dates.
inline SearchResult estimate_common(const Model& model, const SearchOptions& opt = {}) {
  return estimate_blocks(model, all_common(model.spec().G()), opt);
}

/// Unrestricted estimator: each group has its own dates. Coordinate descent
/// starts from `init` (the restricted optimum when called via cb_statistic).
inline SearchResult estimate_groupwise(const Model& model, const SearchOptions& opt = {},
                                       const Segmentation* init = nullptr) {
  const int G = model.spec().G();
  if (G == 1) return estimate_common(model, opt);
  if (init == nullptr) {
    const SearchResult common = estimate_common(model, opt);
    return estimate_blocks(model, all_separate(G), opt, &common.fit.segmentation);
  }
  return estimate_blocks(model, all_separate(G), opt, init);
}

/// CB_T for H0: the groups in `subset` share break dates (all groups if empty).
inline TestOutcome cb_statistic_partial(const Model& model, std::vector<int> subset, const SearchOptions& opt = {}) {
  const int G = model.spec().G();
  if (subset.empty()) {
    subset.resize(static_cast<std::size_t>(G));
    std::iota(subset.begin(), subset.end(), 0);
  }
  std::sort(subset.begin(), subset.end());
  subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
  if (subset.size() < 2 && G > 1) throw ConfigError("partial test needs at least two groups in the subset");
  for (int g : subset)
    if (g < 0 || g >= G) throw ConfigError("partial test: group index " + std::to_string(g + 1) + " out of range");

  TestOutcome out;
  out.subset = subset;
  if (G == 1) {
    out.restricted = estimate_common(model, opt);
    out.unrestricted = out.restricted;
    out.statistic = 0.0;
    return out;
  }
  const SearchResult common = estimate_common(model, opt);
  if (static_cast<int>(subset.size()) == G) {
    out.restricted = common;
  } else {
    out.restricted = estimate_blocks(model, partial_common(G, subset), opt, &common.fit.segmentation);
    if (common.fit.loglik > out.restricted.fit.loglik) {
      // the common optimum lies in the partial space too
      const long long n = out.restricted.candidates;
      out.restricted = common;
      out.restricted.candidates += n;
    }
  }
  out.unrestricted = estimate_blocks(model, all_separate(G), opt, &out.restricted.fit.segmentation);
  if (out.unrestricted.fit.loglik < out.restricted.fit.loglik) {
    const long long n = out.unrestricted.candidates;
    out.unrestricted = out.restricted;
    out.unrestricted.candidates = n;
  }
  out.statistic = 2.0 * (out.unrestricted.fit.loglik - out.restricted.fit.loglik);
  return out;
}

inline TestOutcome cb_statistic(const Model& model, const SearchOptions& opt = {}) {
  return cb_statistic_partial(model, {}, opt);
}

}  // namespace multibreak
