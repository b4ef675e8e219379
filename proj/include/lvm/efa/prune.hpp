#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/correlation.hpp"
#include "lvm/efa/parallel.hpp"
#include "lvm/efa/solution.hpp"
#include "lvm/ingest.hpp"
#include "lvm/reliability.hpp"

namespace lvm::efa {

struct PruneCriteria {
  double min_communality = 0.40;
  double min_loading = 0.32;
  double cross_loading_threshold = 0.32;
  double min_alpha = 0.70;
  int min_items_per_factor = 3;

  void validate() const {
    for (double v : {min_communality, min_loading, cross_loading_threshold, min_alpha})
      if (!(v > 0.0 && v < 1.0)) throw ConfigError("prune thresholds must lie in (0, 1)");
    if (min_items_per_factor < 2) throw ConfigError("min_items_per_factor must be at least 2");
  }
};

struct PruneOptions {
  PruneCriteria criteria;
  ParallelOptions parallel;
  EfaOptions efa;
  std::optional<int> pinned_factors;
  int max_iterations = 100;
  CronbachOptions alpha{0, 1, 1};
};

struct BracketFit {
  int m = 0;
  double rmsea = kNaN;
  double tli = kNaN;
  double bic = kNaN;
  bool converged = false;
  bool admissible = false;
};

struct Removal {
  std::string variable;
  std::string rule;  // low_communality | low_loading | cross_loading | factor_alpha | factor_items
  double value = kNaN;
  std::string factor;
};

struct PruneStep {
  int iteration = 0;
  int stage = 1;
  std::vector<std::string> variables;
  int suggested = 0;
  std::vector<BracketFit> brackets;
  int chosen = 0;
  std::vector<Removal> removals;
  std::vector<std::pair<std::string, double>> factor_alpha;
};

struct PruneResult {
  std::vector<PruneStep> steps;
  EfaSolution solution;
  ParallelAnalysis parallel;
  std::vector<std::string> variables;
  std::vector<std::vector<std::string>> factor_items;  // primary items per factor
  bool cycle = false;
  bool exhausted = false;
};

/// Index of the largest-magnitude loading in each row.
inline std::vector<int> primary_factor(const Matrix& pattern) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < pattern.rows(); ++i) {
    Eigen::Index j = 0;
    pattern.row(i).cwiseAbs().maxCoeff(&j);
    out.push_back(static_cast<int>(j));
  }
  return out;
}

/// Every factor is the primary factor of at least one salient item and no
/// uniqueness sits on its bound.
inline bool admissible(const EfaSolution& s, double min_loading) {
  if (!s.heywood.empty()) return false;
  std::vector<bool> has(static_cast<std::size_t>(s.n_factors()), false);
  const auto prim = primary_factor(s.pattern);
  for (std::size_t i = 0; i < prim.size(); ++i)
    if (std::abs(s.pattern(static_cast<Eigen::Index>(i), prim[i])) > min_loading)
      has[static_cast<std::size_t>(prim[i])] = true;
  return std::all_of(has.begin(), has.end(), [](bool b) { return b; });
}

/// Item-level rule violations of a solution, one entry per offending item
/// (first rule that fires, in the order communality, loading, cross-loading).
inline std::vector<Removal> item_violations(const EfaSolution& s, const PruneCriteria& c) {
  std::vector<Removal> out;
  for (Eigen::Index i = 0; i < s.pattern.rows(); ++i) {
    const auto& name = s.variables[static_cast<std::size_t>(i)];
    const double maxabs = s.pattern.row(i).cwiseAbs().maxCoeff();
    const auto salient = (s.pattern.row(i).array().abs() > c.cross_loading_threshold).count();
    if (s.h2(i) <= c.min_communality)
      out.push_back({name, "low_communality", s.h2(i), {}});
    else if (maxabs <= c.min_loading)
      out.push_back({name, "low_loading", maxabs, {}});
    else if (salient >= 2)
      out.push_back({name, "cross_loading", static_cast<double>(salient), {}});
  }
  return out;
}

inline std::vector<std::vector<std::string>> items_by_factor(const EfaSolution& s) {
  std::vector<std::vector<std::string>> out(static_cast<std::size_t>(s.n_factors()));
  const auto prim = primary_factor(s.pattern);
  for (std::size_t i = 0; i < prim.size(); ++i) out[static_cast<std::size_t>(prim[i])].push_back(s.variables[i]);
  return out;
}

/// Fit the bracket {k-1, k, k+1} (or the pinned count) and pick the
/// admissible solution with the lowest RMSEA.
inline EfaSolution choose_solution(const CorrelationEstimate& R, Eigen::Index n, int suggested,
                                   const PruneOptions& opt, std::vector<BracketFit>& brackets) {
  const int p = R.size();
  std::vector<int> ms;
  if (opt.pinned_factors) {
    ms.push_back(*opt.pinned_factors);
  } else {
    const int k = std::max(1, suggested);
    for (int m : {k - 1, k, k + 1})
      if (m >= 1 && ((p - m) * (p - m) - (p + m)) > 0) ms.push_back(m);
    if (ms.empty()) ms.push_back(1);
  }
  std::vector<EfaSolution> sols;
  for (int m : ms) {
    auto s = fit_efa(R, m, n, opt.efa);
    BracketFit b;
    b.m = m;
    b.rmsea = s.fit.rmsea.estimate;
    b.tli = s.fit.tli;
    b.bic = s.fit.bic;
    b.converged = s.converged;
    b.admissible = s.converged && admissible(s, opt.criteria.min_loading);
    brackets.push_back(b);
    sols.push_back(std::move(s));
  }
  auto pick = [&](bool need_admissible) -> int {
    int best = -1;
    for (std::size_t i = 0; i < sols.size(); ++i) {
      if (need_admissible && !brackets[i].admissible) continue;
      const double r = std::isnan(brackets[i].rmsea) ? kInf : brackets[i].rmsea;
      const double rb = best < 0 ? kInf : (std::isnan(brackets[static_cast<std::size_t>(best)].rmsea)
                                               ? kInf
                                               : brackets[static_cast<std::size_t>(best)].rmsea);
      if (best < 0 || r < rb - 1e-12) best = static_cast<int>(i);
    }
    return best;
  };
  int idx = pick(true);
  if (idx < 0) idx = pick(false);
  return std::move(sols[static_cast<std::size_t>(idx)]);
}

/// Iterative item pruning. Stage 1 removes items violating the communality,
/// loading or cross-loading rules; when none fire, stage 2 removes the items
/// of factors with too few items or too low alpha, after which stage 1
/// resumes. Stops when neither stage removes anything.
inline PruneResult prune_items(const NumericMatrix& X, const CorrelationFn& correlate_fn,
                               const PruneOptions& opt = {}) {
  opt.criteria.validate();
  if (X.n_cols() < 3) throw ConfigError("pruning needs at least three variables");
  const auto R_all = correlate_fn(X);
  PruneResult res;
  std::vector<std::string> vars = X.columns;
  std::set<std::vector<std::string>> seen;

  for (int it = 1; it <= opt.max_iterations; ++it) {
    {
      auto key = vars;
      std::sort(key.begin(), key.end());
      if (!seen.insert(key).second) {
        res.cycle = true;
        break;
      }
    }
    if (vars.size() < 3) {
      res.exhausted = true;
      break;
    }
    PruneStep step;
    step.iteration = it;
    step.variables = vars;
    const auto R = R_all.select(vars);
    const auto Xs = X.select(vars);
    ParallelOptions po = opt.parallel;
    po.seed = derive_seed(opt.parallel.seed, static_cast<std::uint64_t>(it));
    res.parallel = parallel_analysis(Xs, R, po);
    step.suggested = res.parallel.suggested;
    res.solution = choose_solution(R, X.n_rows(), step.suggested, opt, step.brackets);
    step.chosen = res.solution.n_factors();

    step.removals = item_violations(res.solution, opt.criteria);
    if (step.removals.empty()) {
      step.stage = 2;
      const auto groups = items_by_factor(res.solution);
      for (std::size_t f = 0; f < groups.size(); ++f) {
        const auto& items = groups[f];
        const std::string label = res.solution.factors[f];
        double a = kNaN;
        if (items.size() >= 2) a = cronbach(X.select(items), opt.alpha).raw_alpha;
        step.factor_alpha.emplace_back(label, a);
        const bool few = static_cast<int>(items.size()) < opt.criteria.min_items_per_factor;
        const bool weak = !(a > opt.criteria.min_alpha);
        if (few || weak)
          for (const auto& v : items)
            step.removals.push_back({v, few ? "factor_items" : "factor_alpha",
                                     few ? static_cast<double>(items.size()) : a, label});
      }
    }
    const bool done = step.removals.empty();
    std::set<std::string> drop;
    for (const auto& r : step.removals) drop.insert(r.variable);
    res.steps.push_back(std::move(step));
    if (done) break;
    std::vector<std::string> next;
    for (const auto& v : vars)
      if (!drop.count(v)) next.push_back(v);
    vars = std::move(next);
  }
  res.variables = res.solution.variables;
  res.factor_items = items_by_factor(res.solution);
  return res;
}

}  // namespace lvm::efa
