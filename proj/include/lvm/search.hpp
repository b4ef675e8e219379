#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/ingest.hpp"
#include "lvm/sem/estimate.hpp"
#include "lvm/sem/model.hpp"

namespace lvm::search {

struct StructuralSkeleton {
  std::vector<std::string> nodes;
  std::vector<std::pair<int, int>> directed;     // (from, to)
  std::vector<std::pair<int, int>> covariances;  // (a, b) with a < b
  std::string canonical_key;

  std::size_t n_edges() const { return directed.size() + covariances.size(); }
};

enum class EnumerationRule { all_pairs, exogenous_covariances_only };

inline std::string to_string(EnumerationRule r) {
  return r == EnumerationRule::all_pairs ? "all_pairs" : "exogenous_covariances_only";
}

inline EnumerationRule enumeration_rule_from_string(const std::string& s) {
  if (s == "all_pairs" || s == "default") return EnumerationRule::all_pairs;
  if (s == "exogenous_covariances_only") return EnumerationRule::exogenous_covariances_only;
  throw ConfigError("unknown enumeration rule '" + s + "'");
}

/// Order-independent key over node names: sorted "A->B" and "A~~B" tokens.
inline std::string canonical_key(const StructuralSkeleton& s) {
  std::vector<std::string> tokens;
  for (auto [f, t] : s.directed) tokens.push_back(s.nodes[static_cast<std::size_t>(f)] + "->" + s.nodes[static_cast<std::size_t>(t)]);
  for (auto [a, b] : s.covariances) {
    auto x = s.nodes[static_cast<std::size_t>(a)], y = s.nodes[static_cast<std::size_t>(b)];
    if (y < x) std::swap(x, y);
    tokens.push_back(x + "~~" + y);
  }
  std::sort(tokens.begin(), tokens.end());
  std::string key;
  for (const auto& t : tokens) key += (key.empty() ? "" : ";") + t;
  return key.empty() ? "(empty)" : key;
}

inline bool is_acyclic(int n, const std::vector<std::pair<int, int>>& directed) {
  std::vector<int> state(static_cast<std::size_t>(n), 0);  // 0 new, 1 on stack, 2 done
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (auto [f, t] : directed) adj[static_cast<std::size_t>(f)].push_back(t);
  auto dfs = [&](auto&& self, int v) -> bool {
    state[static_cast<std::size_t>(v)] = 1;
    for (int w : adj[static_cast<std::size_t>(v)]) {
      if (state[static_cast<std::size_t>(w)] == 1) return false;
      if (state[static_cast<std::size_t>(w)] == 0 && !self(self, w)) return false;
    }
    state[static_cast<std::size_t>(v)] = 2;
    return true;
  };
  for (int v = 0; v < n; ++v)
    if (state[static_cast<std::size_t>(v)] == 0 && !dfs(dfs, v)) return false;
  return true;
}

/// Every assignment of {absent, covariance, A->B, B->A} to each unordered
/// factor pair, minus cyclic ones and duplicates. The exogenous variant
/// also drops covariances touching a node with an incoming path.
inline std::vector<StructuralSkeleton> enumerate_structures(const std::vector<std::string>& factors,
                                                            EnumerationRule rule = EnumerationRule::all_pairs) {
  const int n = static_cast<int>(factors.size());
  if (n < 1 || n > 6) throw ConfigError("enumeration supports 1 to 6 factors");
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) pairs.emplace_back(a, b);
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < pairs.size(); ++i) total *= 4;
  std::vector<StructuralSkeleton> out;
  std::set<std::string> keys;
  for (std::uint64_t code = 0; code < total; ++code) {
    StructuralSkeleton s;
    s.nodes = factors;
    std::uint64_t c = code;
    for (auto [a, b] : pairs) {
      switch (c % 4) {
        case 1: s.covariances.emplace_back(a, b); break;
        case 2: s.directed.emplace_back(a, b); break;
        case 3: s.directed.emplace_back(b, a); break;
        default: break;
      }
      c /= 4;
    }
    if (!is_acyclic(n, s.directed)) continue;
    if (rule == EnumerationRule::exogenous_covariances_only) {
      std::vector<bool> endo(static_cast<std::size_t>(n), false);
      for (auto [f, t] : s.directed) endo[static_cast<std::size_t>(t)] = true;
      const bool bad = std::any_of(s.covariances.begin(), s.covariances.end(), [&](auto e) {
        return endo[static_cast<std::size_t>(e.first)] || endo[static_cast<std::size_t>(e.second)];
      });
      if (bad) continue;
    }
    s.canonical_key = canonical_key(s);
    if (keys.insert(s.canonical_key).second) out.push_back(std::move(s));
  }
  return out;
}

struct MeasurementBlock {
  std::string factor;
  std::vector<std::string> indicators;
};

/// Model-language text for a measurement part plus a structural skeleton.
inline std::string skeleton_syntax(const std::vector<MeasurementBlock>& blocks, const StructuralSkeleton& s) {
  std::ostringstream os;
  for (const auto& b : blocks) {
    os << b.factor << " =~ ";
    for (std::size_t i = 0; i < b.indicators.size(); ++i) os << (i ? " + " : "") << b.indicators[i];
    os << "\n";
  }
  std::map<int, std::vector<int>> parents;
  for (auto [f, t] : s.directed) parents[t].push_back(f);
  for (auto& [t, ps] : parents) {
    std::sort(ps.begin(), ps.end());
    os << s.nodes[static_cast<std::size_t>(t)] << " ~ ";
    for (std::size_t i = 0; i < ps.size(); ++i) os << (i ? " + " : "") << s.nodes[static_cast<std::size_t>(ps[i])];
    os << "\n";
  }
  for (auto [a, b] : s.covariances)
    os << s.nodes[static_cast<std::size_t>(a)] << " ~~ " << s.nodes[static_cast<std::size_t>(b)] << "\n";
  return os.str();
}

inline StructuralSkeleton saturated_covariance_skeleton(const std::vector<std::string>& factors) {
  StructuralSkeleton s;
  s.nodes = factors;
  for (int a = 0; a < static_cast<int>(factors.size()); ++a)
    for (int b = a + 1; b < static_cast<int>(factors.size()); ++b) s.covariances.emplace_back(a, b);
  s.canonical_key = canonical_key(s);
  return s;
}

struct SearchEntry {
  std::size_t index = 0;
  std::string key;
  int n_free = 0;
  int df = 0;
  double chi2 = kNaN;
  double cfi = kNaN;
  double tli = kNaN;
  double nfi = kNaN;
  double rmsea = kNaN;
  double rmsea_lower = kNaN;
  double rmsea_upper = kNaN;
  double srmr = kNaN;
  bool converged = false;
  bool usable = false;
  int iterations = 0;
  std::vector<std::string> flags;
  int tier = -1;  // 0-based tier among ranked entries; -1 when excluded
};

struct SearchOptions {
  sem::Estimator estimator = sem::Estimator::ml;
  bool n_minus_one = false;
  int jobs = 1;
  bool warm_start = true;
  double tie_tolerance = 5e-5;  // indices equal to 4 decimal places
  double grad_tol = 1e-6;
};

struct SearchResult {
  std::vector<StructuralSkeleton> skeletons;
  std::vector<SearchEntry> entries;  // aligned with skeletons
  std::vector<std::size_t> ranking;  // entry indices, best first
  std::vector<std::vector<std::size_t>> tiers;
  Eigen::Index n_used = 0;
  Eigen::Index n_total = 0;
  double baseline_chi2 = kNaN;
  int baseline_df = 0;
  std::size_t n_failed = 0;

  std::vector<std::size_t> top_tier() const { return tiers.empty() ? std::vector<std::size_t>{} : tiers.front(); }
};

class SearchError : public Error {
 public:
  SearchError(const std::string& what, std::vector<SearchEntry> entries)
      : Error(what), entries_(std::move(entries)) {}
  const std::vector<SearchEntry>& entries() const { return entries_; }

 private:
  std::vector<SearchEntry> entries_;
};

/// Lexicographic order on (SRMR asc, RMSEA asc, CFI desc, TLI desc), each
/// compared with the tie tolerance, then by key for a total order.
inline bool better(const SearchEntry& a, const SearchEntry& b, double tol) {
  auto cmp = [&](double x, double y, bool ascending) -> int {
    if (std::abs(x - y) < tol) return 0;
    return ((x < y) == ascending) ? -1 : 1;
  };
  for (auto [x, y, asc] : {std::tuple{a.srmr, b.srmr, true}, std::tuple{a.rmsea, b.rmsea, true},
                           std::tuple{a.cfi, b.cfi, false}, std::tuple{a.tli, b.tli, false}}) {
    const int c = cmp(x, y, asc);
    if (c != 0) return c < 0;
  }
  return a.key < b.key;
}

inline bool tied(const SearchEntry& a, const SearchEntry& b, double tol) {
  return std::abs(a.srmr - b.srmr) < tol && std::abs(a.rmsea - b.rmsea) < tol && std::abs(a.cfi - b.cfi) < tol &&
         std::abs(a.tli - b.tli) < tol;
}

/// Rank usable entries and group them into tiers of mutually tied members
/// (each tier is anchored at its best member).
inline void rank_entries(SearchResult& r, double tol) {
  r.ranking.clear();
  r.tiers.clear();
  for (std::size_t i = 0; i < r.entries.size(); ++i)
    if (r.entries[i].usable) r.ranking.push_back(i);
  std::sort(r.ranking.begin(), r.ranking.end(),
            [&](std::size_t a, std::size_t b) { return better(r.entries[a], r.entries[b], tol); });
  for (std::size_t i : r.ranking) {
    if (r.tiers.empty() || !tied(r.entries[r.tiers.back().front()], r.entries[i], tol)) r.tiers.emplace_back();
    r.tiers.back().push_back(i);
    r.entries[i].tier = static_cast<int>(r.tiers.size()) - 1;
  }
}

/// Fit every skeleton with the shared measurement part. Fits that fail or
/// are improper are logged and left out of the ranking.
inline SearchResult run_search(const std::vector<StructuralSkeleton>& skeletons,
                               const std::vector<MeasurementBlock>& blocks, const NumericMatrix& X,
                               const SearchOptions& opt = {}) {
  if (skeletons.empty()) throw ConfigError("no skeletons to search");
  SearchResult res;
  res.skeletons = skeletons;
  std::vector<std::string> factors;
  for (const auto& b : blocks) factors.push_back(b.factor);

  const auto base_model = sem::parse_model(skeleton_syntax(blocks, saturated_covariance_skeleton(factors)));
  sem::validate_against(base_model, X.columns);
  const auto moments = sem::compute_moments(X, base_model.observed);
  res.n_used = moments.n_used;
  res.n_total = moments.n_total;

  sem::FitOptions fo;
  fo.estimator = opt.estimator;
  fo.n_minus_one = opt.n_minus_one;
  fo.compute_se = false;
  fo.compute_residuals = false;
  fo.grad_tol = opt.grad_tol;
  std::optional<sem::WarmStart> warm;
  if (opt.warm_start) {
    const auto cfa = sem::fit_moments(base_model, moments, fo);
    if (cfa.converged && cfa.sigma_pd) warm = sem::warm_start_from(cfa);
    res.baseline_chi2 = cfa.chi2_baseline;
    res.baseline_df = cfa.df_baseline;
  }

  res.entries.resize(skeletons.size());
  parallel_for(skeletons.size(), opt.jobs, [&](std::size_t i) {
    SearchEntry& e = res.entries[i];
    e.index = i;
    e.key = skeletons[i].canonical_key;
    try {
      const auto model = sem::parse_model(skeleton_syntax(blocks, skeletons[i]));
      sem::FitOptions local = fo;
      if (warm) local.warm = &*warm;
      const auto fit = sem::fit_moments(model, moments, local);
      e.n_free = fit.n_free;
      e.df = fit.df;
      e.chi2 = fit.chi2;
      e.cfi = fit.indices.cfi;
      e.tli = fit.indices.tli;
      e.nfi = fit.indices.nfi;
      e.rmsea = fit.indices.rmsea;
      e.rmsea_lower = fit.indices.rmsea_lower;
      e.rmsea_upper = fit.indices.rmsea_upper;
      e.srmr = fit.srmr;
      e.converged = fit.converged;
      e.iterations = fit.iterations;
      e.flags = fit.flags;
      e.usable = fit.usable() && fit.indices.rmsea_defined && fit.indices.tli_defined;
      if (fit.usable() && !e.usable) e.flags.push_back("fit indices undefined (df = 0)");
    } catch (const Error& ex) {
      e.flags.push_back(ex.what());
    }
  });
  for (const auto& e : res.entries)
    if (!e.usable) ++res.n_failed;
  if (res.n_failed == res.entries.size()) throw SearchError("every candidate model failed", res.entries);
  rank_entries(res, opt.tie_tolerance);
  return res;
}

struct SharedProperties {
  std::vector<std::string> edges_in_all;
  std::vector<std::string> edges_in_none;
  std::vector<std::pair<std::string, std::string>> reachable_in_all;  // directed path u => v in every member
  std::map<std::string, std::vector<std::vector<std::string>>> paths_into;  // per sink: union of member paths
};

namespace detail {

inline void collect_paths(const StructuralSkeleton& s, int target, std::vector<std::vector<int>>& out) {
  const int n = static_cast<int>(s.nodes.size());
  std::vector<int> path;
  auto dfs = [&](auto&& self, int v) -> void {
    path.push_back(v);
    if (v == target && path.size() > 1) {
      out.push_back(path);
    } else if (v != target) {
      for (auto [f, t] : s.directed)
        if (f == v) self(self, t);
    }
    path.pop_back();
  };
  for (int v = 0; v < n; ++v)
    if (v != target) dfs(dfs, v);
}

inline bool reachable(const StructuralSkeleton& s, int from, int to) {
  std::vector<std::vector<int>> paths;
  collect_paths(s, to, paths);
  return std::any_of(paths.begin(), paths.end(), [&](const auto& p) { return p.front() == from; });
}

}  // namespace detail

/// Edges common to, and absent from, every tier member; ordered pairs
/// connected by a directed path in every member; all directed paths into
/// each sink.
inline SharedProperties shared_properties(const std::vector<StructuralSkeleton>& tier,
                                          const std::vector<std::string>& sinks = {}) {
  if (tier.empty()) throw ConfigError("shared_properties needs a nonempty tier");
  SharedProperties sp;
  const auto& nodes = tier.front().nodes;
  const int n = static_cast<int>(nodes.size());
  auto has_dir = [](const StructuralSkeleton& s, int f, int t) {
    return std::find(s.directed.begin(), s.directed.end(), std::pair{f, t}) != s.directed.end();
  };
  auto has_cov = [](const StructuralSkeleton& s, int a, int b) {
    return std::find(s.covariances.begin(), s.covariances.end(), std::pair{std::min(a, b), std::max(a, b)}) !=
           s.covariances.end();
  };
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      if (a == b) continue;
      const std::string dname = nodes[static_cast<std::size_t>(a)] + "->" + nodes[static_cast<std::size_t>(b)];
      const bool all = std::all_of(tier.begin(), tier.end(), [&](const auto& s) { return has_dir(s, a, b); });
      const bool none = std::none_of(tier.begin(), tier.end(), [&](const auto& s) { return has_dir(s, a, b); });
      if (all) sp.edges_in_all.push_back(dname);
      if (none) sp.edges_in_none.push_back(dname);
      if (a < b) {
        const std::string cname = nodes[static_cast<std::size_t>(a)] + "~~" + nodes[static_cast<std::size_t>(b)];
        if (std::all_of(tier.begin(), tier.end(), [&](const auto& s) { return has_cov(s, a, b); }))
          sp.edges_in_all.push_back(cname);
        if (std::none_of(tier.begin(), tier.end(), [&](const auto& s) { return has_cov(s, a, b); }))
          sp.edges_in_none.push_back(cname);
      }
      if (std::all_of(tier.begin(), tier.end(), [&](const auto& s) { return detail::reachable(s, a, b); }))
        sp.reachable_in_all.emplace_back(nodes[static_cast<std::size_t>(a)], nodes[static_cast<std::size_t>(b)]);
    }
  for (const auto& sink : sinks) {
    const auto it = std::find(nodes.begin(), nodes.end(), sink);
    if (it == nodes.end()) throw ConfigError("unknown sink node '" + sink + "'");
    const int t = static_cast<int>(it - nodes.begin());
    std::set<std::vector<std::string>> uniq;
    for (const auto& s : tier) {
      std::vector<std::vector<int>> paths;
      detail::collect_paths(s, t, paths);
      for (const auto& p : paths) {
        std::vector<std::string> named;
        for (int v : p) named.push_back(nodes[static_cast<std::size_t>(v)]);
        uniq.insert(named);
      }
    }
    sp.paths_into[sink] = {uniq.begin(), uniq.end()};
  }
  return sp;
}

}  // namespace lvm::search
