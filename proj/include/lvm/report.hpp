#pragma once

#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lvm/correlation.hpp"
#include "lvm/efa.hpp"
#include "lvm/reliability.hpp"
#include "lvm/search.hpp"
#include "lvm/sem.hpp"

namespace lvm::report {

using nlohmann::json;

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json vector_json(const Vector& v) {
  auto out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v(i)));
  return out;
}

inline json matrix_json(const Matrix& M) {
  auto rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    auto row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(number(M(i, j)));
    rows.push_back(row);
  }
  return rows;
}

/// {"rows": [...], "columns": [...], "values": [[...]]}
inline json labelled_matrix(const Matrix& M, const std::vector<std::string>& rows,
                            const std::vector<std::string>& cols) {
  return {{"rows", rows}, {"columns", cols}, {"values", matrix_json(M)}};
}

// ---------------------------------------------------------------------------
// Module reports.

inline json to_json(const CorrelationEstimate& R) {
  json j;
  j["variables"] = R.variables;
  j["r"] = matrix_json(R.r);
  auto n = json::array();
  for (Eigen::Index a = 0; a < R.pair_n.rows(); ++a) {
    auto row = json::array();
    for (Eigen::Index b = 0; b < R.pair_n.cols(); ++b) row.push_back(R.pair_n(a, b));
    n.push_back(row);
  }
  j["pair_n"] = n;
  auto methods = json::array();
  for (int a = 0; a < R.size(); ++a) {
    auto row = json::array();
    for (int b = 0; b < R.size(); ++b) row.push_back(to_string(R.method(a, b)));
    methods.push_back(row);
  }
  j["methods"] = methods;
  auto undefined = json::array();
  for (auto [a, b] : R.undefined_pairs)
    undefined.push_back({R.variables[static_cast<std::size_t>(a)], R.variables[static_cast<std::size_t>(b)]});
  j["undefined_pairs"] = undefined;
  j["n_rows"] = R.n_rows;
  j["min_eigenvalue"] = number(R.min_eigenvalue);
  j["positive_semidefinite"] = R.positive_semidefinite;
  j["psd_repaired"] = R.psd_repaired;
  return j;
}

inline json to_json(const efa::EfaSolution& s) {
  json j;
  j["variables"] = s.variables;
  j["factors"] = s.factors;
  j["pattern"] = labelled_matrix(s.pattern, s.variables, s.factors);
  j["phi"] = labelled_matrix(s.phi, s.factors, s.factors);
  j["h2"] = vector_json(s.h2);
  j["u2"] = vector_json(s.u2);
  j["complexity"] = vector_json(s.complexity);
  j["mean_complexity"] = number(s.complexity.size() ? s.complexity.mean() : kNaN);
  j["reduced_eigenvalues"] = vector_json(s.reduced_eigenvalues);
  j["fit"] = {{"chi2", number(s.fit.chi2)},
              {"df", s.fit.df},
              {"chi2_null", number(s.fit.chi2_null)},
              {"df_null", s.fit.df_null},
              {"tli", number(s.fit.tli)},
              {"rmsea", number(s.fit.rmsea.estimate)},
              {"rmsea_lower", number(s.fit.rmsea.lower)},
              {"rmsea_upper", number(s.fit.rmsea.upper)},
              {"bic", number(s.fit.bic)},
              {"objective", number(s.fit.objective)},
              {"rms_offdiag_residual", number(s.fit.rms_offdiag)},
              {"defined", s.fit.defined}};
  j["n_obs"] = s.n_obs_effective;
  j["converged"] = s.converged;
  j["iterations"] = s.iterations;
  j["grad_norm"] = number(s.grad_norm);
  j["heywood"] = s.heywood;
  j["rotation_starts_converged"] = s.rotation_starts_converged;
  return j;
}

inline json to_json(const efa::ParallelAnalysis& pa) {
  return {{"observed", vector_json(pa.observed)},
          {"simulated_envelope", vector_json(pa.simulated_envelope)},
          {"resampled_envelope", vector_json(pa.resampled_envelope)},
          {"suggested_simulated", pa.suggested_simulated},
          {"suggested_resampled", pa.suggested_resampled},
          {"suggested", pa.suggested},
          {"n_resamples", pa.options.n_resamples},
          {"quantile", pa.options.quantile},
          {"scheme", efa::to_string(pa.options.scheme)},
          {"seed", pa.options.seed}};
}

inline json to_json(const efa::PruneResult& r) {
  json j;
  auto steps = json::array();
  for (const auto& s : r.steps) {
    json js;
    js["iteration"] = s.iteration;
    js["stage"] = s.stage;
    js["n_variables"] = s.variables.size();
    js["variables"] = s.variables;
    js["suggested_factors"] = s.suggested;
    js["chosen_factors"] = s.chosen;
    auto br = json::array();
    for (const auto& b : s.brackets)
      br.push_back({{"m", b.m},
                    {"rmsea", number(b.rmsea)},
                    {"tli", number(b.tli)},
                    {"bic", number(b.bic)},
                    {"converged", b.converged},
                    {"admissible", b.admissible}});
    js["brackets"] = br;
    auto rm = json::array();
    for (const auto& x : s.removals)
      rm.push_back({{"variable", x.variable}, {"rule", x.rule}, {"value", number(x.value)}, {"factor", x.factor}});
    js["removals"] = rm;
    auto fa = json::array();
    for (const auto& [f, a] : s.factor_alpha) fa.push_back({{"factor", f}, {"raw_alpha", number(a)}});
    js["factor_alpha"] = fa;
    steps.push_back(js);
  }
  j["steps"] = steps;
  j["retained"] = r.variables;
  j["factor_items"] = r.factor_items;
  j["cycle_detected"] = r.cycle;
  j["exhausted"] = r.exhausted;
  j["solution"] = to_json(r.solution);
  j["parallel"] = to_json(r.parallel);
  return j;
}

inline json to_json(const efa::BootstrapResult& b, const efa::EfaSolution& s) {
  auto ci = [&](const efa::BootstrapCI& c, const std::vector<std::string>& rows) {
    return json{{"lower", labelled_matrix(c.lower, rows, s.factors)},
                {"estimate", labelled_matrix(c.estimate, rows, s.factors)},
                {"upper", labelled_matrix(c.upper, rows, s.factors)},
                {"full_sample", labelled_matrix(c.full_sample, rows, s.factors)}};
  };
  return {{"pattern", ci(b.pattern, s.variables)},
          {"phi", ci(b.phi, s.factors)},
          {"n_boot", b.n_boot},
          {"n_used", b.n_used},
          {"n_dropped", b.n_dropped},
          {"alpha", b.alpha}};
}

inline json to_json(const CronbachResult& c) {
  return {{"raw_alpha", number(c.raw_alpha)}, {"std_alpha", number(c.std_alpha)}, {"average_r", number(c.average_r)},
          {"s_n", number(c.s_n)},             {"ase", number(c.ase)},             {"scale_mean", number(c.scale_mean)},
          {"scale_sd", number(c.scale_sd)},   {"item_mean", number(c.item_mean)}, {"item_sd", number(c.item_sd)},
          {"n_complete", c.n_complete},       {"k", c.k}};
}

inline json to_json(const ReliabilityReport& r) {
  json j{{"factor", r.factor}, {"items", r.items}, {"alpha", to_json(r.alpha)}, {"lambda6", number(r.lambda6)}};
  if (r.omega)
    j["omega"] = {{"omega1", number(r.omega->omega1)},
                  {"omega2", number(r.omega->omega2)},
                  {"omega3", number(r.omega->omega3)}};
  if (r.ave) j["ave"] = number(*r.ave);
  return j;
}

inline json to_json(const sem::SemFit& f) {
  json j;
  j["estimator"] = sem::to_string(f.estimator);
  j["n_used"] = f.n_used;
  j["n_total"] = f.n_total;
  j["n_free"] = f.n_free;
  j["df"] = f.df;
  j["chi2"] = number(f.chi2);
  j["chi2_baseline"] = number(f.chi2_baseline);
  j["df_baseline"] = f.df_baseline;
  j["multiplier"] = f.multiplier;
  j["fmin"] = number(f.fmin);
  j["indices"] = {{"cfi", number(f.indices.cfi)},
                  {"tli", f.indices.tli_defined ? number(f.indices.tli) : json(nullptr)},
                  {"nfi", number(f.indices.nfi)},
                  {"rmsea", f.indices.rmsea_defined ? number(f.indices.rmsea) : json(nullptr)},
                  {"rmsea_lower", number(f.indices.rmsea_lower)},
                  {"rmsea_upper", number(f.indices.rmsea_upper)},
                  {"srmr", number(f.srmr)}};
  j["loglik"] = f.loglik ? number(*f.loglik) : json(nullptr);
  j["aic"] = f.aic ? number(*f.aic) : json(nullptr);
  j["bic"] = f.bic ? number(*f.bic) : json(nullptr);
  j["converged"] = f.converged;
  j["sigma_positive_definite"] = f.sigma_pd;
  j["heywood"] = f.heywood;
  j["invalid"] = f.invalid;
  j["iterations"] = f.iterations;
  j["grad_norm"] = number(f.grad_norm);
  j["flags"] = f.flags;
  auto params = json::array();
  for (const auto& pe : f.estimates)
    params.push_back({{"lhs", pe.param.lhs},
                      {"op", pe.param.op},
                      {"rhs", pe.param.rhs},
                      {"kind", sem::to_string(pe.param.kind)},
                      {"free", pe.param.free},
                      {"estimate", number(pe.estimate)},
                      {"se", number(pe.se)},
                      {"z", number(pe.z)},
                      {"std_all", number(pe.std_all)}});
  j["parameters"] = params;
  if (f.model) j["implied"] = labelled_matrix(f.sigma, f.model->observed, f.model->observed);
  if (f.residuals) {
    j["residuals"] = {{"max_abs_standardized", number(f.residuals->max_abs)},
                      {"max_pair", f.residuals->max_pair},
                      {"threshold", f.residuals->threshold},
                      {"pass", f.residuals->pass}};
    if (f.model)
      j["residuals"]["standardized"] = labelled_matrix(f.residuals->standardized, f.model->observed, f.model->observed);
  }
  return j;
}

inline json to_json(const sem::StandardizedSolution& s) {
  return {{"loadings", labelled_matrix(s.loadings, s.observed, s.factors)},
          {"regressions", labelled_matrix(s.regressions, s.factors, s.factors)},
          {"factor_correlations", labelled_matrix(s.factor_correlations, s.factors, s.factors)},
          {"residual_variances", vector_json(s.residual_variances)},
          {"all_expected_positive", s.all_positive},
          {"non_positive", s.negative}};
}

inline json to_json(const search::SearchEntry& e) {
  return {{"index", e.index},
          {"key", e.key},
          {"n_free", e.n_free},
          {"df", e.df},
          {"chi2", number(e.chi2)},
          {"cfi", number(e.cfi)},
          {"tli", number(e.tli)},
          {"nfi", number(e.nfi)},
          {"rmsea", number(e.rmsea)},
          {"rmsea_lower", number(e.rmsea_lower)},
          {"rmsea_upper", number(e.rmsea_upper)},
          {"srmr", number(e.srmr)},
          {"converged", e.converged},
          {"ranked", e.usable},
          {"tier", e.tier},
          {"iterations", e.iterations},
          {"flags", e.flags}};
}

inline json to_json(const search::SharedProperties& sp) {
  json paths = json::object();
  for (const auto& [sink, ps] : sp.paths_into) paths[sink] = ps;
  auto reach = json::array();
  for (const auto& [a, b] : sp.reachable_in_all) reach.push_back({{"from", a}, {"to", b}});
  return {{"edges_in_all", sp.edges_in_all},
          {"edges_in_none", sp.edges_in_none},
          {"directed_path_in_all", reach},
          {"paths_into", paths}};
}

struct SearchReportOptions {
  std::optional<int> reference_count;  // expected enumeration size to reconcile against
  std::string rule;
  std::vector<std::string> sinks;
  std::size_t leaderboard = 20;
};

inline json search_report(const search::SearchResult& r, const std::vector<search::MeasurementBlock>& blocks,
                          const SearchReportOptions& opt = {}) {
  json j;
  auto models = json::array();
  for (const auto& e : r.entries) models.push_back(to_json(e));
  j["models"] = models;
  j["enumeration"] = {{"rule", opt.rule}, {"count", r.skeletons.size()}};
  if (opt.reference_count) {
    j["enumeration"]["reference_count"] = *opt.reference_count;
    j["enumeration"]["gap"] = static_cast<long>(r.skeletons.size()) - *opt.reference_count;
  }
  j["n_used"] = r.n_used;
  j["n_total"] = r.n_total;
  j["n_failed"] = r.n_failed;
  j["n_ranked"] = r.ranking.size();
  j["n_tiers"] = r.tiers.size();
  j["ranking"] = r.ranking;
  auto tiers = json::array();
  for (std::size_t t = 0; t < std::min<std::size_t>(r.tiers.size(), 10); ++t) {
    auto members = json::array();
    for (auto i : r.tiers[t]) members.push_back(r.entries[i].key);
    tiers.push_back(members);
  }
  j["top_tiers"] = tiers;
  if (!r.tiers.empty()) {
    std::vector<search::StructuralSkeleton> top;
    auto syntax = json::array();
    for (auto i : r.tiers.front()) {
      top.push_back(r.skeletons[i]);
      syntax.push_back({{"key", r.entries[i].key}, {"model", search::skeleton_syntax(blocks, r.skeletons[i])}});
    }
    j["top_tier_models"] = syntax;
    j["shared_properties"] = to_json(search::shared_properties(top, opt.sinks));
  }
  j["leaderboard_size"] = opt.leaderboard;
  return j;
}

// ---------------------------------------------------------------------------
// Text rendering from the JSON reports.

namespace detail {

inline std::string fmt(const json& v, int prec = 3) {
  if (v.is_null()) return "NA";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v.get<double>();
    return os.str();
  }
  if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline std::string pad(const std::string& s, std::size_t w, bool left = false) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

inline void table(std::ostream& os, const json& lm, int prec = 2) {
  std::size_t w0 = 6;
  for (const auto& r : lm["rows"]) w0 = std::max(w0, r.get<std::string>().size() + 1);
  os << pad("", w0, true);
  for (const auto& c : lm["columns"]) os << pad(c.get<std::string>(), 8);
  os << "\n";
  for (std::size_t i = 0; i < lm["rows"].size(); ++i) {
    os << pad(lm["rows"][i].get<std::string>(), w0, true);
    for (const auto& v : lm["values"][i]) os << pad(fmt(v, prec), 8);
    os << "\n";
  }
}

}  // namespace detail

inline std::string render_correlation(const json& j) {
  std::ostringstream os;
  os << "Correlation matrix (" << j["variables"].size() << " variables, " << j["n_rows"] << " rows)\n";
  detail::table(os, json{{"rows", j["variables"]}, {"columns", j["variables"]}, {"values", j["r"]}});
  os << "min eigenvalue " << detail::fmt(j["min_eigenvalue"], 4) << ", undefined pairs "
     << j["undefined_pairs"].size() << "\n";
  return os.str();
}

inline std::string render_efa(const json& j) {
  std::ostringstream os;
  os << "Pattern matrix\n";
  json lm = j["pattern"];
  for (std::size_t i = 0; i < lm["values"].size(); ++i) {
    lm["values"][i].push_back(j["h2"][i]);
    lm["values"][i].push_back(j["u2"][i]);
    lm["values"][i].push_back(j["complexity"][i]);
  }
  for (const char* c : {"h2", "u2", "com"}) lm["columns"].push_back(c);
  detail::table(os, lm);
  os << "\nFactor correlations\n";
  detail::table(os, j["phi"]);
  const auto& f = j["fit"];
  os << "\nMean item complexity = " << detail::fmt(j["mean_complexity"], 1) << "; TLI = " << detail::fmt(f["tli"], 2)
     << "; RMSEA = " << detail::fmt(f["rmsea"], 3) << " (" << detail::fmt(f["rmsea_lower"], 3) << "; "
     << detail::fmt(f["rmsea_upper"], 3) << "); BIC = " << detail::fmt(f["bic"], 2) << "\n";
  return os.str();
}

inline std::string render_prune(const json& j) {
  std::ostringstream os;
  os << "Pruning trace\n";
  for (const auto& s : j["steps"]) {
    os << "  iteration " << s["iteration"] << " (stage " << s["stage"] << "): " << s["n_variables"]
       << " variables, parallel analysis " << s["suggested_factors"] << ", chosen " << s["chosen_factors"] << "\n";
    for (const auto& r : s["removals"])
      os << "    drop " << r["variable"].get<std::string>() << " [" << r["rule"].get<std::string>() << " "
         << detail::fmt(r["value"], 3) << "]\n";
  }
  os << "\n" << render_efa(j["solution"]);
  return os.str();
}

inline std::string render_reliability(const json& arr) {
  std::ostringstream os;
  os << detail::pad("factor", 8, true) << detail::pad("raw", 7) << detail::pad("std", 7) << detail::pad("G6", 7)
     << detail::pad("avg_r", 7) << detail::pad("S/N", 7) << detail::pad("ase", 8) << detail::pad("mean", 7)
     << detail::pad("sd", 7) << detail::pad("omega", 7) << detail::pad("ave", 7) << "\n";
  for (const auto& r : arr) {
    const auto& a = r["alpha"];
    os << detail::pad(r["factor"].get<std::string>(), 8, true) << detail::pad(detail::fmt(a["raw_alpha"], 2), 7)
       << detail::pad(detail::fmt(a["std_alpha"], 2), 7) << detail::pad(detail::fmt(r["lambda6"], 2), 7)
       << detail::pad(detail::fmt(a["average_r"], 2), 7) << detail::pad(detail::fmt(a["s_n"], 1), 7)
       << detail::pad(detail::fmt(a["ase"], 4), 8) << detail::pad(detail::fmt(a["item_mean"], 1), 7)
       << detail::pad(detail::fmt(a["item_sd"], 1), 7)
       << detail::pad(r.contains("omega") ? detail::fmt(r["omega"]["omega2"], 2) : "NA", 7)
       << detail::pad(r.contains("ave") ? detail::fmt(r["ave"], 2) : "NA", 7) << "\n";
  }
  return os.str();
}

inline std::string render_sem(const json& j) {
  std::ostringstream os;
  const auto& ix = j["indices"];
  os << j["estimator"].get<std::string>() << " fit: n_used " << j["n_used"] << " of " << j["n_total"] << "\n";
  os << "  # Pars " << j["n_free"] << "  DF " << j["df"] << "  Chi2 " << detail::fmt(j["chi2"], 3) << "  CFI "
     << detail::fmt(ix["cfi"]) << "  TLI " << detail::fmt(ix["tli"]) << "  RMSEA " << detail::fmt(ix["rmsea"])
     << "  SRMR " << detail::fmt(ix["srmr"]) << "\n";
  os << "  NFI " << detail::fmt(ix["nfi"]) << "  RMSEA 90% CI (" << detail::fmt(ix["rmsea_lower"]) << ", "
     << detail::fmt(ix["rmsea_upper"]) << ")";
  if (!j["aic"].is_null()) os << "  AIC " << detail::fmt(j["aic"], 2) << "  BIC " << detail::fmt(j["bic"], 2);
  os << "\n  converged " << detail::fmt(j["converged"]);
  if (j.contains("residuals"))
    os << "  max |std residual| " << detail::fmt(j["residuals"]["max_abs_standardized"], 2) << " ("
       << (j["residuals"]["pass"].get<bool>() ? "pass" : "FAIL") << ")";
  os << "\n\n";
  os << detail::pad("lhs", 8, true) << detail::pad("op", 4, true) << detail::pad("rhs", 8, true)
     << detail::pad("est", 9) << detail::pad("se", 9) << detail::pad("z", 9) << detail::pad("std", 8) << "\n";
  for (const auto& p : j["parameters"])
    os << detail::pad(p["lhs"].get<std::string>(), 8, true) << detail::pad(p["op"].get<std::string>(), 4, true)
       << detail::pad(p["rhs"].get<std::string>(), 8, true) << detail::pad(detail::fmt(p["estimate"]), 9)
       << detail::pad(detail::fmt(p["se"]), 9) << detail::pad(detail::fmt(p["z"], 2), 9)
       << detail::pad(detail::fmt(p["std_all"]), 8) << "\n";
  for (const auto& f : j["flags"]) os << "  flag: " << f.get<std::string>() << "\n";
  return os.str();
}

inline std::string render_search(const json& j) {
  std::ostringstream os;
  os << "Enumerated " << j["enumeration"]["count"] << " skeletons (rule " << detail::fmt(j["enumeration"]["rule"])
     << ")";
  if (j["enumeration"].contains("reference_count"))
    os << "; reference count " << j["enumeration"]["reference_count"] << ", gap " << j["enumeration"]["gap"];
  os << "\nRanked " << j["n_ranked"] << ", excluded " << j["n_failed"] << ", tiers " << j["n_tiers"] << "\n\n";
  os << detail::pad("rank", 5) << detail::pad("tier", 5) << detail::pad("#Pars", 6) << detail::pad("DF", 4)
     << detail::pad("Chi2", 11) << detail::pad("CFI", 8) << detail::pad("TLI", 8) << detail::pad("RMSEA", 8)
     << detail::pad("SRMR", 8) << detail::pad("NFI", 8) << "  skeleton\n";
  const std::size_t n = std::min<std::size_t>(j["ranking"].size(), j["leaderboard_size"].get<std::size_t>());
  for (std::size_t r = 0; r < n; ++r) {
    const auto& m = j["models"][j["ranking"][r].get<std::size_t>()];
    os << detail::pad(std::to_string(r + 1), 5) << detail::pad(std::to_string(m["tier"].get<int>() + 1), 5)
       << detail::pad(detail::fmt(m["n_free"]), 6) << detail::pad(detail::fmt(m["df"]), 4)
       << detail::pad(detail::fmt(m["chi2"], 3), 11) << detail::pad(detail::fmt(m["cfi"], 4), 8)
       << detail::pad(detail::fmt(m["tli"], 4), 8) << detail::pad(detail::fmt(m["rmsea"], 4), 8)
       << detail::pad(detail::fmt(m["srmr"], 4), 8) << detail::pad(detail::fmt(m["nfi"], 3), 8) << "  "
       << m["key"].get<std::string>() << "\n";
  }
  if (j.contains("shared_properties")) {
    const auto& sp = j["shared_properties"];
    os << "\nTop tier shared properties\n  edges in every member:";
    for (const auto& e : sp["edges_in_all"]) os << " " << e.get<std::string>();
    os << "\n  edges in no member:";
    for (const auto& e : sp["edges_in_none"]) os << " " << e.get<std::string>();
    os << "\n  directed path in every member:";
    for (const auto& e : sp["directed_path_in_all"])
      os << " " << e["from"].get<std::string>() << "=>" << e["to"].get<std::string>();
    os << "\n";
    for (const auto& [sink, paths] : sp["paths_into"].items()) {
      os << "  paths into " << sink << ":";
      for (const auto& p : paths) {
        os << " ";
        for (std::size_t k = 0; k < p.size(); ++k) os << (k ? "->" : "") << p[k].get<std::string>();
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace lvm::report
