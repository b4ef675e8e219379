#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lvm/correlation.hpp"
#include "lvm/efa.hpp"
#include "lvm/ingest.hpp"
#include "lvm/reliability.hpp"
#include "lvm/report.hpp"
#include "lvm/search.hpp"
#include "lvm/sem.hpp"
#include "lvm/synth.hpp"

namespace lvm::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

struct CfaCriteria {
  double min_std_loading = 0.50;
  double min_ave = 0.50;
  double min_reliability = 0.70;
  double max_std_residual = 2.50;
};

struct PipelineConfig {
  // Input: either a delimited file plus schema, or a generator spec.
  std::string data_path;
  std::string schema_path;
  std::optional<json> generate;
  double efa_fraction = 0.5;  // generated rows tagged WAVE=1, the rest WAVE=2

  RowFilter efa_filter;
  RowFilter cfa_filter;
  std::vector<std::string> efa_variables;  // empty: every non-nominal schema variable
  bool unknown_codes_as_missing = false;

  CorrelationMethod correlation = CorrelationMethod::polychoric;
  int polychoric_max_levels = 6;

  efa::PruneCriteria criteria;
  int pa_resamples = 20;
  double pa_quantile = 0.95;
  efa::NullScheme pa_scheme = efa::NullScheme::simulated;
  std::optional<int> pinned_factors;
  int n_boot = 0;
  double boot_alpha = 0.01;
  int ase_replicates = 200;

  std::string cfa_model_path;  // empty: built from the EFA item assignment
  sem::Estimator cfa_estimator = sem::Estimator::dwls;
  bool n_minus_one = false;
  CfaCriteria cfa_criteria;

  bool search = true;
  sem::Estimator search_estimator = sem::Estimator::ml;
  search::EnumerationRule rule = search::EnumerationRule::all_pairs;
  std::optional<int> reference_count;
  std::vector<std::string> sinks;

  std::uint64_t seed = 1;
  int jobs = 0;
  std::string out_dir = "lvm_out";
  std::string base_dir = ".";

  std::string resolve(const std::string& p) const {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base_dir) / p).lexically_normal().string();
  }
};

namespace detail {

inline RowFilter filter_from_json(const json& j) {
  RowFilter f;
  for (const auto& [col, vals] : j.items()) {
    auto& set = f.allowed[col];
    for (const auto& v : vals) set.insert(v.is_string() ? v.get<std::string>() : v.dump());
  }
  return f;
}

inline json filter_to_json(const RowFilter& f) {
  json j = json::object();
  for (const auto& [col, vals] : f.allowed) j[col] = std::vector<std::string>(vals.begin(), vals.end());
  return j;
}

}  // namespace detail

/// Two filters are disjoint when some column is constrained by both to
/// non-overlapping value sets.
inline bool filters_disjoint(const RowFilter& a, const RowFilter& b) {
  for (const auto& [col, va] : a.allowed) {
    const auto it = b.allowed.find(col);
    if (it == b.allowed.end()) continue;
    bool overlap = false;
    for (const auto& v : va)
      if (it->second.count(v)) overlap = true;
    if (!overlap) return true;
  }
  return false;
}

inline void validate(const PipelineConfig& c) {
  if (c.generate && !c.data_path.empty()) throw ConfigError("give either 'data' or 'generate', not both");
  if (!c.generate && (c.data_path.empty() || c.schema_path.empty()))
    throw ConfigError("'data' and 'schema' are required unless 'generate' is given");
  if (c.efa_filter.empty() || c.cfa_filter.empty())
    throw ConfigError("both 'efa_filter' and 'cfa_filter' must be given");
  if (!filters_disjoint(c.efa_filter, c.cfa_filter))
    throw ConfigError("EFA and CFA/SEM wave filters overlap (" + c.efa_filter.describe() + " vs " +
                      c.cfa_filter.describe() + ")");
  c.criteria.validate();
  if (c.generate && !(c.efa_fraction > 0.0 && c.efa_fraction < 1.0))
    throw ConfigError("efa_fraction must lie in (0, 1)");
  if (c.n_boot < 0 || c.pa_resamples < 1) throw ConfigError("resample counts must be positive");
}

inline PipelineConfig config_from_json(const json& j, const std::string& base_dir = ".") {
  PipelineConfig c;
  c.base_dir = base_dir;
  try {
    c.data_path = j.value("data", std::string{});
    c.schema_path = j.value("schema", std::string{});
    if (j.contains("generate")) c.generate = j["generate"];
    c.efa_fraction = j.value("efa_fraction", c.efa_fraction);
    if (j.contains("efa_filter")) c.efa_filter = detail::filter_from_json(j["efa_filter"]);
    if (j.contains("cfa_filter")) c.cfa_filter = detail::filter_from_json(j["cfa_filter"]);
    c.efa_variables = j.value("efa_variables", c.efa_variables);
    c.unknown_codes_as_missing = j.value("unknown_codes_as_missing", false);
    c.correlation = correlation_method_from_string(j.value("correlation", std::string{"polychoric"}));
    c.polychoric_max_levels = j.value("polychoric_max_levels", c.polychoric_max_levels);
    if (j.contains("prune")) {
      const auto& p = j["prune"];
      c.criteria.min_communality = p.value("min_communality", c.criteria.min_communality);
      c.criteria.min_loading = p.value("min_loading", c.criteria.min_loading);
      c.criteria.cross_loading_threshold = p.value("cross_loading_threshold", c.criteria.cross_loading_threshold);
      c.criteria.min_alpha = p.value("min_alpha", c.criteria.min_alpha);
      c.criteria.min_items_per_factor = p.value("min_items_per_factor", c.criteria.min_items_per_factor);
      if (p.contains("factors") && !p["factors"].is_null()) c.pinned_factors = p["factors"].get<int>();
    }
    if (j.contains("parallel")) {
      const auto& p = j["parallel"];
      c.pa_resamples = p.value("n_resamples", c.pa_resamples);
      c.pa_quantile = p.value("quantile", c.pa_quantile);
      c.pa_scheme = efa::null_scheme_from_string(p.value("scheme", std::string{"simulated"}));
    }
    if (j.contains("bootstrap")) {
      c.n_boot = j["bootstrap"].value("n_boot", c.n_boot);
      c.boot_alpha = j["bootstrap"].value("alpha", c.boot_alpha);
    }
    c.ase_replicates = j.value("ase_replicates", c.ase_replicates);
    if (j.contains("cfa")) {
      const auto& p = j["cfa"];
      c.cfa_model_path = p.value("model", std::string{});
      c.cfa_estimator = sem::estimator_from_string(p.value("estimator", std::string{"dwls"}));
      c.n_minus_one = p.value("n_minus_one", false);
      c.cfa_criteria.min_std_loading = p.value("min_std_loading", c.cfa_criteria.min_std_loading);
      c.cfa_criteria.min_ave = p.value("min_ave", c.cfa_criteria.min_ave);
      c.cfa_criteria.min_reliability = p.value("min_reliability", c.cfa_criteria.min_reliability);
      c.cfa_criteria.max_std_residual = p.value("max_std_residual", c.cfa_criteria.max_std_residual);
    }
    if (j.contains("search")) {
      const auto& p = j["search"];
      c.search = p.value("enabled", true);
      c.search_estimator = sem::estimator_from_string(p.value("estimator", std::string{"ml"}));
      c.rule = search::enumeration_rule_from_string(p.value("rule", std::string{"all_pairs"}));
      if (p.contains("reference_count")) c.reference_count = p["reference_count"].get<int>();
      c.sinks = p.value("sinks", c.sinks);
    }
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    c.out_dir = j.value("out", c.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  validate(c);
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  auto c = config_from_json(j, fs::path(path).parent_path().string());
  if (j.contains("out")) c.out_dir = c.resolve(c.out_dir);
  return c;
}

struct StageRecord {
  std::string name;
  std::string directory;
  bool ok = true;
  std::vector<std::string> messages;
};

struct PipelineOutcome {
  int status = 0;
  std::vector<StageRecord> stages;
  std::string failed_stage;
  std::string error;
};

namespace detail {

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << s;
}

inline std::string item_list(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " + ") + x;
  return s;
}

/// Measurement-only model text from a factor/item assignment.
inline std::string cfa_syntax(const std::vector<std::string>& factors,
                              const std::vector<std::vector<std::string>>& items) {
  std::ostringstream os;
  for (std::size_t f = 0; f < factors.size(); ++f)
    if (!items[f].empty()) os << factors[f] << " =~ " << item_list(items[f]) << "\n";
  std::vector<std::string> kept;
  for (std::size_t f = 0; f < factors.size(); ++f)
    if (!items[f].empty()) kept.push_back(factors[f]);
  for (std::size_t a = 0; a < kept.size(); ++a)
    for (std::size_t b = a + 1; b < kept.size(); ++b) os << kept[a] << " ~~ " << kept[b] << "\n";
  return os.str();
}

}  // namespace detail

struct CfaEvaluation {
  sem::SemFit fit;
  nlohmann::json report;
  std::string text;
  bool ok = true;
  std::vector<std::string> messages;
};

/// Fit a measurement model and check it against the acceptance criteria:
/// standardized loadings, AVE, construct reliability and standardized
/// residuals.
inline CfaEvaluation evaluate_cfa(const sem::SemModel& model, const NumericMatrix& X, sem::FitOptions fo,
                                  const CfaCriteria& crit) {
  CfaEvaluation ev;
  fo.residual_threshold = crit.max_std_residual;
  fo.compute_residuals = true;
  ev.fit = sem::fit_model(model, X, fo);
  auto& fit = ev.fit;
  const auto st = sem::standardized_solution(fit);
  auto fail = [&](std::string m) {
    ev.ok = false;
    ev.messages.push_back(std::move(m));
  };
  for (const auto& f : fit.flags) fail(f);

  auto per_factor = json::array();
  std::ostringstream text;
  text << report::render_sem(report::to_json(fit)) << "\nFactor reliability\n";
  for (int f = 0; f < model.n_factors(); ++f) {
    const auto& fname = model.factors[static_cast<std::size_t>(f)];
    const auto it = model.indicators.find(fname);
    if (it == model.indicators.end() || it->second.empty()) continue;
    const auto& items = it->second;
    const auto k = static_cast<Eigen::Index>(items.size());
    Vector lam(k), lam_std(k);
    Matrix theta(k, k), obs(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      const int ia = model.observed_index(items[static_cast<std::size_t>(a)]);
      lam(a) = fit.matrices.Lambda(ia, f);
      lam_std(a) = st.loadings(ia, f);
      for (Eigen::Index b = 0; b < k; ++b) {
        const int ib = model.observed_index(items[static_cast<std::size_t>(b)]);
        theta(a, b) = fit.matrices.Theta(ia, ib);
        obs(a, b) = fit.S(ia, ib);
      }
    }
    OmegaResult om;
    try {
      om = omega(lam, theta, fit.latent_cov(f, f), obs);
    } catch (const DataError& e) {
      fail(fname + ": " + e.what());
    }
    const double av = ave(lam_std);
    const double min_load = lam_std.minCoeff();
    const bool ok = min_load > crit.min_std_loading && av > crit.min_ave && om.omega1 > crit.min_reliability;
    if (!ok) fail("factor " + fname + " fails a CFA acceptance criterion");
    per_factor.push_back({{"factor", fname},
                          {"items", items},
                          {"min_std_loading", report::number(min_load)},
                          {"omega1", report::number(om.omega1)},
                          {"omega2", report::number(om.omega2)},
                          {"omega3", report::number(om.omega3)},
                          {"ave", report::number(av)},
                          {"pass", ok}});
    char line[200];
    std::snprintf(line, sizeof(line), "  %-8s omega1 %.2f  omega2 %.2f  omega3 %.2f  AVE %.2f  min loading %.2f%s\n",
                  fname.c_str(), om.omega1, om.omega2, om.omega3, av, min_load, ok ? "" : "  FAIL");
    text << line;
  }
  if (!fit.residuals || !fit.residuals->pass) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "standardized residual above %.2f", crit.max_std_residual);
    fail(buf);
  }
  ev.report = {{"fit", report::to_json(fit)},
               {"standardized", report::to_json(st)},
               {"factors", per_factor},
               {"criteria",
                {{"min_std_loading", crit.min_std_loading},
                 {"min_ave", crit.min_ave},
                 {"min_reliability", crit.min_reliability},
                 {"max_std_residual", crit.max_std_residual}}},
               {"pass", ev.ok}};
  ev.text = text.str();
  return ev;
}

/// Run the staged analysis. Each stage writes report.json and report.txt to
/// its own numbered subdirectory of the output directory; a stage that throws
/// halts the run, keeping what was written so far.
inline PipelineOutcome run_pipeline(const PipelineConfig& cfg, std::ostream* log = nullptr) {
  validate(cfg);
  PipelineOutcome outcome;
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  std::string summary_text;
  int stage_no = 0;

  auto emit = [&](StageRecord& rec, const json& j, const std::string& text) {
    fs::create_directories(out / rec.directory);
    json body = j;
    body["stage"] = rec.name;
    body["ok"] = rec.ok;
    body["messages"] = rec.messages;
    detail::write_text(out / rec.directory / "report.json", body.dump(2) + "\n");
    detail::write_text(out / rec.directory / "report.txt", text);
    summary_text += "== " + rec.name + (rec.ok ? "" : " (NOT OK)") + "\n" + text + "\n";
    for (const auto& m : rec.messages) summary_text += "  note: " + m + "\n";
    if (log) *log << "[" << rec.name << "] " << (rec.ok ? "ok" : "not ok") << "\n";
  };
  auto begin = [&](const std::string& name) {
    StageRecord rec;
    rec.name = name;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d_", ++stage_no);
    rec.directory = buf + name;
    return rec;
  };

  // State carried between stages.
  NumericMatrix X_efa, X_cfa;
  std::optional<synth::GeneratorSpec> gen;
  efa::PruneResult pruned;
  CorrelationEstimate R_efa;
  std::string cfa_text;
  std::optional<sem::SemFit> cfa_fit;
  const int jobs = resolve_jobs(cfg.jobs);

  std::vector<std::pair<std::string, std::function<void(StageRecord&)>>> stages;

  if (cfg.generate) {
    stages.emplace_back("generate", [&](StageRecord& rec) {
      auto g = synth::spec_from_json(*cfg.generate);
      g.seed = cfg.generate->value("seed", cfg.seed);
      g.jobs = jobs;
      auto ds = synth::generate(g);
      const auto n_efa = static_cast<Eigen::Index>(std::llround(cfg.efa_fraction * static_cast<double>(g.N)));
      auto& wave = ds.metadata["WAVE"];
      for (Eigen::Index r = 0; r < g.N; ++r) wave.push_back(r < n_efa ? "1" : "2");
      fs::create_directories(out / rec.directory);
      std::ofstream data(out / rec.directory / "data.csv", std::ios::binary);
      write_delimited(data, ds);
      Schema schema;
      schema.variables = ds.variables;
      schema.metadata = {"WAVE"};
      detail::write_text(out / rec.directory / "schema.json", to_json(schema).dump(2) + "\n");
      gen = g;
      emit(rec, {{"spec", synth::to_json(g)}, {"n_rows", g.N}, {"efa_rows", n_efa}, {"data", "data.csv"}},
           "Generated " + std::to_string(g.N) + " rows (" + std::to_string(n_efa) + " tagged WAVE=1)\n");
    });
  }

  stages.emplace_back("ingest", [&](StageRecord& rec) {
    std::string data_path = cfg.resolve(cfg.data_path), schema_path = cfg.resolve(cfg.schema_path);
    if (gen) {
      data_path = (out / "01_generate" / "data.csv").string();
      schema_path = (out / "01_generate" / "schema.json").string();
    }
    const auto schema = load_schema(schema_path);
    LoadOptions lo;
    lo.unknown_codes_as_missing = cfg.unknown_codes_as_missing;
    const auto efa_ds = recode(load_dataset(data_path, schema, cfg.efa_filter, lo));
    const auto cfa_ds = recode(load_dataset(data_path, schema, cfg.cfa_filter, lo));
    X_efa = to_numeric(efa_ds);
    X_cfa = to_numeric(cfa_ds);
    if (!cfg.efa_variables.empty()) X_efa = X_efa.select(cfg.efa_variables);
    if (X_efa.n_rows() == 0) throw DataError("EFA filter selects no rows");
    if (X_cfa.n_rows() == 0) throw DataError("CFA filter selects no rows");
    json j{{"efa", {{"filter", detail::filter_to_json(cfg.efa_filter)},
                    {"rows", X_efa.n_rows()},
                    {"variables", X_efa.columns},
                    {"diagnostics", efa_ds.diagnostics},
                    {"notices", X_efa.notices}}},
           {"cfa", {{"filter", detail::filter_to_json(cfg.cfa_filter)},
                    {"rows", X_cfa.n_rows()},
                    {"diagnostics", cfa_ds.diagnostics},
                    {"notices", X_cfa.notices}}}};
    emit(rec, j,
         "EFA rows " + std::to_string(X_efa.n_rows()) + " (" + cfg.efa_filter.describe() + "), CFA rows " +
             std::to_string(X_cfa.n_rows()) + " (" + cfg.cfa_filter.describe() + ")\n");
  });

  CorrelationOptions co;
  co.polychoric_max_levels = cfg.polychoric_max_levels;
  co.jobs = jobs;
  const efa::CorrelationFn correlate_fn = [&](const NumericMatrix& X) {
    auto R = correlate(X, cfg.correlation, co);
    if (R.complete() && !R.positive_semidefinite) repair_psd(R);
    return R;
  };

  stages.emplace_back("correlation", [&](StageRecord& rec) {
    R_efa = correlate_fn(X_efa);
    if (!R_efa.complete()) {
      rec.ok = false;
      rec.messages.push_back(std::to_string(R_efa.undefined_pairs.size()) + " undefined correlation pair(s)");
    }
    if (R_efa.psd_repaired) rec.messages.push_back("correlation matrix repaired to the nearest PSD matrix");
    const auto j = report::to_json(R_efa);
    emit(rec, j, report::render_correlation(j));
  });

  stages.emplace_back("efa", [&](StageRecord& rec) {
    efa::PruneOptions po;
    po.criteria = cfg.criteria;
    po.parallel.n_resamples = cfg.pa_resamples;
    po.parallel.quantile = cfg.pa_quantile;
    po.parallel.scheme = cfg.pa_scheme;
    po.parallel.seed = derive_seed(cfg.seed, 1);
    po.parallel.jobs = jobs;
    po.efa.rotation.seed = derive_seed(cfg.seed, 2);
    po.pinned_factors = cfg.pinned_factors;
    po.alpha.ase_replicates = 0;
    pruned = efa::prune_items(X_efa, correlate_fn, po);
    if (!pruned.solution.converged) {
      rec.ok = false;
      rec.messages.push_back("final EFA solution did not converge");
    }
    if (pruned.cycle) rec.messages.push_back("pruning stopped on a repeated variable set");
    json j = report::to_json(pruned);
    std::string text = report::render_prune(j);
    if (cfg.n_boot > 0) {
      efa::BootstrapOptions bo;
      bo.n_boot = cfg.n_boot;
      bo.alpha = cfg.boot_alpha;
      bo.seed = derive_seed(cfg.seed, 3);
      bo.jobs = jobs;
      bo.efa = po.efa;
      const auto b = efa::bootstrap_ci(X_efa.select(pruned.variables), pruned.solution, correlate_fn, bo);
      j["bootstrap"] = report::to_json(b, pruned.solution);
      text += "\nBootstrap: " + std::to_string(b.n_used) + " of " + std::to_string(b.n_boot) + " replicates used\n";
    }
    emit(rec, j, text);
  });

  stages.emplace_back("reliability", [&](StageRecord& rec) {
    CronbachOptions ro;
    ro.ase_replicates = cfg.ase_replicates;
    ro.seed = derive_seed(cfg.seed, 4);
    ro.jobs = jobs;
    auto arr = json::array();
    for (std::size_t f = 0; f < pruned.factor_items.size(); ++f) {
      const auto& items = pruned.factor_items[f];
      if (items.size() < 2) {
        rec.messages.push_back(pruned.solution.factors[f] + " has fewer than two items");
        continue;
      }
      arr.push_back(report::to_json(reliability_report(X_efa, pruned.solution.factors[f], items, ro)));
    }
    emit(rec, {{"factors", arr}}, report::render_reliability(arr));
  });

  stages.emplace_back("cfa", [&](StageRecord& rec) {
    cfa_text = cfg.cfa_model_path.empty()
                   ? detail::cfa_syntax(pruned.solution.factors, pruned.factor_items)
                   : [&] {
                       std::ifstream in(cfg.resolve(cfg.cfa_model_path));
                       if (!in) throw ConfigError("cannot open CFA model '" + cfg.cfa_model_path + "'");
                       std::stringstream ss;
                       ss << in.rdbuf();
                       return ss.str();
                     }();
    sem::FitOptions fo;
    fo.estimator = cfg.cfa_estimator;
    fo.n_minus_one = cfg.n_minus_one;
    auto ev = evaluate_cfa(sem::parse_model(cfa_text), X_cfa, fo, cfg.cfa_criteria);
    rec.ok = ev.ok;
    rec.messages = ev.messages;
    ev.report["model"] = cfa_text;
    cfa_fit = std::move(ev.fit);
    emit(rec, ev.report, ev.text);
  });

  if (cfg.search) {
    stages.emplace_back("search", [&](StageRecord& rec) {
      const auto model = sem::parse_model(cfa_text);
      std::vector<search::MeasurementBlock> blocks;
      for (const auto& f : model.factors) blocks.push_back({f, model.indicators.at(f)});
      const auto skeletons = search::enumerate_structures(model.factors, cfg.rule);
      search::SearchOptions so;
      so.estimator = cfg.search_estimator;
      so.n_minus_one = cfg.n_minus_one;
      so.jobs = jobs;
      const auto res = search::run_search(skeletons, blocks, X_cfa, so);
      report::SearchReportOptions ro;
      ro.reference_count = cfg.reference_count;
      ro.rule = search::to_string(cfg.rule);
      ro.sinks = cfg.sinks;
      const auto j = report::search_report(res, blocks, ro);
      if (res.n_failed > 0) rec.messages.push_back(std::to_string(res.n_failed) + " candidate model(s) excluded");
      emit(rec, j, report::render_search(j));
    });
  }

  if (cfg.generate) {
    stages.emplace_back("recovery", [&](StageRecord& rec) {
      const auto& g = *gen;
      const auto rs = synth::resolve(g);
      // Match generating columns to recovered factors by congruence.
      Matrix L = pruned.solution.pattern, P = pruned.solution.phi;
      std::vector<std::string> rows = pruned.solution.variables;
      Matrix target(static_cast<Eigen::Index>(rows.size()), g.Lambda.cols());
      const auto names = g.variables.empty() ? std::vector<std::string>{} : g.variables;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        Eigen::Index src = static_cast<Eigen::Index>(i);
        if (!names.empty())
          src = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), rows[i]) - names.begin());
        else
          src = std::stol(rows[i].substr(1)) - 1;
        target.row(static_cast<Eigen::Index>(i)) = g.Lambda.row(src);
      }
      json j;
      j["retained"] = rows;
      j["n_generated_items"] = g.Lambda.rows();
      j["factors_recovered"] = L.cols();
      j["factors_generated"] = g.Lambda.cols();
      if (L.cols() == g.Lambda.cols()) {
        const auto al = efa::align_factors(L, target);
        efa::apply_alignment(al, L, P);
        j["max_abs_pattern_error"] = report::number((L - target).cwiseAbs().maxCoeff());
        j["max_abs_phi_error"] = report::number((P - rs.Phi).cwiseAbs().maxCoeff());
        j["aligned_pattern"] = report::matrix_json(L);
        j["aligned_phi"] = report::matrix_json(P);
      } else {
        rec.ok = false;
        rec.messages.push_back("recovered factor count differs from the generator");
      }
      std::ostringstream text;
      text << "Recovered " << L.cols() << " of " << g.Lambda.cols() << " factors, " << rows.size() << " of "
           << g.Lambda.rows() << " items retained\n";
      if (j.contains("max_abs_pattern_error"))
        text << "max |pattern error| " << report::detail::fmt(j["max_abs_pattern_error"], 4) << ", max |phi error| "
             << report::detail::fmt(j["max_abs_phi_error"], 4) << "\n";
      emit(rec, j, text.str());
    });
  }

  for (auto& [name, fn] : stages) {
    StageRecord rec = begin(name);
    try {
      fn(rec);
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.messages.push_back(e.what());
      outcome.failed_stage = name;
      outcome.error = e.what();
      outcome.stages.push_back(rec);
      if (log) *log << "[" << name << "] failed: " << e.what() << "\n";
      break;
    }
    outcome.stages.push_back(rec);
  }

  bool all_ok = outcome.failed_stage.empty();
  auto stages_json = json::array();
  for (const auto& s : outcome.stages) {
    all_ok = all_ok && s.ok;
    stages_json.push_back({{"stage", s.name}, {"directory", s.directory}, {"ok", s.ok}, {"messages", s.messages}});
  }
  outcome.status = outcome.failed_stage.empty() ? (all_ok ? 0 : 1) : 2;
  json summary{{"status", outcome.status}, {"stages", stages_json}, {"seed", cfg.seed}};
  if (!outcome.failed_stage.empty()) summary["failed_stage"] = outcome.failed_stage;
  detail::write_text(out / "summary.json", summary.dump(2) + "\n");
  if (!outcome.failed_stage.empty())
    summary_text += "== FAILED in stage '" + outcome.failed_stage + "': " + outcome.error + "\n";
  detail::write_text(out / "summary.txt", summary_text);
  return outcome;
}

}  // namespace lvm::pipeline
