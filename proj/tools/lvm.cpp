// Command-line front end: one subcommand per module plus `run` for the full
// staged pipeline.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lvm/correlation.hpp"
#include "lvm/efa.hpp"
#include "lvm/ingest.hpp"
#include "lvm/pipeline.hpp"
#include "lvm/reliability.hpp"
#include "lvm/report.hpp"
#include "lvm/search.hpp"
#include "lvm/sem.hpp"
#include "lvm/synth.hpp"

using nlohmann::json;
using namespace lvm;

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::string out;
  std::string format = "json";
  int jobs = 0;
};

struct DataArgs {
  std::string data;
  std::string schema;
  std::vector<std::string> filters;  // COLUMN=v1,v2
  std::vector<std::string> variables;
  bool unknown_as_missing = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--out", c.out, "Output file (default: stdout)");
  app->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"json", "text"}));
  app->add_option("--jobs", c.jobs, "Worker threads (0: LVM_JOBS or hardware concurrency)");
}

void add_data(CLI::App* app, DataArgs& d, bool required = true) {
  auto* o = app->add_option("--data", d.data, "Delimited data file");
  if (required) o->required();
  app->add_option("--schema", d.schema, "Schema JSON (default: every column numeric)");
  app->add_option("--filter", d.filters, "Row filter COLUMN=v1,v2 (repeatable)");
  app->add_option("--variables", d.variables, "Analysis variables (default: all)");
  app->add_flag("--unknown-as-missing", d.unknown_as_missing, "Mask undeclared codes instead of failing");
}

RowFilter parse_filters(const std::vector<std::string>& specs) {
  RowFilter f;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("filter '" + s + "' is not COLUMN=v1,v2");
    auto& set = f.allowed[s.substr(0, eq)];
    std::stringstream ss(s.substr(eq + 1));
    std::string v;
    while (std::getline(ss, v, ','))
      if (!v.empty()) set.insert(v);
  }
  return f;
}

// Without a schema every header column that is not filtered on is read as a
// numeric variable.
Schema header_schema(const std::string& path, const RowFilter& filter) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string header;
  std::getline(in, header);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  const char delim = header.find('\t') != std::string::npos ? '\t' : (header.find(';') != std::string::npos ? ';' : ',');
  Schema s;
  for (const auto& name : lvm::detail::split_delimited(header, delim)) {
    const auto n = std::string(lvm::detail::trim(name));
    if (filter.allowed.count(n)) {
      s.metadata.push_back(n);
      continue;
    }
    VariableSpec v;
    v.name = n;
    v.kind = VariableKind::numeric;
    s.variables.push_back(v);
  }
  return s;
}

NumericMatrix load(const DataArgs& d) {
  const auto filter = parse_filters(d.filters);
  const auto schema = d.schema.empty() ? header_schema(d.data, filter) : load_schema(d.schema);
  LoadOptions lo;
  lo.unknown_codes_as_missing = d.unknown_as_missing;
  auto ds = recode(load_dataset(d.data, schema, filter, lo));
  for (const auto& msg : ds.diagnostics) std::cerr << "note: " << msg << "\n";
  auto X = to_numeric(ds);
  if (!d.variables.empty()) X = X.select(d.variables);
  return X;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_report(const Common& c, const json& j, const std::string& text) {
  const std::string body = c.format == "json" ? j.dump(2) + "\n" : text;
  if (c.out.empty()) {
    std::cout << body;
    return;
  }
  std::ofstream out(c.out, std::ios::binary);
  if (!out) throw Error("cannot write '" + c.out + "'");
  out << body;
}

efa::CorrelationFn correlation_fn(CorrelationMethod method, int jobs) {
  CorrelationOptions co;
  co.jobs = jobs;
  return [method, co](const NumericMatrix& X) {
    auto R = correlate(X, method, co);
    if (R.complete() && !R.positive_semidefinite) repair_psd(R);
    return R;
  };
}

efa::PruneCriteria load_criteria(const std::string& spec) {
  efa::PruneCriteria c;
  if (spec == "default") return c;
  json j;
  try {
    j = json::parse(read_text(spec));
  } catch (const json::exception& e) {
    throw ConfigError("criteria '" + spec + "': " + e.what());
  }
  c.min_communality = j.value("min_communality", c.min_communality);
  c.min_loading = j.value("min_loading", c.min_loading);
  c.cross_loading_threshold = j.value("cross_loading_threshold", c.cross_loading_threshold);
  c.min_alpha = j.value("min_alpha", c.min_alpha);
  c.min_items_per_factor = j.value("min_items_per_factor", c.min_items_per_factor);
  c.validate();
  return c;
}

// "F=a,b,c" groups.
std::vector<std::pair<std::string, std::vector<std::string>>> parse_groups(const std::vector<std::string>& specs) {
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("item group '" + s + "' is not NAME=item1,item2");
    std::vector<std::string> items;
    std::stringstream ss(s.substr(eq + 1));
    std::string v;
    while (std::getline(ss, v, ','))
      if (!v.empty()) items.push_back(v);
    out.emplace_back(s.substr(0, eq), items);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-variable analysis: correlations, EFA with pruning, reliability, CFA/SEM and model search"};
  app.require_subcommand(1);

  // correlate
  Common c_cor;
  DataArgs d_cor;
  std::string cor_method = "polychoric";
  auto* cor = app.add_subcommand("correlate", "Pairwise correlation matrix");
  add_common(cor, c_cor);
  add_data(cor, d_cor);
  cor->add_option("--method", cor_method, "pearson | spearman | polychoric")
      ->check(CLI::IsMember({"pearson", "spearman", "polychoric"}));

  // efa
  Common c_efa;
  DataArgs d_efa;
  std::string efa_method = "polychoric", criteria_spec = "default", pa_scheme = "simulated";
  bool do_prune = false;
  std::optional<int> n_factors;
  int n_boot = 0, pa_resamples = 20;
  double boot_alpha = 0.01;
  auto* efa_cmd = app.add_subcommand("efa", "Minres EFA with oblimin rotation");
  add_common(efa_cmd, c_efa);
  add_data(efa_cmd, d_efa);
  efa_cmd->add_option("--method", efa_method, "Correlation method")
      ->check(CLI::IsMember({"pearson", "spearman", "polychoric"}));
  efa_cmd->add_flag("--prune", do_prune, "Iterative item pruning");
  efa_cmd->add_option("--criteria", criteria_spec, "Pruning thresholds: 'default' or a JSON file");
  efa_cmd->add_option("--factors", n_factors, "Pin the number of factors");
  efa_cmd->add_option("--pa-resamples", pa_resamples, "Parallel-analysis resamples");
  efa_cmd->add_option("--pa-scheme", pa_scheme, "simulated | resampled")
      ->check(CLI::IsMember({"simulated", "resampled"}));
  efa_cmd->add_option("--n-boot", n_boot, "Bootstrap replicates for loading intervals (0: none)");
  efa_cmd->add_option("--boot-alpha", boot_alpha, "Bootstrap interval level");

  // reliability
  Common c_rel;
  DataArgs d_rel;
  std::vector<std::string> groups;
  int ase_replicates = 200;
  auto* rel = app.add_subcommand("reliability", "Alpha battery and Guttman lambda 6 per item group");
  add_common(rel, c_rel);
  add_data(rel, d_rel);
  rel->add_option("--items", groups, "Item group NAME=item1,item2,... (repeatable)")->required();
  rel->add_option("--ase-replicates", ase_replicates, "Bootstrap replicates for the alpha standard error");

  // cfa / sem
  Common c_cfa, c_sem;
  DataArgs d_cfa, d_sem;
  std::string cfa_model, sem_model, cfa_est = "dwls", sem_est = "ml";
  bool cfa_n1 = false, sem_n1 = false;
  pipeline::CfaCriteria crit;
  auto* cfa = app.add_subcommand("cfa", "Confirmatory factor analysis with acceptance checks");
  add_common(cfa, c_cfa);
  add_data(cfa, d_cfa);
  cfa->add_option("--model", cfa_model, "Model syntax file")->required();
  cfa->add_option("--estimator", cfa_est, "ml | dwls")->check(CLI::IsMember({"ml", "dwls"}));
  cfa->add_flag("--n-minus-one", cfa_n1, "Use N - 1 as the chi-square multiplier");
  cfa->add_option("--min-std-loading", crit.min_std_loading);
  cfa->add_option("--min-ave", crit.min_ave);
  cfa->add_option("--min-reliability", crit.min_reliability);
  cfa->add_option("--max-std-residual", crit.max_std_residual);

  auto* sem_cmd = app.add_subcommand("sem", "Fit a structural equation model");
  add_common(sem_cmd, c_sem);
  add_data(sem_cmd, d_sem);
  sem_cmd->add_option("--model", sem_model, "Model syntax file")->required();
  sem_cmd->add_option("--estimator", sem_est, "ml | dwls")->check(CLI::IsMember({"ml", "dwls"}));
  sem_cmd->add_flag("--n-minus-one", sem_n1, "Use N - 1 as the chi-square multiplier");

  // search
  Common c_search;
  DataArgs d_search;
  std::string search_model, search_est = "ml", rule = "all_pairs";
  std::optional<int> search_factors, reference_count;
  std::vector<std::string> sinks;
  int leaderboard = 20;
  double search_min_loading = 0.32;
  auto* srch = app.add_subcommand("search", "Exhaustive structural model search");
  add_common(srch, c_search);
  add_data(srch, d_search);
  srch->add_option("--model", search_model, "Measurement model syntax (factor blocks)");
  srch->add_option("--factors", search_factors, "Derive blocks from an EFA with this many factors");
  srch->add_option("--min-loading", search_min_loading, "Primary loading needed to enter a derived block");
  srch->add_option("--estimator", search_est, "ml | dwls")->check(CLI::IsMember({"ml", "dwls"}));
  srch->add_option("--rule", rule, "all_pairs | exogenous_covariances_only")
      ->check(CLI::IsMember({"all_pairs", "default", "exogenous_covariances_only"}));
  srch->add_option("--reference-count", reference_count, "Expected model count to reconcile against");
  srch->add_option("--sinks", sinks, "Factors whose incoming paths are summarized");
  srch->add_option("--leaderboard", leaderboard, "Models listed in the text report");

  // generate
  Common c_gen;
  std::string gen_spec, schema_out;
  std::optional<Eigen::Index> gen_n;
  auto* gen = app.add_subcommand("generate", "Synthetic ordinal data from a factor model");
  add_common(gen, c_gen);
  gen->add_option("--spec", gen_spec, "Generator spec JSON")->required();
  gen->add_option("--n", gen_n, "Rows (overrides the spec)");
  gen->add_option("--schema-out", schema_out, "Write a matching schema JSON here");

  // run
  Common c_run;
  std::string config_path;
  bool seed_given = false;
  auto* run = app.add_subcommand("run", "Full pipeline from a config file");
  add_common(run, c_run);
  run->add_option("--config", config_path, "Pipeline config JSON")->required();
  run->get_option("--seed")->each([&](const std::string&) { seed_given = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (cor->parsed()) {
      const auto X = load(d_cor);
      CorrelationOptions co;
      co.jobs = c_cor.jobs;
      auto R = correlate(X, correlation_method_from_string(cor_method), co);
      const auto j = report::to_json(R);
      write_report(c_cor, j, report::render_correlation(j));
      return R.complete() ? 0 : 1;
    }

    if (efa_cmd->parsed()) {
      const auto X = load(d_efa);
      const auto cfn = correlation_fn(correlation_method_from_string(efa_method), c_efa.jobs);
      efa::EfaOptions eo;
      eo.rotation.seed = derive_seed(c_efa.seed, 2);
      json j;
      std::string text;
      efa::EfaSolution sol;
      NumericMatrix used = X;
      if (do_prune) {
        efa::PruneOptions po;
        po.criteria = load_criteria(criteria_spec);
        po.parallel.n_resamples = pa_resamples;
        po.parallel.scheme = efa::null_scheme_from_string(pa_scheme);
        po.parallel.seed = derive_seed(c_efa.seed, 1);
        po.parallel.jobs = c_efa.jobs;
        po.efa = eo;
        po.pinned_factors = n_factors;
        const auto pr = efa::prune_items(X, cfn, po);
        j = report::to_json(pr);
        text = report::render_prune(j);
        sol = pr.solution;
        used = X.select(pr.variables);
      } else {
        const auto R = cfn(X);
        int m = n_factors.value_or(0);
        if (m <= 0) {
          efa::ParallelOptions pa;
          pa.n_resamples = pa_resamples;
          pa.scheme = efa::null_scheme_from_string(pa_scheme);
          pa.seed = derive_seed(c_efa.seed, 1);
          pa.jobs = c_efa.jobs;
          m = std::max(1, efa::parallel_analysis(X, R, pa).suggested);
        }
        sol = efa::fit_efa(R, m, X.n_rows(), eo);
        j = report::to_json(sol);
        text = report::render_efa(j);
      }
      if (n_boot > 0) {
        efa::BootstrapOptions bo;
        bo.n_boot = n_boot;
        bo.alpha = boot_alpha;
        bo.seed = derive_seed(c_efa.seed, 3);
        bo.jobs = c_efa.jobs;
        bo.efa = eo;
        j["bootstrap"] = report::to_json(efa::bootstrap_ci(used, sol, cfn, bo), sol);
      }
      write_report(c_efa, j, text);
      return sol.converged ? 0 : 1;
    }

    if (rel->parsed()) {
      const auto X = load(d_rel);
      CronbachOptions ro;
      ro.ase_replicates = ase_replicates;
      ro.seed = c_rel.seed;
      ro.jobs = c_rel.jobs;
      auto arr = json::array();
      for (const auto& [name, items] : parse_groups(groups))
        arr.push_back(report::to_json(reliability_report(X, name, items, ro)));
      write_report(c_rel, {{"factors", arr}}, report::render_reliability(arr));
      return 0;
    }

    if (cfa->parsed()) {
      const auto X = load(d_cfa);
      sem::FitOptions fo;
      fo.estimator = sem::estimator_from_string(cfa_est);
      fo.n_minus_one = cfa_n1;
      auto ev = pipeline::evaluate_cfa(sem::parse_model(read_text(cfa_model)), X, fo, crit);
      ev.report["messages"] = ev.messages;
      std::string text = ev.text;
      for (const auto& m : ev.messages) text += "note: " + m + "\n";
      write_report(c_cfa, ev.report, text);
      return ev.ok ? 0 : 1;
    }

    if (sem_cmd->parsed()) {
      const auto X = load(d_sem);
      sem::FitOptions fo;
      fo.estimator = sem::estimator_from_string(sem_est);
      fo.n_minus_one = sem_n1;
      auto fit = sem::fit_model(sem::parse_model(read_text(sem_model)), X, fo);
      auto j = report::to_json(fit);
      j["standardized"] = report::to_json(sem::standardized_solution(fit));
      write_report(c_sem, j, report::render_sem(j));
      return fit.usable() ? 0 : 1;
    }

    if (srch->parsed()) {
      const auto X = load(d_search);
      std::vector<search::MeasurementBlock> blocks;
      if (!search_model.empty()) {
        const auto model = sem::parse_model(read_text(search_model));
        for (const auto& f : model.factors) blocks.push_back({f, model.indicators.at(f)});
      } else if (search_factors) {
        efa::EfaOptions eo;
        eo.rotation.seed = derive_seed(c_search.seed, 2);
        const auto sol = efa::fit_efa(correlation_fn(CorrelationMethod::pearson, c_search.jobs)(X), *search_factors,
                                      X.n_rows(), eo);
        const auto primary = efa::primary_factor(sol.pattern);
        for (int f = 0; f < sol.n_factors(); ++f) {
          search::MeasurementBlock b{sol.factors[static_cast<std::size_t>(f)], {}};
          for (std::size_t i = 0; i < primary.size(); ++i)
            if (primary[i] == f && std::abs(sol.pattern(static_cast<Eigen::Index>(i), f)) >= search_min_loading)
              b.indicators.push_back(sol.variables[i]);
          if (b.indicators.empty()) throw ModelError("factor " + b.factor + " has no indicators");
          blocks.push_back(b);
        }
      } else {
        throw ConfigError("search needs --model or --factors");
      }
      std::vector<std::string> names;
      for (const auto& b : blocks) names.push_back(b.factor);
      const auto r = search::enumeration_rule_from_string(rule);
      search::SearchOptions so;
      so.estimator = sem::estimator_from_string(search_est);
      so.jobs = c_search.jobs;
      const auto res = search::run_search(search::enumerate_structures(names, r), blocks, X, so);
      report::SearchReportOptions ro;
      ro.reference_count = reference_count;
      ro.rule = search::to_string(r);
      ro.sinks = sinks;
      ro.leaderboard = leaderboard;
      const auto j = report::search_report(res, blocks, ro);
      write_report(c_search, j, report::render_search(j));
      return res.n_failed == 0 ? 0 : 1;
    }

    if (gen->parsed()) {
      json spec;
      try {
        spec = json::parse(read_text(gen_spec));
      } catch (const json::exception& e) {
        throw ConfigError("spec '" + gen_spec + "': " + e.what());
      }
      auto g = synth::spec_from_json(spec);
      g.seed = c_gen.seed;
      g.jobs = c_gen.jobs;
      if (gen_n) g.N = *gen_n;
      const auto ds = synth::generate(g);
      if (c_gen.out.empty()) {
        write_delimited(std::cout, ds);
      } else {
        std::ofstream out(c_gen.out, std::ios::binary);
        if (!out) throw Error("cannot write '" + c_gen.out + "'");
        write_delimited(out, ds);
      }
      if (!schema_out.empty()) {
        Schema s;
        s.variables = ds.variables;
        std::ofstream out(schema_out, std::ios::binary);
        out << to_json(s).dump(2) << "\n";
      }
      return 0;
    }

    if (run->parsed()) {
      auto cfg = pipeline::load_config(config_path);
      if (!c_run.out.empty()) cfg.out_dir = c_run.out;
      if (seed_given) cfg.seed = c_run.seed;
      if (run->count("--jobs")) cfg.jobs = c_run.jobs;
      const auto outcome = pipeline::run_pipeline(cfg, &std::cerr);
      if (c_run.format == "text") {
        std::cout << read_text((std::filesystem::path(cfg.out_dir) / "summary.txt").string());
      } else {
        std::cout << read_text((std::filesystem::path(cfg.out_dir) / "summary.json").string());
      }
      if (!outcome.failed_stage.empty())
        std::cerr << "error: stage '" << outcome.failed_stage << "' failed: " << outcome.error << "\n";
      return outcome.status;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
