// reagg: command-line front end.
//
// Exit codes: 0 success, 1 unexpected failure, 2 invalid input,
// 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "reagg/correspondence.hpp"
#include "reagg/error.hpp"
#include "reagg/geometry.hpp"
#include "reagg/io.hpp"
#include "reagg/pipeline.hpp"
#include "reagg/validation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reagg;

namespace {

struct JobFlags {
  std::string config;
  std::string source_counts, covariates, source_map, dest_map;
  std::optional<std::string> method, strategy, likelihood, learning, quantiles;
  std::optional<long long> seed, samples;
  std::string output, diagnostics;
};

void add_job_flags(CLI::App* cmd, JobFlags& f, bool with_selectors) {
  cmd->add_option("--config,--job", f.config, "job JSON; flags override its fields")->check(CLI::ExistingFile);
  cmd->add_option("--source-counts", f.source_counts, "CSV source_id,count");
  cmd->add_option("--covariates", f.covariates, "CSV base_id,<covariate columns>");
  cmd->add_option("--source-map", f.source_map, "CSV base_id,source_id");
  cmd->add_option("--dest-map", f.dest_map, "CSV base_id,dest_id");
  cmd->add_option("--likelihood", f.likelihood, "gaussian | poisson | binomial");
  cmd->add_option("--learning", f.learning, "bayes | map");
  cmd->add_option("--seed", f.seed, "random seed");
  if (!with_selectors) return;
  cmd->add_option("--method", f.method, "weighted | probabilistic");
  cmd->add_option("--strategy", f.strategy, "exact | mcmc | variational | projection");
  cmd->add_option("--quantiles", f.quantiles, "lower,upper (default 0.05,0.95)");
  cmd->add_option("--samples", f.samples, "samples kept after burn-in");
}

json merged_spec(const JobFlags& f) {
  json spec = f.config.empty() ? json::object() : io::read_json(f.config);
  if (!spec.is_object()) throw ValidationError(f.config + ": job must be a JSON object");
  // Paths inside a config file are relative to the invocation directory.
  auto set_path = [&spec](const char* key, const std::string& v) {
    if (v.empty()) return;
    spec.erase(std::string(key) + "_csv");
    spec.erase(std::string(key) + "_b64");
    spec[key] = v;
  };
  set_path("source_counts", f.source_counts);
  set_path("covariates", f.covariates);
  set_path("source_map", f.source_map);
  set_path("dest_map", f.dest_map);
  if (f.method) spec["method"] = *f.method;
  if (f.strategy) spec["strategy"] = *f.strategy;
  if (f.likelihood) spec["likelihood"] = *f.likelihood;
  if (f.learning) spec["learning"] = *f.learning;
  if (f.quantiles) spec["quantiles"] = *f.quantiles;
  if (f.seed) spec["seed"] = *f.seed;
  if (f.samples) spec["samples"] = *f.samples;
  return spec;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") std::cout << text;
  else io::write_text(path, text);
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

int cmd_reaggregate(const JobFlags& f) {
  json spec = merged_spec(f);
  if (f.output.empty() && spec.contains("output")) spec.erase("output");
  spec.erase("diagnostics");
  const ReaggregationJob job = io::job_from_json(spec);
  const PredictiveSummary summary = reaggregate(job);
  warn(summary.warnings);
  emit(f.output, io::summary_csv(summary));
  std::string diag_path = f.diagnostics;
  if (diag_path.empty() && !f.output.empty() && f.output != "-") diag_path = f.output + ".diagnostics.json";
  if (!diag_path.empty()) io::write_text(diag_path, io::diagnostics_json(summary));
  return 0;
}

int cmd_fit(const JobFlags& f) {
  json spec = merged_spec(f);
  spec.erase("latent");
  const ReaggregationJob job = io::job_from_json(spec);
  const auto learned = learn_latent(job);
  json out = to_json(learned.model);
  out["learning"] = to_string(job.learning);
  if (job.source.n_groups() >= 2 * job.diagnostic_folds) {
    const auto d = dependence_diagnostic(job.covariates, job.y_s, job.source, job.diagnostic_folds);
    out["dependence"] = {{"score", d.score}, {"folds", d.folds}, {"held_out", d.held_out}, {"weak", d.weak}};
    if (d.weak) warn({"weak covariate dependence (score " + std::to_string(d.score) + ")"});
  }
  emit(f.output, out.dump(2) + "\n");
  return 0;
}

struct CorrespondFlags {
  std::string source_map, dest_map, covariates, weight_column = "population", output;
};

int cmd_correspond(const CorrespondFlags& f) {
  const auto geo = io::read_geometry(io::read_csv(f.source_map), io::read_csv(f.dest_map), io::read_csv(f.covariates));
  auto it = std::find(geo.covariate_names.begin(), geo.covariate_names.end(), f.weight_column);
  if (it == geo.covariate_names.end())
    throw ValidationError(f.covariates + ": no column named '" + f.weight_column + "'");
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(geo.covariates.cols());
  unit[it - geo.covariate_names.begin()] = 1.0;
  const auto feature = weighted_feature(geo.covariates, unit);
  const SparseMatrix C = build_correspondence(geo.dest, geo.source, feature.values, geo.source_ids);
  emit(f.output, io::correspondence_csv(C, geo.source_ids, geo.dest_ids));
  return 0;
}

struct ValidateFlags {
  std::string scenario;
  std::string methods = "weighted,probabilistic";
  std::optional<std::string> strategy, likelihood, quantiles, learning;
  std::optional<long long> seed, samples;
  int repeats = 1;
  std::string output;
};

int cmd_validate(const ValidateFlags& f) {
  json spec = f.scenario.empty() ? json::object() : io::read_json(f.scenario);
  if (f.likelihood) spec["likelihood"] = *f.likelihood;
  if (f.seed) spec["seed"] = *f.seed;
  SyntheticScenario base = io::scenario_from_json(spec);
  std::vector<Method> methods;
  std::stringstream ss(f.methods);
  for (std::string name; std::getline(ss, name, ',');) methods.push_back(parse_method(name));
  if (methods.empty()) throw ValidationError("no methods given");
  BenchmarkOptions options;
  if (f.strategy) options.strategy = parse_strategy(*f.strategy);
  if (f.learning) options.learning = parse_learning(*f.learning);
  if (f.quantiles) options.quantiles = QuantilePair::parse(*f.quantiles);
  if (f.samples) options.samples = *f.samples;
  if (f.repeats < 1) throw ValidationError("--repeats must be at least 1");
  std::vector<BenchmarkRow> rows;
  for (int r = 0; r < f.repeats; ++r) {
    SyntheticScenario s = base;
    s.seed = base.seed + static_cast<std::uint64_t>(r);
    if (f.repeats > 1) s.name = base.name + "-" + std::to_string(s.seed);
    const auto data = generate_scenario(s);
    const auto part = run_benchmark(s, data, methods, options);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  emit(f.output, io::benchmark_csv(rows));
  return 0;
}

int cmd_grid(const std::string& polygons, const std::string& grid_text, const std::string& output) {
  const auto regions = io::polygons_from_json(io::read_json(polygons));
  std::vector<double> g;
  std::stringstream ss(grid_text);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      g.push_back(std::stod(part));
    } catch (const std::logic_error&) {
      throw ValidationError("--grid value '" + part + "' is not a number");
    }
  }
  if (g.size() != 6) throw ValidationError("--grid needs x0,y0,cell_width,cell_height,n_cols,n_rows");
  GridSpec spec{g[0], g[1], g[2], g[3], static_cast<int>(g[4]), static_cast<int>(g[5])};
  const auto rows = grid_base_geometry(regions, spec);
  std::string out = "region_id,cell_id,area\n";
  for (const auto& r : rows)
    out += regions[r.region].id + "," + std::to_string(r.cell) + "," + io::format_number(r.area) + "\n";
  emit(output, out);
  return 0;
}

int cmd_population(const std::string& polygons, const std::string& points, const std::string& output) {
  const auto regions = io::polygons_from_json(io::read_json(polygons));
  const auto pts = io::points_from_csv(io::read_csv(points));
  const auto counts = synthesize_population(pts, regions);
  std::string out = "region_id,population\n";
  for (std::size_t i = 0; i < regions.size(); ++i)
    out += regions[i].id + "," + io::format_number(counts.counts[static_cast<Index>(i)]) + "\n";
  if (counts.unassigned > 0)
    warn({std::to_string(counts.unassigned) + " points fell outside every region"});
  emit(output, out);
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Probabilistic re-aggregation of counts between region sets"};
  app.require_subcommand(1);

  JobFlags reagg_flags;
  auto* reagg_cmd = app.add_subcommand("reaggregate", "predict destination counts from source counts");
  add_job_flags(reagg_cmd, reagg_flags, true);
  reagg_cmd->add_option("-o,--output", reagg_flags.output, "summary CSV (default stdout)");
  reagg_cmd->add_option("--diagnostics", reagg_flags.diagnostics, "diagnostics JSON (default <output>.diagnostics.json)");

  JobFlags fit_flags;
  auto* fit_cmd = app.add_subcommand("fit", "learn the covariate model and print it as JSON");
  add_job_flags(fit_cmd, fit_flags, false);
  fit_cmd->add_option("-o,--output", fit_flags.output, "model JSON (default stdout)");

  CorrespondFlags corr;
  auto* corr_cmd = app.add_subcommand("correspond", "export a population-weighted correspondence table");
  corr_cmd->add_option("--source-map", corr.source_map, "CSV base_id,source_id")->required()->check(CLI::ExistingFile);
  corr_cmd->add_option("--dest-map", corr.dest_map, "CSV base_id,dest_id")->required()->check(CLI::ExistingFile);
  corr_cmd->add_option("--covariates", corr.covariates, "CSV base_id,<columns>")->required()->check(CLI::ExistingFile);
  corr_cmd->add_option("--weight-column", corr.weight_column, "weighting column (default population)");
  corr_cmd->add_option("-o,--output", corr.output, "correspondence CSV (default stdout)");

  ValidateFlags val;
  auto* val_cmd = app.add_subcommand("validate", "benchmark methods on a synthetic scenario");
  val_cmd->add_option("--scenario", val.scenario, "scenario JSON")->check(CLI::ExistingFile);
  val_cmd->add_option("--methods,--method", val.methods, "comma-separated methods");
  val_cmd->add_option("--strategy", val.strategy, "conditioning strategy");
  val_cmd->add_option("--likelihood", val.likelihood, "override the scenario likelihood");
  val_cmd->add_option("--learning", val.learning, "bayes | map");
  val_cmd->add_option("--quantiles", val.quantiles, "lower,upper");
  val_cmd->add_option("--seed", val.seed, "scenario seed");
  val_cmd->add_option("--samples", val.samples, "samples per probabilistic run");
  val_cmd->add_option("--repeats", val.repeats, "consecutive seeds to run");
  val_cmd->add_option("-o,--output", val.output, "metrics CSV (default stdout)");

  std::string polygons, grid_text, grid_out;
  auto* grid_cmd = app.add_subcommand("grid", "intersect polygons with a regular grid");
  grid_cmd->add_option("--polygons", polygons, "polygon JSON")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--grid", grid_text, "x0,y0,cell_width,cell_height,n_cols,n_rows")->required();
  grid_cmd->add_option("-o,--output", grid_out, "CSV (default stdout)");

  std::string pop_polygons, pop_points, pop_out;
  auto* pop_cmd = app.add_subcommand("population", "count weighted points per polygon");
  pop_cmd->add_option("--polygons", pop_polygons, "polygon JSON")->required()->check(CLI::ExistingFile);
  pop_cmd->add_option("--points", pop_points, "CSV x,y[,weight]")->required()->check(CLI::ExistingFile);
  pop_cmd->add_option("-o,--output", pop_out, "CSV (default stdout)");

  std::string hierarchy, level_a, level_b;
  auto* anc_cmd = app.add_subcommand("ancestor", "finest level shared by two hierarchy levels");
  anc_cmd->add_option("--hierarchy", hierarchy, "hierarchy JSON")->required()->check(CLI::ExistingFile);
  anc_cmd->add_option("level_a", level_a)->required();
  anc_cmd->add_option("level_b", level_b)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*reagg_cmd) return cmd_reaggregate(reagg_flags);
  if (*fit_cmd) return cmd_fit(fit_flags);
  if (*corr_cmd) return cmd_correspond(corr);
  if (*val_cmd) return cmd_validate(val);
  if (*grid_cmd) return cmd_grid(polygons, grid_text, grid_out);
  if (*pop_cmd) return cmd_population(pop_polygons, pop_points, pop_out);
  if (*anc_cmd) {
    std::cout << common_ancestor_base(level_a, level_b, io::hierarchy_from_json(io::read_json(hierarchy))) << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
