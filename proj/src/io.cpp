#include "reagg/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include "reagg/error.hpp"

namespace reagg::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path;
  return base_dir / path;
}

std::optional<CsvTable> table_field(const json& spec, const std::string& field, const fs::path& base_dir) {
  if (auto it = spec.find(field + "_csv"); it != spec.end()) {
    if (!it->is_string()) throw ValidationError("'" + field + "_csv' must be a string");
    return parse_csv(it->get<std::string>(), field);
  }
  if (auto it = spec.find(field + "_b64"); it != spec.end()) {
    if (!it->is_string()) throw ValidationError("'" + field + "_b64' must be a string");
    return parse_csv(decode_base64(it->get<std::string>()), field);
  }
  if (auto it = spec.find(field); it != spec.end()) {
    if (!it->is_string()) throw ValidationError("'" + field + "' must be a CSV path");
    return read_csv(resolve(base_dir, it->get<std::string>()));
  }
  return std::nullopt;
}

CsvTable required_table(const json& spec, const std::string& field, const fs::path& base_dir) {
  auto t = table_field(spec, field, base_dir);
  if (!t) throw ValidationError("job is missing '" + field + "' (path, '" + field + "_csv' or '" + field + "_b64')");
  if (t->header.size() < 2) throw ValidationError(t->origin + ": expected at least two columns");
  return std::move(*t);
}

template <typename T>
T get_field(const json& spec, const char* key, T fallback) {
  auto it = spec.find(key);
  if (it == spec.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("job field '") + key + "' has the wrong type");
  }
}

Eigen::VectorXd vector_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing '") + key + "'");
  try {
    const auto v = it->get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
  } catch (const json::exception&) {
    throw ValidationError(std::string("'") + key + "' must be an array of numbers");
  }
}

Eigen::MatrixXd matrix_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing '") + key + "'");
  try {
    const auto rows = it->get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<Index>(rows[r].size()) != m.cols())
        throw ValidationError(std::string("'") + key + "' is ragged");
      for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    }
    return m;
  } catch (const json::exception&) {
    throw ValidationError(std::string("'") + key + "' must be a matrix of numbers");
  }
}

LatentDistribution latent_from_json(const json& j, LikelihoodFamily family, const Eigen::VectorXd& trials) {
  switch (family) {
    case LikelihoodFamily::gaussian: {
      Eigen::VectorXd mean = vector_field(j, "mean");
      if (j.contains("cov")) return GaussianLatent::dense(std::move(mean), matrix_field(j, "cov"));
      Eigen::VectorXd var = vector_field(j, "variance");
      if (var.size() != mean.size()) throw ValidationError("latent variance does not match the mean");
      return GaussianLatent::diagonal(std::move(mean), std::move(var));
    }
    case LikelihoodFamily::poisson:
      return PoissonLatent{vector_field(j, "rates")};
    case LikelihoodFamily::binomial: {
      BinomialLatent b;
      b.probabilities = vector_field(j, "probabilities");
      b.trials = j.contains("trials") ? vector_field(j, "trials") : trials;
      if (b.trials.size() != b.probabilities.size())
        throw ValidationError("latent trials do not match the probabilities");
      return b;
    }
  }
  throw ValidationError("unknown latent family");
}

// Assigns each base (by id) to a region named in the map; unknown or
// duplicate base ids fail with the offending line.
struct MapResult {
  std::vector<Index> assignment;
  std::vector<std::string> region_ids;
};

MapResult read_region_map(const CsvTable& t, const std::map<std::string, Index>& base_index,
                          const std::vector<std::string>* fixed_regions) {
  MapResult out;
  out.assignment.assign(base_index.size(), -1);
  std::map<std::string, Index> region_index;
  if (fixed_regions)
    for (std::size_t i = 0; i < fixed_regions->size(); ++i) region_index[(*fixed_regions)[i]] = static_cast<Index>(i);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& base = t.rows[r][0];
    const std::string& region = t.rows[r][1];
    auto b = base_index.find(base);
    if (b == base_index.end()) t.fail(r, "unknown base region '" + base + "'");
    if (out.assignment[b->second] != -1) t.fail(r, "base region '" + base + "' is mapped twice");
    auto g = region_index.find(region);
    if (g == region_index.end()) {
      if (fixed_regions) t.fail(r, "region '" + region + "' has no entry in the source counts");
      g = region_index.emplace(region, static_cast<Index>(out.region_ids.size())).first;
      out.region_ids.push_back(region);
    }
    out.assignment[b->second] = g->second;
  }
  for (const auto& [id, idx] : base_index)
    if (out.assignment[idx] == -1)
      throw ValidationError(t.origin + ": base region '" + id + "' is not mapped to any region");
  if (fixed_regions) {
    out.region_ids = *fixed_regions;
    std::vector<bool> used(fixed_regions->size(), false);
    for (Index g : out.assignment) used[g] = true;
    for (std::size_t i = 0; i < used.size(); ++i)
      if (!used[i]) throw ValidationError(t.origin + ": source region '" + (*fixed_regions)[i] + "' contains no base regions");
  }
  return out;
}

struct ParsedTables {
  CsvTable counts;
  std::optional<CsvTable> covariates;
  CsvTable source_map;
  CsvTable dest_map;
};

ParsedTables parse_tables(const json& spec, const fs::path& base_dir) {
  return {required_table(spec, "source_counts", base_dir), table_field(spec, "covariates", base_dir),
          required_table(spec, "source_map", base_dir), required_table(spec, "dest_map", base_dir)};
}

std::vector<std::string> base_order(const ParsedTables& t) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  const CsvTable& src = t.covariates ? *t.covariates : t.source_map;
  for (std::size_t r = 0; r < src.rows.size(); ++r) {
    if (!seen.insert(src.rows[r][0]).second) src.fail(r, "duplicate base region '" + src.rows[r][0] + "'");
    ids.push_back(src.rows[r][0]);
  }
  return ids;
}

const std::set<std::string> kJobKeys = {
    "source_counts", "source_counts_csv", "source_counts_b64", "covariates", "covariates_csv",
    "covariates_b64", "source_map", "source_map_csv", "source_map_b64", "dest_map", "dest_map_csv",
    "dest_map_b64", "likelihood", "method", "strategy", "learning", "quantiles", "seed", "samples",
    "burn_in", "thinning", "weight_column", "trials_column", "lambda", "nonnegative", "folds",
    "standardize", "intercept", "link", "latent", "output", "diagnostics"};

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ValidationError(origin + ": no column named '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& cell = rows[row][col];
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    if (!std::isfinite(v)) throw std::invalid_argument(cell);
    return v;
  } catch (const std::logic_error&) {
    fail(row, "column '" + header[col] + "': '" + cell + "' is not a finite number");
  }
}

void CsvTable::fail(std::size_t row, const std::string& message) const {
  throw ValidationError(origin + ":" + std::to_string(lines[row]) + ": " + message);
}

CsvTable parse_csv(const std::string& text, const std::string& origin) {
  CsvTable t;
  t.origin = origin;
  std::size_t line = 1;
  std::size_t row_line = 1;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  bool any = false;
  auto end_row = [&]() {
    row.push_back(trim(cell));
    cell.clear();
    const bool blank = row.size() == 1 && row[0].empty();
    if (!blank) {
      if (t.header.empty()) {
        t.header = row;
      } else {
        if (row.size() != t.header.size()) {
          std::ostringstream msg;
          msg << origin << ":" << row_line << ": expected " << t.header.size() << " fields, found "
              << row.size();
          throw ValidationError(msg.str());
        }
        t.rows.push_back(row);
        t.lines.push_back(row_line);
      }
    }
    row.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        cell += c;
      }
      continue;
    }
    if (c == '"' && trim(cell).empty()) {
      cell.clear();
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(trim(cell));
      cell.clear();
      any = true;
    } else if (c == '\n') {
      end_row();
      ++line;
      row_line = line;
    } else {
      cell += c;
      any = true;
    }
  }
  if (quoted) throw ValidationError(origin + ":" + std::to_string(row_line) + ": unterminated quoted field");
  if (any || !cell.empty()) end_row();
  if (t.header.empty()) throw ValidationError(origin + ": empty CSV");
  return t;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CsvTable read_csv(const fs::path& path) { return parse_csv(read_text(path), path.string()); }

json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
}

std::string decode_base64(const std::string& text) {
  using namespace boost::archive::iterators;
  using Decoder = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  std::string clean;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  if (clean.size() % 4 != 0) throw ValidationError("base64 payload has invalid length");
  std::size_t pad = 0;
  while (!clean.empty() && pad < 2 && clean[clean.size() - 1 - pad] == '=') ++pad;
  std::replace(clean.end() - static_cast<std::ptrdiff_t>(pad), clean.end(), '=', 'A');
  try {
    std::string out(Decoder(clean.begin()), Decoder(clean.end()));
    out.resize(out.size() - pad);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("base64 payload contains invalid characters");
  }
}

RegionLabels job_labels(const json& spec, const fs::path& base_dir) {
  const auto tables = parse_tables(spec, base_dir);
  RegionLabels labels;
  labels.base = base_order(tables);
  std::map<std::string, Index> base_index;
  for (std::size_t i = 0; i < labels.base.size(); ++i) base_index[labels.base[i]] = static_cast<Index>(i);
  for (const auto& row : tables.counts.rows) labels.source.push_back(row[0]);
  labels.dest = read_region_map(tables.dest_map, base_index, nullptr).region_ids;
  return labels;
}

ReaggregationJob job_from_json(const json& spec, const fs::path& base_dir) {
  if (!spec.is_object()) throw ValidationError("job must be a JSON object");
  for (const auto& [key, value] : spec.items())
    if (!kJobKeys.count(key)) throw ValidationError("unknown job field '" + key + "'");

  ReaggregationJob job;
  job.likelihood = parse_likelihood(get_field<std::string>(spec, "likelihood", "poisson"));
  job.method = parse_method(get_field<std::string>(spec, "method", "probabilistic"));
  if (spec.contains("strategy") && !spec["strategy"].is_null())
    job.strategy = parse_strategy(get_field<std::string>(spec, "strategy", "exact"));
  job.learning = parse_learning(get_field<std::string>(spec, "learning", "bayes"));
  if (auto it = spec.find("quantiles"); it != spec.end()) {
    if (it->is_string()) {
      job.quantiles = QuantilePair::parse(it->get<std::string>());
    } else {
      const auto q = get_field<std::vector<double>>(spec, "quantiles", {});
      if (q.size() != 2) throw ValidationError("'quantiles' must hold two numbers");
      job.quantiles = {q[0], q[1]};
    }
  }
  job.quantiles.validate();
  const auto seed = get_field<long long>(spec, "seed", 0);
  if (seed < 0) throw ValidationError("'seed' must be nonnegative");
  job.seed = static_cast<std::uint64_t>(seed);
  job.samples = get_field<Index>(spec, "samples", job.samples);
  job.burn_in = get_field<Index>(spec, "burn_in", job.burn_in);
  job.thinning = get_field<Index>(spec, "thinning", job.thinning);
  job.map_lambda = get_field<double>(spec, "lambda", job.map_lambda);
  job.diagnostic_folds = get_field<int>(spec, "folds", job.diagnostic_folds);
  if (spec.contains("nonnegative")) job.nonnegative = get_field<bool>(spec, "nonnegative", true);
  job.fit.standardize = get_field<bool>(spec, "standardize", true);
  job.fit.add_intercept = get_field<bool>(spec, "intercept", true);
  if (spec.contains("link")) {
    const auto link = get_field<std::string>(spec, "link", "");
    if (link == "identity") job.fit.link = Link::identity;
    else if (link == "log") job.fit.link = Link::log;
    else if (link == "logit") job.fit.link = Link::logit;
    else throw ValidationError("unknown link '" + link + "'");
  }

  const auto tables = parse_tables(spec, base_dir);
  const auto bases = base_order(tables);
  std::map<std::string, Index> base_index;
  for (std::size_t i = 0; i < bases.size(); ++i) base_index[bases[i]] = static_cast<Index>(i);

  // Source counts, in file order.
  const CsvTable& counts = tables.counts;
  const std::size_t value_col = std::find(counts.header.begin(), counts.header.end(), "count") != counts.header.end()
                                    ? counts.column("count")
                                    : 1;
  job.y_s.resize(static_cast<Index>(counts.rows.size()));
  std::set<std::string> seen;
  for (std::size_t r = 0; r < counts.rows.size(); ++r) {
    if (!seen.insert(counts.rows[r][0]).second) counts.fail(r, "duplicate source region '" + counts.rows[r][0] + "'");
    job.source_ids.push_back(counts.rows[r][0]);
    job.y_s[static_cast<Index>(r)] = counts.number(r, value_col);
  }
  if (job.source_ids.empty()) throw ValidationError(counts.origin + ": no source regions");

  auto src = read_region_map(tables.source_map, base_index, &job.source_ids);
  job.source = AggregationMatrix::from_assignment(std::move(src.assignment), static_cast<Index>(job.source_ids.size()));
  auto dst = read_region_map(tables.dest_map, base_index, nullptr);
  job.dest_ids = dst.region_ids;
  job.dest = AggregationMatrix::from_assignment(std::move(dst.assignment), static_cast<Index>(job.dest_ids.size()));

  if (tables.covariates) {
    const CsvTable& cov = *tables.covariates;
    job.covariates.resize(static_cast<Index>(cov.rows.size()), static_cast<Index>(cov.header.size() - 1));
    for (std::size_t r = 0; r < cov.rows.size(); ++r)
      for (std::size_t c = 1; c < cov.header.size(); ++c)
        job.covariates(static_cast<Index>(r), static_cast<Index>(c - 1)) = cov.number(r, c);
    if (spec.contains("weight_column")) {
      const auto& w = spec["weight_column"];
      if (w.is_number_integer()) job.weight_column = w.get<Index>();
      else job.weight_column = static_cast<Index>(cov.column(w.get<std::string>())) - 1;
      if (job.weight_column < 0) throw ValidationError("weight column cannot be the base id column");
    } else if (std::find(cov.header.begin(), cov.header.end(), "population") != cov.header.end()) {
      job.weight_column = static_cast<Index>(cov.column("population")) - 1;
    }
    if (job.likelihood == LikelihoodFamily::binomial) {
      const std::string name = get_field<std::string>(spec, "trials_column", "population");
      job.trials = job.covariates.col(static_cast<Index>(cov.column(name)) - 1);
    }
  } else if (!spec.contains("latent")) {
    throw ValidationError("job is missing 'covariates' (path, 'covariates_csv' or 'covariates_b64')");
  }

  if (auto it = spec.find("latent"); it != spec.end()) {
    if (!it->is_object()) throw ValidationError("'latent' must be an object");
    job.latent = latent_from_json(*it, job.likelihood, job.trials);
  }
  job.validate();
  return job;
}

MappedGeometry read_geometry(const CsvTable& source_map, const CsvTable& dest_map, const CsvTable& covariates) {
  MappedGeometry g;
  std::map<std::string, Index> base_index;
  for (std::size_t r = 0; r < covariates.rows.size(); ++r) {
    const auto& id = covariates.rows[r][0];
    if (!base_index.emplace(id, static_cast<Index>(r)).second) covariates.fail(r, "duplicate base region '" + id + "'");
    g.base_ids.push_back(id);
  }
  if (g.base_ids.empty()) throw ValidationError(covariates.origin + ": no base regions");
  auto src = read_region_map(source_map, base_index, nullptr);
  auto dst = read_region_map(dest_map, base_index, nullptr);
  g.source_ids = src.region_ids;
  g.dest_ids = dst.region_ids;
  g.source = AggregationMatrix::from_assignment(std::move(src.assignment), static_cast<Index>(g.source_ids.size()));
  g.dest = AggregationMatrix::from_assignment(std::move(dst.assignment), static_cast<Index>(g.dest_ids.size()));
  g.covariate_names.assign(covariates.header.begin() + 1, covariates.header.end());
  g.covariates.resize(static_cast<Index>(covariates.rows.size()), static_cast<Index>(g.covariate_names.size()));
  for (std::size_t r = 0; r < covariates.rows.size(); ++r)
    for (std::size_t c = 1; c < covariates.header.size(); ++c)
      g.covariates(static_cast<Index>(r), static_cast<Index>(c - 1)) = covariates.number(r, c);
  return g;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (v == 0.0) return "0";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string summary_csv(const PredictiveSummary& s) {
  std::string out = "dest_id,expectation,lower,upper,sd\n";
  for (Index i = 0; i < s.expectation.size(); ++i) {
    out += s.dest_ids[static_cast<std::size_t>(i)];
    for (double v : {s.expectation[i], s.lower[i], s.upper[i], s.sd[i]}) {
      out += ',';
      out += format_number(v);
    }
    out += '\n';
  }
  return out;
}

std::string diagnostics_json(const PredictiveSummary& s) { return s.metadata.dump(2) + "\n"; }

std::string correspondence_csv(const SparseMatrix& C, const std::vector<std::string>& source_ids,
                               const std::vector<std::string>& dest_ids) {
  std::string out = "source_id,dest_id,weight\n";
  for (Index s = 0; s < C.outerSize(); ++s)
    for (SparseMatrix::InnerIterator it(C, s); it; ++it) {
      if (it.value() == 0.0) continue;
      out += source_ids[static_cast<std::size_t>(s)] + "," + dest_ids[static_cast<std::size_t>(it.row())] + "," +
             format_number(it.value()) + "\n";
    }
  return out;
}

std::string samples_csv(const Eigen::MatrixXd& samples, const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + ids[i];
  out += '\n';
  for (Index r = 0; r < samples.rows(); ++r) {
    for (Index c = 0; c < samples.cols(); ++c) {
      if (c) out += ',';
      out += format_number(samples(r, c));
    }
    out += '\n';
  }
  return out;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
  std::string out = "scenario,method,r2,rmse,sse,nlp,coverage\n";
  for (const auto& r : rows)
    out += r.scenario + "," + r.method + "," + format_number(r.r2) + "," + format_number(r.rmse) + "," +
           format_number(r.sse) + "," + format_number(r.nlp) + "," + format_number(r.coverage) + "\n";
  return out;
}

SyntheticScenario scenario_from_json(const json& spec) {
  static const std::set<std::string> keys = {"name", "n_base", "n_source", "n_dest", "weights", "intercept",
                                             "likelihood", "noise_variance", "population", "seed", "overlap"};
  if (!spec.is_object()) throw ValidationError("scenario must be a JSON object");
  for (const auto& [key, value] : spec.items())
    if (!keys.count(key)) throw ValidationError("unknown scenario field '" + key + "'");
  SyntheticScenario s;
  s.name = get_field<std::string>(spec, "name", s.name);
  s.n_base = get_field<Index>(spec, "n_base", s.n_base);
  s.n_source = get_field<Index>(spec, "n_source", s.n_source);
  s.n_dest = get_field<Index>(spec, "n_dest", s.n_dest);
  if (spec.contains("weights")) s.weights = vector_field(spec, "weights");
  s.intercept = get_field<double>(spec, "intercept", s.intercept);
  s.likelihood = parse_likelihood(get_field<std::string>(spec, "likelihood", "poisson"));
  s.noise_variance = get_field<double>(spec, "noise_variance", s.noise_variance);
  if (spec.contains("population")) {
    const auto p = get_field<std::vector<double>>(spec, "population", {});
    if (p.size() != 2) throw ValidationError("'population' must be [min, max]");
    s.population_min = p[0];
    s.population_max = p[1];
  }
  const auto seed = get_field<long long>(spec, "seed", 0);
  if (seed < 0) throw ValidationError("'seed' must be nonnegative");
  s.seed = static_cast<std::uint64_t>(seed);
  s.overlap = parse_overlap(get_field<std::string>(spec, "overlap", "misaligned"));
  s.validate();
  return s;
}

std::vector<Polygon> polygons_from_json(const json& spec) {
  const json& list = spec.is_object() && spec.contains("regions") ? spec["regions"] : spec;
  if (!list.is_array()) throw ValidationError("polygons must be an array or {\"regions\": [...]}");
  std::vector<Polygon> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const json& r = list[i];
    Polygon p;
    try {
      p.id = r.contains("id") ? r["id"].get<std::string>() : std::to_string(i);
      for (const auto& v : r.at("ring")) {
        const auto xy = v.get<std::vector<double>>();
        if (xy.size() != 2) throw ValidationError("polygon '" + p.id + "' has a vertex without two coordinates");
        p.ring.push_back({xy[0], xy[1]});
      }
    } catch (const json::exception&) {
      throw ValidationError("polygon " + std::to_string(i) + " is malformed");
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PointRecord> points_from_csv(const CsvTable& t) {
  const std::size_t cx = t.column("x");
  const std::size_t cy = t.column("y");
  const bool has_w = std::find(t.header.begin(), t.header.end(), "weight") != t.header.end();
  const std::size_t cw = has_w ? t.column("weight") : 0;
  std::vector<PointRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    out.push_back({t.number(r, cx), t.number(r, cy), has_w ? t.number(r, cw) : 1.0});
  return out;
}

HierarchyTree hierarchy_from_json(const json& spec) {
  try {
    auto levels = spec.at("levels").get<std::vector<std::string>>();
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& e : spec.at("edges")) {
      const auto pair = e.get<std::vector<std::string>>();
      if (pair.size() != 2) throw ValidationError("hierarchy edges must be [child, parent] pairs");
      edges.emplace_back(pair[0], pair[1]);
    }
    return HierarchyTree(std::move(levels), std::move(edges));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed hierarchy: ") + e.what());
  }
}

}  // namespace reagg::io
