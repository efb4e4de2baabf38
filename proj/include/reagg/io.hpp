#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "reagg/aggregation.hpp"
#include "reagg/geometry.hpp"
#include "reagg/pipeline.hpp"
#include "reagg/validation.hpp"

namespace reagg::io {

// Header plus rows; `lines` holds the 1-based source line of each row.
struct CsvTable {
  std::string origin;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;

  std::size_t column(const std::string& name) const;  // throws if absent
  double number(std::size_t row, std::size_t col) const;
  [[noreturn]] void fail(std::size_t row, const std::string& message) const;
};

CsvTable parse_csv(const std::string& text, const std::string& origin);
CsvTable read_csv(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
std::string decode_base64(const std::string& text);

// Job JSON: each of source_counts, covariates, source_map and dest_map is a
// CSV path, or inline text under "<field>_csv", or base64 under "<field>_b64".
ReaggregationJob job_from_json(const nlohmann::json& spec,
                               const std::filesystem::path& base_dir = {});
nlohmann::json read_json(const std::filesystem::path& path);

// The region ids a job was built from, kept for output.
struct RegionLabels {
  std::vector<std::string> base;
  std::vector<std::string> source;
  std::vector<std::string> dest;
};
RegionLabels job_labels(const nlohmann::json& spec, const std::filesystem::path& base_dir = {});

// Region maps and covariates without observations (correspondence export).
struct MappedGeometry {
  std::vector<std::string> base_ids;
  std::vector<std::string> source_ids;  // first appearance in the source map
  std::vector<std::string> dest_ids;
  AggregationMatrix source;
  AggregationMatrix dest;
  Eigen::MatrixXd covariates;
  std::vector<std::string> covariate_names;
};
MappedGeometry read_geometry(const CsvTable& source_map, const CsvTable& dest_map, const CsvTable& covariates);

std::string format_number(double v);
std::string summary_csv(const PredictiveSummary& s);
std::string diagnostics_json(const PredictiveSummary& s);
std::string correspondence_csv(const SparseMatrix& C, const std::vector<std::string>& source_ids,
                               const std::vector<std::string>& dest_ids);
std::string samples_csv(const Eigen::MatrixXd& samples, const std::vector<std::string>& ids);
std::string benchmark_csv(const std::vector<BenchmarkRow>& rows);

SyntheticScenario scenario_from_json(const nlohmann::json& spec);

std::vector<Polygon> polygons_from_json(const nlohmann::json& spec);
std::vector<PointRecord> points_from_csv(const CsvTable& table);
HierarchyTree hierarchy_from_json(const nlohmann::json& spec);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace reagg::io
