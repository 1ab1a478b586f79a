#pragma once
// Settings files, the end-to-end audit pipeline and report rendering.

#include "judgeaudit/judgment.hpp"
#include "judgeaudit/psychometric.hpp"
#include "judgeaudit/ranking.hpp"
#include "judgeaudit/schematic.hpp"
#include "judgeaudit/stats.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace judgeaudit::report {

enum class CollapseMode { Auto, On, Off };

struct MetricOptions {
  int bootstrap_iterations = 100;
  std::optional<int> clusters;  // nullopt: choose by silhouette; 0: no context stability
  ranking::TiePolicy tie_policy = ranking::TiePolicy::HalfWins;
  bool cs_ordered_pairs = false;
  int imputations = 5;
  std::uint64_t seed = 0;
  int polynomial_degree = 2;
  bool exclude_deviations = false;
  CollapseMode collapse = CollapseMode::Auto;
};

struct SettingSpec {
  std::string name = "default";
  std::string judge;  // empty: every judge in the data
  std::vector<std::string> rubric = rubric_criteria();
  std::vector<std::string> questions;  // empty: all
  std::vector<std::string> models;     // empty: all
  std::string baseline;                // empty: most frequent model_a
  MetricOptions metrics;
};

/// YAML (or JSON, which is YAML) file to a JSON value. Plain scalars become
/// numbers or booleans where they parse as such.
nlohmann::json load_structured(const std::filesystem::path& path);
nlohmann::json parse_structured(const std::string& text);

SettingSpec setting_from_json(const nlohmann::json& j);
SettingSpec load_setting(const std::filesystem::path& path);
nlohmann::json to_json(const SettingSpec& setting);

struct GroupVariance {
  std::string judge;
  std::string setting;
  std::size_t rows = 0;
  double r2_linear = 0.0;
  double r2_polynomial = 0.0;
  double r2_schematic = 0.0;
};

struct AuditReport {
  SettingSpec setting;
  std::string tool_version;
  std::map<std::string, std::string> input_digests;
  std::string baseline;
  std::size_t records = 0;
  std::size_t missing_cells = 0;
  std::size_t dropped_rows = 0;
  schematic::SchematicReport schematic;
  std::vector<GroupVariance> variance;
  psychometric::PsychometricReport psychometric;
  stats::CorrelationMatrix correlations;
  DeviationTable deviations;
  ranking::RatingTable ranking;
  std::optional<ranking::CollapseReport> collapse;
  nlohmann::json per_imputation = nlohmann::json::array();
  std::vector<std::string> warnings;
};

struct AuditOptions {
  unsigned jobs = 1;
  std::optional<std::filesystem::path> setting_path;  // digested when given
};

/// load -> impute -> schematic -> psychometric -> correlations -> deviations
/// -> ranking -> collapse. A failing stage aborts with its name in the message.
AuditReport run_audit(const SettingSpec& setting, const std::filesystem::path& data, const AuditOptions& options = {});

nlohmann::json to_json(const AuditReport& report);
nlohmann::json to_json(const DeviationTable& table);
nlohmann::json to_json(const stats::CorrelationMatrix& matrix, const std::vector<std::string>& criteria);

/// Sorted keys, two-space indent, LF, floats at 6 significant digits,
/// non-finite numbers as null. Ends with a newline.
std::string canonical_json(const nlohmann::json& value);

/// Markdown rendering of a report document (the to_json form).
std::string render_markdown(const nlohmann::json& report);

/// variance_decomposition.csv, correlations.csv, loadings.csv, collapse.csv.
std::vector<std::filesystem::path> emit_plot_data(const nlohmann::json& report, const std::filesystem::path& out_dir);

std::string deviation_csv(const DeviationTable& table);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Writes through a temporary file in the same directory and renames it into place.
void write_atomic(const std::filesystem::path& path, std::string_view content);

/// Name derived from the input digests, so identical inputs map to one report.
std::string content_address(const AuditReport& report, std::string_view extension);

std::string tool_version();

}  // namespace judgeaudit::report
