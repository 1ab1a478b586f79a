#pragma once
// Judgment records: verdict parsing, file ingestion, deviation accounting and
// the numeric design matrix used by every downstream analysis.
//
// A verdict cell is in one of three states:
//   * a parsed VerdictLabel;
//   * a deviation: extraction failed, the cell is flagged and reads as Tie (3)
//     in every numeric view;
//   * missing: the judgment was never collected (explicit null). Missing cells
//     are NaN in the raw numeric view and are filled by impute_missing().

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace judgeaudit {

enum class VerdictLabel { MuchBetterA, BetterA, Tie, BetterB, MuchBetterB };

enum class VerdictMarker { FactorParens, OverallBrackets };

inline constexpr std::array<std::string_view, 5> kRubricCriteria{
    "Correctness", "Completeness", "Safety", "Conciseness", "Style"};

inline constexpr std::string_view kOverallKey = "overall";

std::vector<std::string> rubric_criteria();

/// "A>>B", "A>B", "A=B", "B>A", "B>>A".
std::string_view verdict_token(VerdictLabel label) noexcept;
/// Bracketed canonical form, e.g. "[[A>B]]".
std::string verdict_string(VerdictLabel label);
/// Accepts a bare token or its [[..]] / ((..)) form; whitespace inside is ignored.
std::optional<VerdictLabel> verdict_from_string(std::string_view text);

/// Last labeled verdict in `text` for the marker. For FactorParens with a
/// criterion, only "Criterion: ((X))" matches (case-insensitive, optional
/// markdown emphasis around the name). Absence means an extraction failure.
std::optional<VerdictLabel> parse_verdict(std::string_view text, VerdictMarker marker,
                                          std::optional<std::string_view> criterion = std::nullopt);

/// MuchBetterA -> 1 ... MuchBetterB -> 5. Low scores favor assistant A.
double verdict_to_likert(VerdictLabel label) noexcept;

struct JudgmentRecord {
  std::string question_id;
  std::string model_a;
  std::string model_b;
  std::string judge;
  std::string setting;
  std::vector<std::optional<VerdictLabel>> factor_verdicts;  // aligned with JudgmentSet::criteria
  std::optional<VerdictLabel> overall_verdict;
  std::vector<bool> deviation_flags;  // k + 1 entries, the last one is the overall verdict
  std::optional<std::string> raw_text;

  bool factor_flagged(std::size_t j) const { return deviation_flags.at(j); }
  bool overall_flagged() const { return deviation_flags.back(); }
  bool any_flagged() const;

  /// Likert score; 3 for a deviation, NaN for a missing cell.
  double factor_score(std::size_t j) const;
  double overall_score() const;

  /// Everything but the question: identifies one (models, judge, setting) series.
  std::string observation_id() const;
};

struct JudgmentSet {
  std::vector<JudgmentRecord> records;
  std::vector<std::string> criteria = rubric_criteria();
  double score_range = 4.0;

  std::size_t k() const noexcept { return criteria.size(); }
  bool empty() const noexcept { return records.empty(); }
  std::size_t missing_cells() const;
  /// Throws InputError when a record disagrees with the criteria list.
  void validate() const;
};

struct SampleMatrix {
  Eigen::MatrixXd factors;  // m x k
  Eigen::VectorXd overall;  // m
  std::vector<std::string> question_ids;
  std::vector<std::string> observation_ids;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> imputed_mask;  // m x (k + 1)
  std::vector<std::string> criteria;

  Eigen::Index rows() const noexcept { return factors.rows(); }
  Eigen::Index k() const noexcept { return factors.cols(); }
  SampleMatrix select_rows(std::span<const std::size_t> rows) const;
};

enum class JudgmentFormat { JsonLines, Csv };

/// JsonLines for .jsonl/.json/.ndjson, Csv for .csv; InputError otherwise.
JudgmentFormat format_from_path(const std::filesystem::path& path);

JudgmentSet load_judgments(const std::filesystem::path& path, JudgmentFormat format,
                           const std::vector<std::string>& criteria = rubric_criteria());
JudgmentSet parse_jsonl(std::istream& in, const std::vector<std::string>& criteria = rubric_criteria());
JudgmentSet parse_csv(std::istream& in, const std::vector<std::string>& criteria = rubric_criteria());

nlohmann::json record_to_json(const JudgmentRecord& record, const std::vector<std::string>& criteria);
JudgmentRecord record_from_json(const nlohmann::json& row, const std::vector<std::string>& criteria,
                                std::size_t row_number);
void write_jsonl(const JudgmentSet& set, std::ostream& out);

/// Re-extracts every verdict from raw_text; cells without a match become deviations.
void parse_raw_verdicts(JudgmentRecord& record, const std::vector<std::string>& criteria);

bool valid_utf8(std::string_view bytes) noexcept;

enum class GroupKey { Judge, Setting };

struct DeviationRow {
  std::vector<std::string> group;
  std::size_t total = 0;
  std::vector<std::size_t> flagged;  // per criterion
  std::size_t overall_flagged = 0;
  std::vector<double> percent;  // 100 * flagged / total
  double overall_percent = 0.0;
  double average = 0.0;  // mean of the per-criterion percentages
};

struct DeviationTable {
  std::vector<std::string> group_by;
  std::vector<std::string> criteria;
  std::vector<DeviationRow> rows;

  std::size_t total_flagged() const;
};

DeviationTable deviation_rates(const JudgmentSet& set, std::span<const GroupKey> group_by);

/// One row per record. Deviations read as 3; missing cells raise InputError
/// (run impute_missing first).
SampleMatrix build_sample_matrix(const JudgmentSet& set);

struct ImputationResult {
  std::vector<SampleMatrix> matrices;
  std::size_t dropped_rows = 0;  // rows with every cell missing
};

/// Chained-equation imputation: each incomplete column is regressed on the
/// others and filled with prediction plus residual noise, cycling until the
/// fill stabilises. Imputation t draws from derived_rng(seed, t).
ImputationResult impute_missing(const JudgmentSet& set, int imputations, std::uint64_t seed,
                                unsigned jobs = 1);

/// Records without any deviation flag.
JudgmentSet drop_flagged_records(const JudgmentSet& set);

}  // namespace judgeaudit
