#include "judgeaudit/judgment.hpp"

#include "judgeaudit/error.hpp"
#include "judgeaudit/parallel.hpp"
#include "judgeaudit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <cctype>
#include <ostream>
#include <random>
#include <regex>
#include <sstream>

namespace judgeaudit {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uintmax_t kMaxFileBytes = 2ull * 1024 * 1024 * 1024;

constexpr std::array<std::string_view, 5> kTokens{"A>>B", "A>B", "A=B", "B>A", "B>>A"};

const char* const kTokenPattern = R"((A\s*>\s*>\s*B|A\s*>\s*B|A\s*=\s*B|B\s*>\s*A|B\s*>\s*>\s*A))";

std::string regex_escape(std::string_view s) {
  static const std::string special = R"(\^$.|?*+()[]{})";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string row_error(std::size_t row, std::string_view field, std::string_view msg) {
  return "row " + std::to_string(row) + ": field '" + std::string(field) + "': " + std::string(msg);
}

void check_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw InputError("cannot open " + path.string());
  const auto size = std::filesystem::file_size(path, ec);
  if (!ec && size > kMaxFileBytes) {
    throw InputError(path.string() + " is larger than 2 GiB; split it into shards and ingest them one at a time");
  }
}

enum class CellState { Verdict, Deviation, Missing };

struct Cell {
  CellState state = CellState::Deviation;
  std::optional<VerdictLabel> label;
};

Cell cell_from_json(const json& value, std::size_t row, const std::string& field) {
  if (value.is_null()) return {CellState::Missing, std::nullopt};
  if (!value.is_string()) throw InputError(row_error(row, field, "expected a verdict string or null"));
  const auto label = verdict_from_string(value.get<std::string>());
  if (!label) return {CellState::Deviation, std::nullopt};
  return {CellState::Verdict, label};
}

Cell cell_from_csv(std::string_view text) {
  std::string t(text);
  t.erase(std::remove_if(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c); }), t.end());
  if (t.empty()) return {CellState::Deviation, std::nullopt};
  std::string lower = t;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "na" || lower == "null" || lower == "nan") return {CellState::Missing, std::nullopt};
  const auto label = verdict_from_string(t);
  if (!label) return {CellState::Deviation, std::nullopt};
  return {CellState::Verdict, label};
}

void apply_cell(JudgmentRecord& r, std::size_t slot, std::size_t k, const Cell& cell) {
  std::optional<VerdictLabel>& target = slot < k ? r.factor_verdicts[slot] : r.overall_verdict;
  target = cell.label;
  if (cell.state == CellState::Deviation) r.deviation_flags[slot] = true;
}

std::size_t flag_slot(std::string_view name, const std::vector<std::string>& criteria) {
  if (name == kOverallKey) return criteria.size();
  const auto it = std::find(criteria.begin(), criteria.end(), name);
  return it == criteria.end() ? std::string::npos : static_cast<std::size_t>(it - criteria.begin());
}

std::string unknown_criterion(std::string_view name, const std::vector<std::string>& criteria) {
  return "unknown criterion '" + std::string(name) + "'; expected one of " + join(criteria, ", ");
}

std::string require_string(const json& row, const char* field, std::size_t row_number) {
  const auto it = row.find(field);
  if (it == row.end() || it->is_null()) throw InputError(row_error(row_number, field, "missing"));
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw InputError(row_error(row_number, field, "expected a string"));
}

// RFC 4180 record reader; quoted fields may contain separators and newlines.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++line;
      if (!field.empty() && field.back() == '\r') field.pop_back();
      fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes) throw InputError("row " + std::to_string(line) + ": unterminated quoted field");
  if (!any) return false;
  if (!field.empty() && field.back() == '\r') field.pop_back();
  fields.push_back(std::move(field));
  ++line;
  return true;
}

JudgmentRecord empty_record(std::size_t k) {
  JudgmentRecord r;
  r.factor_verdicts.assign(k, std::nullopt);
  r.deviation_flags.assign(k + 1, false);
  return r;
}

}  // namespace

std::vector<std::string> rubric_criteria() { return {kRubricCriteria.begin(), kRubricCriteria.end()}; }

std::string_view verdict_token(VerdictLabel label) noexcept { return kTokens[static_cast<std::size_t>(label)]; }

std::string verdict_string(VerdictLabel label) { return "[[" + std::string(verdict_token(label)) + "]]"; }

std::optional<VerdictLabel> verdict_from_string(std::string_view text) {
  std::string t;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  if (t.size() >= 4 && ((t.starts_with("[[") && t.ends_with("]]")) || (t.starts_with("((") && t.ends_with("))")))) {
    t = t.substr(2, t.size() - 4);
  }
  for (std::size_t i = 0; i < kTokens.size(); ++i) {
    if (t == kTokens[i]) return static_cast<VerdictLabel>(i);
  }
  return std::nullopt;
}

std::optional<VerdictLabel> parse_verdict(std::string_view text, VerdictMarker marker,
                                          std::optional<std::string_view> criterion) {
  std::string pattern;
  auto flags = std::regex::ECMAScript;
  if (marker == VerdictMarker::OverallBrackets) {
    pattern = std::string(R"(\[\[\s*)") + kTokenPattern + R"(\s*\]\])";
  } else if (criterion) {
    pattern = std::string(R"((?:^|[^A-Za-z])[*_\s]*)") + regex_escape(*criterion) + R"([*_\s]*:[*_\s]*\(\(\s*)" +
              kTokenPattern + R"(\s*\)\))";
    flags |= std::regex::icase;
  } else {
    pattern = std::string(R"(\(\(\s*)") + kTokenPattern + R"(\s*\)\))";
  }
  const std::regex re(pattern, flags);
  std::optional<VerdictLabel> last;
  const std::string haystack(text);
  for (auto it = std::sregex_iterator(haystack.begin(), haystack.end(), re); it != std::sregex_iterator(); ++it) {
    if (auto label = verdict_from_string((*it)[1].str())) last = label;
  }
  return last;
}

double verdict_to_likert(VerdictLabel label) noexcept { return static_cast<double>(static_cast<int>(label) + 1); }

bool JudgmentRecord::any_flagged() const {
  return std::any_of(deviation_flags.begin(), deviation_flags.end(), [](bool b) { return b; });
}

double JudgmentRecord::factor_score(std::size_t j) const {
  if (deviation_flags.at(j)) return 3.0;
  const auto& v = factor_verdicts.at(j);
  return v ? verdict_to_likert(*v) : kNaN;
}

double JudgmentRecord::overall_score() const {
  if (overall_flagged()) return 3.0;
  return overall_verdict ? verdict_to_likert(*overall_verdict) : kNaN;
}

std::string JudgmentRecord::observation_id() const {
  return model_a + "|" + model_b + "|" + judge + "|" + setting;
}

std::size_t JudgmentSet::missing_cells() const {
  std::size_t n = 0;
  for (const auto& r : records) {
    for (std::size_t j = 0; j < k(); ++j) n += std::isnan(r.factor_score(j)) ? 1 : 0;
    n += std::isnan(r.overall_score()) ? 1 : 0;
  }
  return n;
}

void JudgmentSet::validate() const {
  if (!(score_range > 0.0)) throw InputError("score_range must be positive");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.factor_verdicts.size() != k() || r.deviation_flags.size() != k() + 1) {
      throw InputError("record " + std::to_string(i + 1) + " does not match the criteria list (" + join(criteria, ", ") + ")");
    }
  }
}

SampleMatrix SampleMatrix::select_rows(std::span<const std::size_t> rows) const {
  SampleMatrix out;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.factors.resize(n, k());
  out.overall.resize(n);
  out.imputed_mask.resize(n, imputed_mask.cols());
  out.criteria = criteria;
  out.question_ids.reserve(rows.size());
  out.observation_ids.reserve(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto src = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    out.factors.row(i) = factors.row(src);
    out.overall(i) = overall(src);
    out.imputed_mask.row(i) = imputed_mask.row(src);
    out.question_ids.push_back(question_ids[static_cast<std::size_t>(src)]);
    out.observation_ids.push_back(observation_ids[static_cast<std::size_t>(src)]);
  }
  return out;
}

JudgmentFormat format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") return JudgmentFormat::JsonLines;
  if (ext == ".csv") return JudgmentFormat::Csv;
  throw InputError("cannot infer judgment format from '" + path.string() + "' (use .jsonl or .csv)");
}

JudgmentRecord record_from_json(const json& row, const std::vector<std::string>& criteria, std::size_t row_number) {
  if (!row.is_object()) throw InputError("row " + std::to_string(row_number) + ": expected a JSON object");
  const std::size_t k = criteria.size();
  JudgmentRecord r = empty_record(k);
  r.question_id = require_string(row, "question_id", row_number);
  r.model_a = require_string(row, "model_a", row_number);
  r.model_b = require_string(row, "model_b", row_number);
  r.judge = require_string(row, "judge", row_number);
  r.setting = require_string(row, "setting", row_number);

  std::vector<bool> seen(k, false);
  if (const auto it = row.find("factor_verdicts"); it != row.end() && !it->is_null()) {
    if (!it->is_object()) throw InputError(row_error(row_number, "factor_verdicts", "expected an object"));
    for (const auto& [name, value] : it->items()) {
      const auto slot = flag_slot(name, criteria);
      if (slot == std::string::npos || slot == k) {
        throw InputError(row_error(row_number, "factor_verdicts." + name, unknown_criterion(name, criteria)));
      }
      apply_cell(r, slot, k, cell_from_json(value, row_number, "factor_verdicts." + name));
      seen[slot] = true;
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (!seen[j]) r.deviation_flags[j] = true;
  }
  if (const auto it = row.find("overall_verdict"); it != row.end()) {
    apply_cell(r, k, k, cell_from_json(*it, row_number, "overall_verdict"));
  } else {
    r.deviation_flags[k] = true;
  }
  if (const auto it = row.find("deviation_flags"); it != row.end() && !it->is_null()) {
    if (!it->is_array()) throw InputError(row_error(row_number, "deviation_flags", "expected an array"));
    for (const auto& name : *it) {
      if (!name.is_string()) throw InputError(row_error(row_number, "deviation_flags", "expected names"));
      const auto slot = flag_slot(name.get<std::string>(), criteria);
      if (slot == std::string::npos) {
        throw InputError(row_error(row_number, "deviation_flags", unknown_criterion(name.get<std::string>(), criteria)));
      }
      r.deviation_flags[slot] = true;
      (slot < k ? r.factor_verdicts[slot] : r.overall_verdict).reset();
    }
  }
  if (const auto it = row.find("raw_text"); it != row.end() && !it->is_null()) {
    if (!it->is_string()) throw InputError(row_error(row_number, "raw_text", "expected a string"));
    r.raw_text = it->get<std::string>();
  }
  return r;
}

json record_to_json(const JudgmentRecord& r, const std::vector<std::string>& criteria) {
  json row;
  row["question_id"] = r.question_id;
  row["model_a"] = r.model_a;
  row["model_b"] = r.model_b;
  row["judge"] = r.judge;
  row["setting"] = r.setting;
  json factors = json::object();
  json flags = json::array();
  for (std::size_t j = 0; j < criteria.size(); ++j) {
    if (r.factor_flagged(j)) {
      flags.push_back(criteria[j]);
    } else {
      factors[criteria[j]] = r.factor_verdicts[j] ? json(verdict_string(*r.factor_verdicts[j])) : json(nullptr);
    }
  }
  row["factor_verdicts"] = std::move(factors);
  if (r.overall_flagged()) {
    flags.push_back(std::string(kOverallKey));
  } else {
    row["overall_verdict"] = r.overall_verdict ? json(verdict_string(*r.overall_verdict)) : json(nullptr);
  }
  row["deviation_flags"] = std::move(flags);
  if (r.raw_text) row["raw_text"] = *r.raw_text;
  return row;
}

void write_jsonl(const JudgmentSet& set, std::ostream& out) {
  for (const auto& r : set.records) out << record_to_json(r, set.criteria).dump() << '\n';
}

JudgmentSet parse_jsonl(std::istream& in, const std::vector<std::string>& criteria) {
  JudgmentSet set;
  set.criteria = criteria;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    if (!valid_utf8(line)) throw InputError("row " + std::to_string(row) + ": not valid UTF-8");
    json parsed;
    try {
      parsed = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError("row " + std::to_string(row) + ": invalid JSON (" + e.what() + ")");
    }
    set.records.push_back(record_from_json(parsed, criteria, row));
  }
  return set;
}

JudgmentSet parse_csv(std::istream& in, const std::vector<std::string>& criteria) {
  static const std::vector<std::string> meta{"question_id", "model_a", "model_b", "judge", "setting"};
  JudgmentSet set;
  set.criteria = criteria;
  const std::size_t k = criteria.size();

  std::vector<std::string> header;
  std::size_t line = 0;
  if (!read_csv_record(in, header, line)) return set;
  if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);

  // column -> slot; meta columns use negative codes
  enum : long { kRaw = -100, kFlags = -101 };
  std::vector<long> role(header.size());
  std::vector<bool> have_slot(k + 1, false);
  std::vector<bool> have_meta(meta.size(), false);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& name = header[c];
    if (const auto m = std::find(meta.begin(), meta.end(), name); m != meta.end()) {
      role[c] = -1 - static_cast<long>(m - meta.begin());
      have_meta[static_cast<std::size_t>(m - meta.begin())] = true;
    } else if (name == "overall" || name == "overall_verdict") {
      role[c] = static_cast<long>(k);
      have_slot[k] = true;
    } else if (name == "raw_text") {
      role[c] = kRaw;
    } else if (name == "deviation_flags") {
      role[c] = kFlags;
    } else {
      const auto slot = flag_slot(name, criteria);
      if (slot == std::string::npos || slot == k) {
        throw InputError("row 1: field '" + name + "': " + unknown_criterion(name, criteria));
      }
      role[c] = static_cast<long>(slot);
      have_slot[slot] = true;
    }
  }
  for (std::size_t m = 0; m < meta.size(); ++m) {
    if (!have_meta[m]) throw InputError("row 1: field '" + meta[m] + "': missing column");
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (!have_slot[j]) throw InputError("row 1: field '" + criteria[j] + "': missing column");
  }

  std::vector<std::string> fields;
  while (true) {
    const std::size_t row = line + 1;
    if (!read_csv_record(in, fields, line)) break;
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() != header.size()) {
      throw InputError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    JudgmentRecord r = empty_record(k);
    if (!have_slot[k]) r.deviation_flags[k] = true;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (!valid_utf8(fields[c])) throw InputError(row_error(row, header[c], "not valid UTF-8"));
      const long ro = role[c];
      if (ro >= 0) {
        apply_cell(r, static_cast<std::size_t>(ro), k, cell_from_csv(fields[c]));
      } else if (ro == kRaw) {
        if (!fields[c].empty()) r.raw_text = fields[c];
      } else if (ro == kFlags) {
        std::stringstream ss(fields[c]);
        std::string name;
        while (std::getline(ss, name, ';')) {
          if (name.empty()) continue;
          const auto slot = flag_slot(name, criteria);
          if (slot == std::string::npos) throw InputError(row_error(row, "deviation_flags", unknown_criterion(name, criteria)));
          r.deviation_flags[slot] = true;
          (slot < k ? r.factor_verdicts[slot] : r.overall_verdict).reset();
        }
      } else {
        const auto m = static_cast<std::size_t>(-1 - ro);
        if (fields[c].empty()) throw InputError(row_error(row, meta[m], "missing"));
        std::string* dst[] = {&r.question_id, &r.model_a, &r.model_b, &r.judge, &r.setting};
        *dst[m] = fields[c];
      }
    }
    set.records.push_back(std::move(r));
  }
  return set;
}

JudgmentSet load_judgments(const std::filesystem::path& path, JudgmentFormat format,
                           const std::vector<std::string>& criteria) {
  check_file(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  JudgmentSet set = format == JudgmentFormat::JsonLines ? parse_jsonl(in, criteria) : parse_csv(in, criteria);
  if (set.empty()) throw InputError(path.string() + " contains no judgment records");
  return set;
}

void parse_raw_verdicts(JudgmentRecord& record, const std::vector<std::string>& criteria) {
  const std::string_view text = record.raw_text ? std::string_view(*record.raw_text) : std::string_view();
  const std::size_t k = criteria.size();
  record.factor_verdicts.assign(k, std::nullopt);
  record.deviation_flags.assign(k + 1, false);
  for (std::size_t j = 0; j < k; ++j) {
    record.factor_verdicts[j] = parse_verdict(text, VerdictMarker::FactorParens, criteria[j]);
    record.deviation_flags[j] = !record.factor_verdicts[j];
  }
  record.overall_verdict = parse_verdict(text, VerdictMarker::OverallBrackets);
  record.deviation_flags[k] = !record.overall_verdict;
}

bool valid_utf8(std::string_view bytes) noexcept {
  std::size_t i = 0;
  const auto n = bytes.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t t = 1; t < len; ++t) {
      const auto cc = static_cast<unsigned char>(bytes[i + t]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlong forms, surrogates, out of range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += len;
  }
  return true;
}

std::size_t DeviationTable::total_flagged() const {
  std::size_t n = 0;
  for (const auto& row : rows) {
    for (auto f : row.flagged) n += f;
    n += row.overall_flagged;
  }
  return n;
}

DeviationTable deviation_rates(const JudgmentSet& set, std::span<const GroupKey> group_by) {
  if (set.empty()) throw InputError("deviation_rates: empty judgment set");
  const std::size_t k = set.k();
  DeviationTable table;
  table.criteria = set.criteria;
  for (auto key : group_by) table.group_by.emplace_back(key == GroupKey::Judge ? "judge" : "setting");

  std::map<std::vector<std::string>, DeviationRow> groups;
  for (const auto& r : set.records) {
    std::vector<std::string> key;
    for (auto g : group_by) key.push_back(g == GroupKey::Judge ? r.judge : r.setting);
    auto& row = groups[key];
    if (row.flagged.empty()) {
      row.group = key;
      row.flagged.assign(k, 0);
    }
    ++row.total;
    for (std::size_t j = 0; j < k; ++j) row.flagged[j] += r.factor_flagged(j) ? 1 : 0;
    row.overall_flagged += r.overall_flagged() ? 1 : 0;
  }
  for (auto& [key, row] : groups) {
    if (row.total == 0) continue;
    const double total = static_cast<double>(row.total);
    row.percent.resize(k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row.percent[j] = 100.0 * static_cast<double>(row.flagged[j]) / total;
      sum += row.percent[j];
    }
    row.average = k ? sum / static_cast<double>(k) : 0.0;
    row.overall_percent = 100.0 * static_cast<double>(row.overall_flagged) / total;
    table.rows.push_back(std::move(row));
  }
  return table;
}

namespace {

// m x (k + 1) numeric view; NaN marks missing cells.
Eigen::MatrixXd observed_matrix(const JudgmentSet& set) {
  const auto m = static_cast<Eigen::Index>(set.records.size());
  const auto k = static_cast<Eigen::Index>(set.k());
  Eigen::MatrixXd y(m, k + 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& r = set.records[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < k; ++j) y(i, j) = r.factor_score(static_cast<std::size_t>(j));
    y(i, k) = r.overall_score();
  }
  return y;
}

SampleMatrix to_sample(const JudgmentSet& set, const Eigen::MatrixXd& y, const std::vector<std::size_t>& rows,
                       const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  const auto k = static_cast<Eigen::Index>(set.k());
  SampleMatrix s;
  s.criteria = set.criteria;
  s.factors = y.leftCols(k);
  s.overall = y.col(k);
  s.imputed_mask = mask;
  for (auto i : rows) {
    s.question_ids.push_back(set.records[i].question_id);
    s.observation_ids.push_back(set.records[i].observation_id());
  }
  return s;
}

}  // namespace

SampleMatrix build_sample_matrix(const JudgmentSet& set) {
  if (set.empty()) throw InputError("build_sample_matrix: empty judgment set");
  set.validate();
  const Eigen::MatrixXd y = observed_matrix(set);
  if (y.hasNaN()) {
    throw InputError("judgment set has " + std::to_string(set.missing_cells()) +
                     " missing cells; impute them before building a sample matrix");
  }
  std::vector<std::size_t> rows(set.records.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return to_sample(set, y, rows, Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(y.rows(), y.cols(), false));
}

ImputationResult impute_missing(const JudgmentSet& set, int imputations, std::uint64_t seed, unsigned jobs) {
  if (imputations < 1) throw InputError("impute_missing: imputations must be >= 1");
  if (set.empty()) throw InputError("impute_missing: empty judgment set");
  set.validate();

  const Eigen::MatrixXd all = observed_matrix(set);
  std::vector<std::size_t> keep;
  for (Eigen::Index i = 0; i < all.rows(); ++i) {
    if (!all.row(i).array().isNaN().all()) keep.push_back(static_cast<std::size_t>(i));
  }
  ImputationResult result;
  result.dropped_rows = set.records.size() - keep.size();
  if (keep.empty()) throw InputError("impute_missing: every record is fully missing");

  const auto m = static_cast<Eigen::Index>(keep.size());
  const Eigen::Index p = all.cols();
  Eigen::MatrixXd base(m, p);
  for (Eigen::Index i = 0; i < m; ++i) base.row(i) = all.row(static_cast<Eigen::Index>(keep[static_cast<std::size_t>(i)]));
  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> missing = base.array().isNaN();

  if (!missing.any()) {
    result.matrices.assign(static_cast<std::size_t>(imputations), to_sample(set, base, keep, missing));
    return result;
  }

  constexpr int kCycles = 10;
  result.matrices.resize(static_cast<std::size_t>(imputations));
  parallel_for(result.matrices.size(), jobs, [&](std::size_t t) {
    auto rng = derived_rng(seed, t);
    std::normal_distribution<double> noise(0.0, 1.0);
    Eigen::MatrixXd y = base;

    std::vector<std::vector<Eigen::Index>> observed_rows(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index i = 0; i < m; ++i) {
        if (!missing(i, j)) observed_rows[static_cast<std::size_t>(j)].push_back(i);
      }
    }
    // Start from random draws of each column's observed values.
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& obs = observed_rows[static_cast<std::size_t>(j)];
      for (Eigen::Index i = 0; i < m; ++i) {
        if (!missing(i, j)) continue;
        if (obs.empty()) {
          y(i, j) = 3.0;
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, obs.size() - 1);
          y(i, j) = base(obs[pick(rng)], j);
        }
      }
    }

    for (int cycle = 0; cycle < kCycles; ++cycle) {
      for (Eigen::Index j = 0; j < p; ++j) {
        if (!missing.col(j).any()) continue;
        const auto& obs = observed_rows[static_cast<std::size_t>(j)];
        if (obs.empty()) continue;

        Eigen::MatrixXd others(m, p - 1);
        others << y.leftCols(j), y.rightCols(p - 1 - j);
        const auto n_obs = static_cast<Eigen::Index>(obs.size());
        Eigen::MatrixXd x_obs(n_obs, p - 1);
        Eigen::VectorXd y_obs(n_obs);
        for (Eigen::Index r = 0; r < n_obs; ++r) {
          x_obs.row(r) = others.row(obs[static_cast<std::size_t>(r)]);
          y_obs(r) = y(obs[static_cast<std::size_t>(r)], j);
        }
        const double mu = y_obs.mean();
        const double sd = n_obs > 1 ? std::sqrt((y_obs.array() - mu).square().sum() / static_cast<double>(n_obs - 1)) : 0.0;

        std::optional<stats::OlsFit> fit;
        if (n_obs > p && sd > 0.0) {
          try {
            fit = stats::ols(x_obs, y_obs);
          } catch (const NumericError&) {
            fit.reset();
          }
        }
        double sigma = sd;
        if (fit) {
          const auto dof = static_cast<double>(std::max<Eigen::Index>(n_obs - fit->rank, 1));
          sigma = std::sqrt(fit->sse / dof);
        }
        for (Eigen::Index i = 0; i < m; ++i) {
          if (!missing(i, j)) continue;
          double value = fit ? fit->coefficients(0) + others.row(i).dot(fit->coefficients.tail(p - 1)) : mu;
          value += sigma * noise(rng);
          y(i, j) = std::clamp(value, 1.0, 5.0);
        }
      }
    }
    result.matrices[t] = to_sample(set, y, keep, missing);
  });
  return result;
}

JudgmentSet drop_flagged_records(const JudgmentSet& set) {
  JudgmentSet out;
  out.criteria = set.criteria;
  out.score_range = set.score_range;
  std::copy_if(set.records.begin(), set.records.end(), std::back_inserter(out.records),
               [](const JudgmentRecord& r) { return !r.any_flagged(); });
  return out;
}

}  // namespace judgeaudit
