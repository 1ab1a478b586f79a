#include "judgeaudit/report.hpp"

#include "judgeaudit/error.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unistd.h>

#ifndef JUDGEAUDIT_VERSION
#define JUDGEAUDIT_VERSION "0.0.0"
#endif

namespace judgeaudit::report {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void rethrow_as(const Error& e, const std::string& message) {
  switch (e.kind()) {
    case ErrorKind::Input: throw InputError(message);
    case ErrorKind::Numeric: throw NumericError(message);
    case ErrorKind::Network: throw NetworkError(message);
  }
  throw InputError(message);
}

template <class F>
auto stage(const char* name, F&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    rethrow_as(e, std::string("audit stage '") + name + "': " + e.what());
  }
}

json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& item : node) arr.push_back(yaml_to_json(item));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Scalar: break;
  }
  const std::string text = node.Scalar();
  if (node.Tag() == "!") return text;  // quoted
  if (text == "true" || text == "True") return true;
  if (text == "false" || text == "False") return false;
  if (text == "null" || text == "~") return nullptr;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  return text;
}

std::vector<std::string> string_list(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  try {
    return j.at(key).get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw InputError(std::string("setting: '") + key + "' must be a list of strings");
  }
}

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw InputError(where + ": unknown key '" + key + "'");
  }
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    rows.push_back(row);
  }
  return rows;
}

double number_or_nan(const json& j) { return j.is_number() ? j.get<double>() : kNaN; }

std::string fmt(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "NA" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt(const json& j) {
  if (j.is_number()) return fmt(j.get<double>());
  if (j.is_string()) return j.get<std::string>();
  if (j.is_null()) return "NA";
  return j.dump();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void dump_canonical(const json& v, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
  switch (v.type()) {
    case json::value_t::object: {
      if (v.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {  // nlohmann objects iterate in key order
        if (!first) out += ",\n";
        first = false;
        out += inner + json(it.key()).dump() + ": ";
        dump_canonical(it.value(), out, indent + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (v.empty()) {
        out += "[]";
        return;
      }
      const bool flat = std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_primitive(); });
      if (flat) {
        out += "[";
        for (std::size_t i = 0; i < v.size(); ++i) {
          if (i) out += ", ";
          dump_canonical(v[i], out, indent + 1);
        }
        out += "]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",\n";
        out += inner;
        dump_canonical(v[i], out, indent + 1);
      }
      out += "\n" + pad + "]";
      return;
    }
    case json::value_t::number_float: {
      const double d = v.get<double>();
      if (!std::isfinite(d)) {
        out += "null";
        return;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", d == 0.0 ? 0.0 : d);
      out += buf;
      return;
    }
    default: out += v.dump(); return;
  }
}

JudgmentSet filter_set(const JudgmentSet& in, const SettingSpec& s) {
  const std::set<std::string> questions(s.questions.begin(), s.questions.end());
  const std::set<std::string> models(s.models.begin(), s.models.end());
  JudgmentSet out;
  out.criteria = in.criteria;
  out.score_range = in.score_range;
  for (const auto& r : in.records) {
    if (!s.judge.empty() && r.judge != s.judge) continue;
    if (!questions.empty() && !questions.contains(r.question_id)) continue;
    if (!models.empty() && (!models.contains(r.model_a) || !models.contains(r.model_b))) continue;
    out.records.push_back(r);
  }
  return out;
}

// Judge and setting are the last two fields of an observation id.
std::pair<std::string, std::string> judge_and_setting(const std::string& observation) {
  const auto last = observation.rfind('|');
  const auto prev = last == std::string::npos || last == 0 ? std::string::npos : observation.rfind('|', last - 1);
  if (prev == std::string::npos) return {"", ""};
  return {observation.substr(prev + 1, last - prev - 1), observation.substr(last + 1)};
}

template <class T>
double mean_of(const std::vector<T>& items, double T::*field) {
  double s = 0.0;
  for (const auto& it : items) s += it.*field;
  return s / static_cast<double>(items.size());
}

schematic::SchematicReport pool_schematic(const std::vector<schematic::SchematicReport>& reps) {
  schematic::SchematicReport out = reps.front();
  const double m = static_cast<double>(reps.size());
  out.r2_linear = mean_of(reps, &schematic::SchematicReport::r2_linear);
  out.r2_polynomial = mean_of(reps, &schematic::SchematicReport::r2_polynomial);
  out.r2_schematic = mean_of(reps, &schematic::SchematicReport::r2_schematic);
  out.sensitivity = mean_of(reps, &schematic::SchematicReport::sensitivity);
  out.weight_disparity = mean_of(reps, &schematic::SchematicReport::weight_disparity);
  out.weight_entropy = mean_of(reps, &schematic::SchematicReport::weight_entropy);
  out.linear_weights.setZero();
  for (auto& t : out.polynomial_terms) t.coefficient = 0.0;
  std::set<std::string> warnings;
  bool all_cs = true;
  double cs = 0.0;
  for (const auto& r : reps) {
    out.linear_weights += r.linear_weights / m;
    for (std::size_t t = 0; t < out.polynomial_terms.size(); ++t) out.polynomial_terms[t].coefficient += r.polynomial_terms[t].coefficient / m;
    out.polynomial_underdetermined = out.polynomial_underdetermined || r.polynomial_underdetermined;
    warnings.insert(r.warnings.begin(), r.warnings.end());
    if (r.context_stability) cs += *r.context_stability / m;
    else all_cs = false;
  }
  out.context_stability = all_cs && reps.front().context_stability ? std::optional<double>(cs) : std::nullopt;
  out.cluster_weights.clear();
  for (const auto& [cluster, w] : reps.front().cluster_weights) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(w.size());
    bool everywhere = true;
    for (const auto& r : reps) {
      const auto it = r.cluster_weights.find(cluster);
      if (it == r.cluster_weights.end()) {
        everywhere = false;
        break;
      }
      sum += it->second / m;
    }
    if (everywhere) out.cluster_weights[cluster] = sum;
  }
  out.warnings.assign(warnings.begin(), warnings.end());
  return out;
}

psychometric::PsychometricReport pool_psychometric(const std::vector<psychometric::PsychometricReport>& reps) {
  psychometric::PsychometricReport out = reps.front();
  const double m = static_cast<double>(reps.size());
  const auto k = out.alpha.size();
  std::fill(out.alpha.begin(), out.alpha.end(), 0.0);
  std::fill(out.clr_raw.begin(), out.clr_raw.end(), 0.0);
  std::fill(out.clr_norm.begin(), out.clr_norm.end(), 0.0);
  out.htmt.setZero();
  out.loadings.lambda.setZero();
  out.loadings.correlation.setZero();
  out.loadings.eigenvalues.setZero();
  for (const auto& r : reps) {
    for (std::size_t f = 0; f < k; ++f) {
      out.alpha[f] += r.alpha[f] / m;
      out.clr_raw[f] += r.clr_raw[f] / m;
      out.clr_norm[f] += r.clr_norm[f] / m;
      // Latent column order differs between imputations; align column f with factor f's match.
      out.loadings.lambda.col(static_cast<Eigen::Index>(f)) +=
          r.loadings.lambda.col(static_cast<Eigen::Index>(r.loadings.assignment[f])) / m;
    }
    out.htmt += r.htmt / m;
    out.loadings.correlation += r.loadings.correlation / m;
    out.loadings.eigenvalues += r.loadings.eigenvalues / m;
  }
  out.loadings.assignment.resize(k);
  std::iota(out.loadings.assignment.begin(), out.loadings.assignment.end(), std::size_t{0});
  out.mean_alpha = mean_of(reps, &psychometric::PsychometricReport::mean_alpha);
  out.mean_clr_norm = mean_of(reps, &psychometric::PsychometricReport::mean_clr_norm);
  out.mean_htmt = mean_of(reps, &psychometric::PsychometricReport::mean_htmt);
  out.unified = mean_of(reps, &psychometric::PsychometricReport::unified);
  out.sensitivity = mean_of(reps, &psychometric::PsychometricReport::sensitivity);
  return out;
}

stats::CorrelationMatrix pool_correlations(const std::vector<stats::CorrelationMatrix>& mats) {
  stats::CorrelationMatrix out = mats.front();
  const double m = static_cast<double>(mats.size());
  out.values.setZero();
  out.p_values.setZero();
  out.corrected_p.setZero();
  for (const auto& c : mats) {
    out.values += c.values / m;
    out.p_values += c.p_values / m;
    out.corrected_p += c.corrected_p / m;
  }
  return out;
}

void require_report_key(const json& report, const char* key) {
  if (!report.contains(key)) throw InputError(std::string("report document has no '") + key + "' section");
}

}  // namespace

std::string tool_version() { return JUDGEAUDIT_VERSION; }

json parse_structured(const std::string& text) {
  try {
    return yaml_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw InputError(std::string("cannot parse settings: ") + e.what());
  }
}

json load_structured(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return yaml_to_json(YAML::Load(buf.str()));
  } catch (const YAML::Exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

SettingSpec setting_from_json(const json& j) {
  if (!j.is_object()) throw InputError("setting: top level must be a mapping");
  check_keys(j, {"name", "judge", "baseline", "rubric", "questions", "models", "metrics"}, "setting");
  SettingSpec s;
  try {
    s.name = j.value("name", s.name);
    s.judge = j.contains("judge") && !j.at("judge").is_null() ? j.at("judge").get<std::string>() : "";
    s.baseline = j.contains("baseline") && !j.at("baseline").is_null() ? j.at("baseline").get<std::string>() : "";
  } catch (const json::exception& e) {
    throw InputError(std::string("setting: ") + e.what());
  }
  if (j.contains("rubric")) s.rubric = string_list(j, "rubric");
  if (s.rubric.empty()) throw InputError("setting: rubric must list at least one criterion");
  s.questions = string_list(j, "questions");
  s.models = string_list(j, "models");
  if (j.contains("metrics") && !j.at("metrics").is_null()) {
    const auto& m = j.at("metrics");
    if (!m.is_object()) throw InputError("setting: metrics must be a mapping");
    check_keys(m, {"bootstrap_iterations", "clusters", "tie_policy", "cs_ordered_pairs", "imputations", "seed",
                   "polynomial_degree", "exclude_deviations", "collapse"},
               "setting.metrics");
    auto& o = s.metrics;
    try {
      o.bootstrap_iterations = m.value("bootstrap_iterations", o.bootstrap_iterations);
      if (m.contains("clusters")) {
        const auto& c = m.at("clusters");
        if (c.is_string() && c.get<std::string>() == "auto") o.clusters.reset();
        else if (c.is_string() && c.get<std::string>() == "off") o.clusters = 0;
        else o.clusters = c.get<int>();
      }
      if (m.contains("tie_policy")) {
        const auto t = m.at("tie_policy").get<std::string>();
        if (t == "half" || t == "half_wins") o.tie_policy = ranking::TiePolicy::HalfWins;
        else if (t == "drop") o.tie_policy = ranking::TiePolicy::Drop;
        else throw InputError("setting.metrics: tie_policy must be 'half' or 'drop'");
      }
      o.cs_ordered_pairs = m.value("cs_ordered_pairs", o.cs_ordered_pairs);
      o.imputations = m.value("imputations", o.imputations);
      o.seed = m.value("seed", o.seed);
      o.polynomial_degree = m.value("polynomial_degree", o.polynomial_degree);
      o.exclude_deviations = m.value("exclude_deviations", o.exclude_deviations);
      if (m.contains("collapse")) {
        const auto& c = m.at("collapse");
        const std::string v = c.is_boolean() ? (c.get<bool>() ? "on" : "off") : c.get<std::string>();
        if (v == "auto") o.collapse = CollapseMode::Auto;
        else if (v == "on") o.collapse = CollapseMode::On;
        else if (v == "off") o.collapse = CollapseMode::Off;
        else throw InputError("setting.metrics: collapse must be auto, on or off");
      }
    } catch (const json::exception& e) {
      throw InputError(std::string("setting.metrics: ") + e.what());
    }
    if (o.bootstrap_iterations < 1) throw InputError("setting.metrics: bootstrap_iterations must be positive");
    if (o.imputations < 1) throw InputError("setting.metrics: imputations must be positive");
    if (o.polynomial_degree < 1) throw InputError("setting.metrics: polynomial_degree must be positive");
    if (o.clusters && *o.clusters != 0 && *o.clusters < 2) throw InputError("setting.metrics: clusters must be >= 2, auto or off");
  }
  return s;
}

SettingSpec load_setting(const std::filesystem::path& path) { return setting_from_json(load_structured(path)); }

json to_json(const SettingSpec& s) {
  json j;
  j["name"] = s.name;
  j["judge"] = s.judge.empty() ? json(nullptr) : json(s.judge);
  j["baseline"] = s.baseline.empty() ? json(nullptr) : json(s.baseline);
  j["rubric"] = s.rubric;
  j["questions"] = s.questions;
  j["models"] = s.models;
  json m;
  m["bootstrap_iterations"] = s.metrics.bootstrap_iterations;
  m["clusters"] = !s.metrics.clusters ? json("auto") : *s.metrics.clusters == 0 ? json("off") : json(*s.metrics.clusters);
  m["tie_policy"] = s.metrics.tie_policy == ranking::TiePolicy::HalfWins ? "half" : "drop";
  m["cs_ordered_pairs"] = s.metrics.cs_ordered_pairs;
  m["imputations"] = s.metrics.imputations;
  m["seed"] = s.metrics.seed;
  m["polynomial_degree"] = s.metrics.polynomial_degree;
  m["exclude_deviations"] = s.metrics.exclude_deviations;
  m["collapse"] = s.metrics.collapse == CollapseMode::Auto ? "auto" : s.metrics.collapse == CollapseMode::On ? "on" : "off";
  j["metrics"] = m;
  return j;
}

AuditReport run_audit(const SettingSpec& setting, const std::filesystem::path& data, const AuditOptions& options) {
  AuditReport rep;
  rep.setting = setting;
  rep.tool_version = tool_version();
  const auto& metrics = setting.metrics;

  JudgmentSet set = stage("load", [&] {
    rep.input_digests["data"] = sha256_file(data);
    if (options.setting_path) rep.input_digests["setting"] = sha256_file(*options.setting_path);
    auto loaded = filter_set(load_judgments(data, format_from_path(data), setting.rubric), setting);
    if (metrics.exclude_deviations) loaded = drop_flagged_records(loaded);
    if (loaded.empty()) throw InputError("no judgments left after applying the setting's filters");
    return loaded;
  });
  rep.records = set.records.size();
  rep.missing_cells = set.missing_cells();

  ImputationResult imputed = stage("impute", [&] {
    return impute_missing(set, metrics.imputations, metrics.seed, options.jobs);
  });
  rep.dropped_rows = imputed.dropped_rows;
  const auto& samples = imputed.matrices;

  schematic::SchematicOptions sopt;
  sopt.polynomial_degree = metrics.polynomial_degree;
  sopt.cs_ordered_pairs = metrics.cs_ordered_pairs;
  sopt.allow_underdetermined = true;

  std::vector<schematic::SchematicReport> schem;
  stage("schematic", [&] {
    std::optional<schematic::QuestionClusters> clusters;
    if (!metrics.clusters || *metrics.clusters != 0) {
      try {
        clusters = schematic::cluster_questions(samples.front(), metrics.clusters, metrics.seed);
        schematic::context_stability(samples.front(), *clusters, metrics.cs_ordered_pairs);
      } catch (const Error& e) {
        clusters.reset();
        rep.warnings.push_back(std::string("context stability skipped: ") + e.what());
      }
    }
    for (const auto& s : samples) schem.push_back(schematic::schematic_adherence(s, sopt, clusters ? &*clusters : nullptr));
    rep.schematic = pool_schematic(schem);

    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
    const auto& first = samples.front();
    for (std::size_t i = 0; i < first.observation_ids.size(); ++i) groups[judge_and_setting(first.observation_ids[i])].push_back(i);
    for (const auto& [key, rows] : groups) {
      GroupVariance g{key.first, key.second, rows.size(), 0.0, 0.0, 0.0};
      try {
        for (const auto& s : samples) {
          const auto sub = s.select_rows(rows);
          const double lin = schematic::fit_linear_schema(sub).r_squared;
          const double poly = schematic::fit_polynomial_schema(sub, sopt).r_squared;
          g.r2_linear += lin / static_cast<double>(samples.size());
          g.r2_polynomial += poly / static_cast<double>(samples.size());
          g.r2_schematic += std::max(lin, poly) / static_cast<double>(samples.size());
        }
      } catch (const Error& e) {
        g.r2_linear = g.r2_polynomial = g.r2_schematic = kNaN;
        rep.warnings.push_back("variance decomposition for judge '" + key.first + "', setting '" + key.second +
                               "': " + e.what());
      }
      rep.variance.push_back(g);
    }
    return 0;
  });

  std::vector<psychometric::PsychometricReport> psy;
  stage("psychometric", [&] {
    for (const auto& s : samples) {
      const auto cube = psychometric::ScoreCube::from_sample(s).complete_cases();
      psy.push_back(psychometric::psychometric_validity(cube, set.score_range));
    }
    rep.psychometric = pool_psychometric(psy);
    return 0;
  });

  std::vector<stats::CorrelationMatrix> corr;
  stage("correlations", [&] {
    for (const auto& s : samples) corr.push_back(stats::spearman_matrix(s.factors));
    rep.correlations = pool_correlations(corr);
    return 0;
  });

  stage("deviations", [&] {
    const std::array<GroupKey, 2> keys{GroupKey::Judge, GroupKey::Setting};
    rep.deviations = deviation_rates(set, keys);
    return 0;
  });

  rep.baseline = setting.baseline.empty() ? ranking::default_baseline(set) : setting.baseline;
  ranking::BootstrapOptions bopt;
  bopt.iterations = metrics.bootstrap_iterations;
  bopt.seed = metrics.seed;
  bopt.jobs = options.jobs;
  bopt.bt.ties = metrics.tie_policy;
  stage("ranking", [&] {
    rep.ranking = ranking::bootstrap_ratings(set, std::string(kOverallKey), rep.baseline, bopt);
    return 0;
  });

  if (metrics.collapse != CollapseMode::Off) {
    stage("collapse", [&] {
      const auto models = rep.ranking.ratings.size();
      if (metrics.collapse == CollapseMode::Auto && models < set.k() + 2) {
        rep.warnings.push_back("collapse analysis skipped: " + std::to_string(models) + " models, need at least " +
                               std::to_string(set.k() + 2));
        return 0;
      }
      ranking::CollapseOptions copt;
      copt.bootstrap = bopt;
      copt.polynomial_degree = metrics.polynomial_degree;
      rep.collapse = ranking::collapse_analysis(set, rep.baseline, copt);
      return 0;
    });
  }

  for (std::size_t t = 0; t < samples.size(); ++t) {
    json one;
    one["imputation"] = t;
    one["schematic"] = schematic::to_json(schem[t]);
    one["psychometric"] = psychometric::to_json(psy[t]);
    one["correlations"] = matrix_json(corr[t].values);
    rep.per_imputation.push_back(one);
  }
  std::sort(rep.warnings.begin(), rep.warnings.end());
  return rep;
}

json to_json(const DeviationTable& t) {
  json j;
  json group_by = json::array();
  for (const auto& g : t.group_by) group_by.push_back(g);
  j["group_by"] = group_by;
  j["criteria"] = t.criteria;
  json rows = json::array();
  for (const auto& r : t.rows) {
    json row;
    json group = json::object();
    for (std::size_t i = 0; i < t.group_by.size() && i < r.group.size(); ++i) group[t.group_by[i]] = r.group[i];
    row["group"] = group;
    row["total"] = r.total;
    json flagged = json::object(), percent = json::object();
    for (std::size_t c = 0; c < t.criteria.size(); ++c) {
      flagged[t.criteria[c]] = r.flagged[c];
      percent[t.criteria[c]] = r.percent[c];
    }
    row["flagged"] = flagged;
    row["percent"] = percent;
    row["overall_flagged"] = r.overall_flagged;
    row["overall_percent"] = r.overall_percent;
    row["average_percent"] = r.average;
    rows.push_back(row);
  }
  j["rows"] = rows;
  j["total_flagged"] = t.total_flagged();
  return j;
}

std::string deviation_csv(const DeviationTable& t) {
  std::ostringstream out;
  for (const auto& g : t.group_by) out << csv_field(g) << ',';
  for (const auto& c : t.criteria) out << csv_field(c) << ',';
  out << "overall,average\n";
  for (const auto& r : t.rows) {
    for (const auto& g : r.group) out << csv_field(g) << ',';
    for (double p : r.percent) out << fmt(p) << ',';
    out << fmt(r.overall_percent) << ',' << fmt(r.average) << '\n';
  }
  return out.str();
}

json to_json(const stats::CorrelationMatrix& m, const std::vector<std::string>& criteria) {
  json j;
  j["criteria"] = criteria;
  j["method"] = m.method == stats::CorrelationMethod::Spearman ? "spearman" : "pearson";
  j["values"] = matrix_json(m.values);
  j["p_values"] = matrix_json(m.p_values);
  j["corrected_p"] = matrix_json(m.corrected_p);
  j["tests"] = m.tests;
  j["mean_off_diagonal"] = m.mean_off_diagonal();
  return j;
}

json to_json(const AuditReport& r) {
  json j;
  j["setting"] = to_json(r.setting);
  j["tool_version"] = r.tool_version;
  j["input_digests"] = r.input_digests;
  j["baseline"] = r.baseline;
  j["records"] = r.records;
  j["imputation"] = {{"imputations", r.setting.metrics.imputations},
                     {"missing_cells", r.missing_cells},
                     {"dropped_rows", r.dropped_rows},
                     {"pooling", "mean"}};
  j["schematic"] = schematic::to_json(r.schematic);
  json var = json::array();
  for (const auto& g : r.variance) {
    var.push_back({{"judge", g.judge},
                   {"setting", g.setting},
                   {"rows", g.rows},
                   {"r2_linear", g.r2_linear},
                   {"r2_polynomial", g.r2_polynomial},
                   {"r2_schematic", g.r2_schematic}});
  }
  j["variance_decomposition"] = var;
  j["psychometric"] = psychometric::to_json(r.psychometric);
  j["correlations"] = to_json(r.correlations, r.schematic.criteria);
  j["deviations"] = to_json(r.deviations);
  j["ranking"] = ranking::to_json(r.ranking);
  j["collapse"] = r.collapse ? ranking::to_json(*r.collapse) : json(nullptr);
  j["per_imputation"] = r.per_imputation;
  j["warnings"] = r.warnings;
  return j;
}

std::string canonical_json(const json& value) {
  std::string out;
  dump_canonical(value, out, 0);
  out += '\n';
  return out;
}

std::string render_markdown(const json& r) {
  for (const char* key : {"schematic", "psychometric", "correlations", "deviations", "ranking"}) require_report_key(r, key);
  std::ostringstream md;
  const auto& setting = r.at("setting");
  md << "# Judge audit: " << fmt(setting.at("name")) << "\n\n";
  md << "- tool version: " << fmt(r.at("tool_version")) << "\n";
  for (const auto& [name, digest] : r.at("input_digests").items()) md << "- " << name << " sha256: `" << fmt(digest) << "`\n";
  md << "- records: " << fmt(r.at("records")) << ", baseline: " << fmt(r.at("baseline")) << "\n";
  const auto& imp = r.at("imputation");
  md << "- imputations: " << fmt(imp.at("imputations")) << " (missing cells " << fmt(imp.at("missing_cells"))
     << ", dropped rows " << fmt(imp.at("dropped_rows")) << ")\n\n";

  const auto& s = r.at("schematic");
  md << "## Schematic adherence\n\n| metric | value |\n|---|---|\n";
  for (const char* key : {"r2_linear", "r2_polynomial", "r2_schematic", "unexplained_percent", "sensitivity",
                          "weight_disparity", "weight_entropy", "context_stability"}) {
    md << "| " << key << " | " << fmt(s.at(key)) << " |\n";
  }
  md << "\n| weight | value |\n|---|---|\n";
  for (const auto& [name, w] : s.at("linear_weights").items()) md << "| " << name << " | " << fmt(w) << " |\n";
  md << '\n';
  if (r.contains("variance_decomposition") && !r.at("variance_decomposition").empty()) {
    md << "| judge | setting | rows | R2 linear | R2 polynomial | unexplained % |\n|---|---|---|---|---|---|\n";
    for (const auto& g : r.at("variance_decomposition")) {
      md << "| " << fmt(g.at("judge")) << " | " << fmt(g.at("setting")) << " | " << fmt(g.at("rows")) << " | "
         << fmt(g.at("r2_linear")) << " | " << fmt(g.at("r2_polynomial")) << " | "
         << fmt(100.0 * (1.0 - number_or_nan(g.at("r2_schematic")))) << " |\n";
    }
    md << '\n';
  }

  const auto& p = r.at("psychometric");
  const auto factors = p.at("factors").get<std::vector<std::string>>();
  md << "## Psychometric validity\n\n| factor | alpha | CLR | CLR normalised |\n|---|---|---|---|\n";
  for (std::size_t f = 0; f < factors.size(); ++f) {
    md << "| " << factors[f] << " | " << fmt(p.at("alpha").at(f)) << " | " << fmt(p.at("clr_raw").at(f)) << " | "
       << fmt(p.at("clr_norm").at(f)) << " |\n";
  }
  md << "\nunified score " << fmt(p.at("unified")) << ", sensitivity " << fmt(p.at("sensitivity")) << ", mean HTMT "
     << fmt(p.at("mean_htmt")) << "\n\n";
  auto matrix_table = [&](const json& m) {
    md << "| |";
    for (const auto& f : factors) md << ' ' << f << " |";
    md << "\n|---|";
    for (std::size_t f = 0; f < factors.size(); ++f) md << "---|";
    md << '\n';
    for (std::size_t i = 0; i < factors.size(); ++i) {
      md << "| " << factors[i] << " |";
      for (std::size_t c = 0; c < factors.size(); ++c) md << ' ' << fmt(m.at(i).at(c)) << " |";
      md << '\n';
    }
    md << '\n';
  };
  md << "HTMT:\n\n";
  matrix_table(p.at("htmt"));

  const auto& c = r.at("correlations");
  md << "## Factor correlations (Spearman)\n\nmean off-diagonal " << fmt(c.at("mean_off_diagonal")) << ", Bonferroni family "
     << fmt(c.at("tests")) << "\n\n";
  matrix_table(c.at("values"));

  const auto& d = r.at("deviations");
  md << "## Deviation rates (%)\n\n|";
  for (const auto& g : d.at("group_by")) md << ' ' << fmt(g) << " |";
  for (const auto& cr : d.at("criteria")) md << ' ' << fmt(cr) << " |";
  md << " overall | average |\n|";
  for (std::size_t i = 0; i < d.at("group_by").size() + d.at("criteria").size() + 2; ++i) md << "---|";
  md << '\n';
  for (const auto& row : d.at("rows")) {
    md << '|';
    for (const auto& g : d.at("group_by")) md << ' ' << fmt(row.at("group").at(g.get<std::string>())) << " |";
    for (const auto& cr : d.at("criteria")) md << ' ' << fmt(row.at("percent").at(cr.get<std::string>())) << " |";
    md << ' ' << fmt(row.at("overall_percent")) << " | " << fmt(row.at("average_percent")) << " |\n";
  }
  md << '\n';

  const auto& rk = r.at("ranking");
  std::vector<std::pair<double, std::string>> order;
  for (const auto& [model, row] : rk.at("models").items()) order.emplace_back(-number_or_nan(row.at("rating")), model);
  std::sort(order.begin(), order.end());
  md << "## Leaderboard (baseline " << fmt(rk.at("baseline")) << ")\n\n| model | rating | ELO view | win rate | 95% CI |\n|---|---|---|---|---|\n";
  for (const auto& [neg, model] : order) {
    const auto& row = rk.at("models").at(model);
    md << "| " << model << " | " << fmt(row.at("rating")) << " | " << fmt(row.at("elo_display")) << " | "
       << fmt(row.value("win_rate", json(nullptr))) << " | ";
    if (row.contains("ci_low")) md << '[' << fmt(row.at("ci_low")) << ", " << fmt(row.at("ci_high")) << ']';
    md << " |\n";
  }
  md << '\n';

  if (r.contains("collapse") && !r.at("collapse").is_null()) {
    const auto& col = r.at("collapse");
    md << "## Rating collapse\n\noverall ratings regressed on per-factor ratings over " << fmt(col.at("regression_rows"))
       << " models: R2 linear " << fmt(col.at("r2_linear")) << ", R2 polynomial " << fmt(col.at("r2_polynomial"));
    if (col.at("polynomial_underdetermined").get<bool>()) md << " (underdetermined)";
    md << ", unexplained " << fmt(col.at("unexplained_percent")) << "%\n\n";
  }
  if (r.contains("warnings") && !r.at("warnings").empty()) {
    md << "## Warnings\n\n";
    for (const auto& w : r.at("warnings")) md << "- " << fmt(w) << '\n';
  }
  return md.str();
}

std::vector<std::filesystem::path> emit_plot_data(const json& r, const std::filesystem::path& out_dir) {
  for (const char* key : {"variance_decomposition", "correlations", "psychometric", "collapse"}) require_report_key(r, key);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw InputError("cannot create output directory " + out_dir.string());

  std::vector<std::filesystem::path> written;
  auto emit = [&](const char* name, const std::string& content) {
    const auto path = out_dir / name;
    write_atomic(path, content);
    written.push_back(path);
  };

  std::ostringstream var;
  var << "judge,setting,explained_linear_percent,explained_poly_percent,unexplained_percent\n";
  for (const auto& g : r.at("variance_decomposition")) {
    const double lin = number_or_nan(g.at("r2_linear"));
    const double sch = number_or_nan(g.at("r2_schematic"));
    var << csv_field(g.at("judge").get<std::string>()) << ',' << csv_field(g.at("setting").get<std::string>()) << ','
        << fmt(100.0 * lin) << ',' << fmt(100.0 * std::max(0.0, sch - lin)) << ',' << fmt(100.0 * (1.0 - sch)) << '\n';
  }
  emit("variance_decomposition.csv", var.str());

  const auto& c = r.at("correlations");
  const auto crit = c.at("criteria").get<std::vector<std::string>>();
  std::ostringstream cor;
  cor << "factor_row,factor_col,spearman_rho,p_value,corrected_p\n";
  for (std::size_t i = 0; i < crit.size(); ++i) {
    for (std::size_t k = 0; k < crit.size(); ++k) {
      cor << csv_field(crit[i]) << ',' << csv_field(crit[k]) << ',' << fmt(c.at("values").at(i).at(k)) << ','
          << fmt(c.at("p_values").at(i).at(k)) << ',' << fmt(c.at("corrected_p").at(i).at(k)) << '\n';
    }
  }
  emit("correlations.csv", cor.str());

  const auto& l = r.at("psychometric").at("loadings");
  const auto lf = l.at("factors").get<std::vector<std::string>>();
  std::ostringstream load;
  load << "observed_factor,latent_factor,loading\n";
  for (std::size_t i = 0; i < lf.size(); ++i) {
    const auto& row = l.at("lambda").at(i);
    for (std::size_t k = 0; k < row.size(); ++k) {
      load << csv_field(lf[i]) << ",latent_" << (k + 1) << ',' << fmt(row.at(k)) << '\n';
    }
  }
  emit("loadings.csv", load.str());

  std::ostringstream col;
  col << "model,overall";
  const auto& collapse = r.at("collapse");
  std::vector<std::string> ccrit;
  if (!collapse.is_null()) ccrit = collapse.at("criteria").get<std::vector<std::string>>();
  else ccrit = crit;
  for (const auto& f : ccrit) col << ',' << csv_field(f);
  col << '\n';
  if (!collapse.is_null()) {
    for (const auto& model : collapse.at("models")) {
      const auto name = model.get<std::string>();
      col << csv_field(name) << ',' << fmt(collapse.at("overall_ratings").at("models").at(name).at("rating"));
      for (const auto& f : ccrit) col << ',' << fmt(collapse.at("per_factor_ratings").at(f).at("models").at(name).at("rating"));
      col << '\n';
    }
  }
  emit("collapse.csv", col.str());
  return written;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericError("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

void write_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw InputError("short write to " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw InputError("cannot move report into place at " + path.string() + ": " + ec.message());
  }
}

std::string content_address(const AuditReport& report, std::string_view extension) {
  std::string key = report.tool_version;
  for (const auto& [name, digest] : report.input_digests) key += "|" + name + "=" + digest;
  key += "|seed=" + std::to_string(report.setting.metrics.seed);
  key += "|" + canonical_json(to_json(report.setting));
  return "audit-" + sha256_hex(key).substr(0, 16) + "." + std::string(extension);
}

}  // namespace judgeaudit::report
