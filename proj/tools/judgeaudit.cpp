// judgeaudit command-line interface.

#include "judgeaudit/error.hpp"
#include "judgeaudit/judge_client.hpp"
#include "judgeaudit/judgment.hpp"
#include "judgeaudit/kernels.hpp"
#include "judgeaudit/ranking.hpp"
#include "judgeaudit/report.hpp"
#include "judgeaudit/synthgen.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace judgeaudit;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string format = "json";
  unsigned jobs = 1;
};

void emit(const std::optional<fs::path>& out, const std::string& content) {
  if (out) report::write_atomic(*out, content);
  else std::cout << content << std::flush;
}

JudgmentSet load(const fs::path& path, const std::vector<std::string>& criteria) {
  return load_judgments(path, format_from_path(path), criteria);
}

std::string md_table_from_leaderboard(const ranking::RatingTable& t) {
  std::ostringstream md;
  md << "| model | rating | ELO view | win rate | 95% CI |\n|---|---|---|---|---|\n";
  std::istringstream csv(ranking::leaderboard_csv(t));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(6);
    md << "| " << cells[0] << " | " << cells[1] << " | " << cells[2] << " | " << cells[3] << " | ";
    if (!cells[4].empty()) md << '[' << cells[4] << ", " << cells[5] << ']';
    md << " |\n";
  }
  return md.str();
}

int run_ingest(const Globals& g, const fs::path& in, const std::optional<fs::path>& out,
               const std::optional<fs::path>& summary_out, bool parse_raw, std::vector<std::string> criteria) {
  if (criteria.empty()) criteria = rubric_criteria();
  JudgmentSet set = load(in, criteria);
  std::size_t reparsed = 0;
  if (parse_raw) {
    for (auto& r : set.records) {
      if (r.raw_text) {
        parse_raw_verdicts(r, set.criteria);
        ++reparsed;
      }
    }
  }
  set.validate();
  if (out) {
    std::ostringstream buf;
    write_jsonl(set, buf);
    report::write_atomic(*out, buf.str());
  }
  const std::array<GroupKey, 2> keys{GroupKey::Judge, GroupKey::Setting};
  const auto table = deviation_rates(set, keys);
  if (g.format == "md") {
    std::ostringstream md;
    md << "# Ingest: " << in.filename().string() << "\n\n- records: " << set.records.size()
       << "\n- missing cells: " << set.missing_cells() << "\n- flagged cells: " << table.total_flagged()
       << "\n\n## Deviation rates (%)\n\n```\n" << report::deviation_csv(table) << "```\n";
    emit(summary_out, md.str());
  } else {
    json j;
    j["input"] = in.filename().string();
    j["input_sha256"] = report::sha256_file(in);
    j["records"] = set.records.size();
    j["criteria"] = set.criteria;
    j["missing_cells"] = set.missing_cells();
    j["reparsed_records"] = reparsed;
    j["deviations"] = report::to_json(table);
    emit(summary_out, report::canonical_json(j));
  }
  return 0;
}

int run_audit_cmd(const Globals& g, const fs::path& setting_path, const fs::path& data, std::optional<fs::path> out,
                  const std::optional<fs::path>& out_dir, const std::optional<fs::path>& plots, bool force) {
  auto setting = report::load_setting(setting_path);
  if (g.seed) setting.metrics.seed = *g.seed;
  report::AuditOptions opts;
  opts.jobs = g.jobs;
  opts.setting_path = setting_path;
  const auto rep = report::run_audit(setting, data, opts);
  const json doc = report::to_json(rep);
  const std::string body = g.format == "md" ? report::render_markdown(doc) : report::canonical_json(doc);
  if (out_dir) {
    fs::create_directories(*out_dir);
    out = *out_dir / report::content_address(rep, g.format == "md" ? "md" : "json");
  }
  if (out && fs::exists(*out) && !force) {
    std::ifstream existing(*out, std::ios::binary);
    std::ostringstream buf;
    buf << existing.rdbuf();
    if (buf.str() != body) {
      throw InputError("report " + out->string() + " already exists with different content; pass --force to replace it");
    }
  } else {
    emit(out, body);
  }
  if (plots) report::emit_plot_data(doc, *plots);
  if (out) std::cerr << "wrote " << out->string() << '\n';
  return 0;
}

int run_rank(const Globals& g, const fs::path& data, std::string baseline, const std::string& target, int iterations,
             bool drop_ties, const std::vector<std::string>& criteria_in, const std::optional<fs::path>& out,
             const std::optional<fs::path>& leaderboard) {
  const auto criteria = criteria_in.empty() ? rubric_criteria() : criteria_in;
  const JudgmentSet set = load(data, criteria);
  if (baseline.empty()) baseline = ranking::default_baseline(set);
  ranking::BootstrapOptions opt;
  opt.iterations = iterations;
  opt.seed = g.seed.value_or(0);
  opt.jobs = g.jobs;
  opt.bt.ties = drop_ties ? ranking::TiePolicy::Drop : ranking::TiePolicy::HalfWins;
  const auto table = ranking::bootstrap_ratings(set, target, baseline, opt);
  if (leaderboard) report::write_atomic(*leaderboard, ranking::leaderboard_csv(table));
  if (g.format == "md") {
    emit(out, "# Leaderboard: " + target + " (baseline " + baseline + ")\n\n" + md_table_from_leaderboard(table));
  } else {
    json j = ranking::to_json(table);
    j["target"] = target;
    j["input_sha256"] = report::sha256_file(data);
    j["seed"] = opt.seed;
    emit(out, report::canonical_json(j));
  }
  return 0;
}

int run_collapse(const Globals& g, const fs::path& data, std::string baseline, const std::vector<std::string>& criteria_in,
                 const std::optional<fs::path>& out) {
  const auto criteria = criteria_in.empty() ? rubric_criteria() : criteria_in;
  const JudgmentSet set = load(data, criteria);
  if (baseline.empty()) baseline = ranking::default_baseline(set);
  ranking::CollapseOptions opt;
  opt.bootstrap.jobs = g.jobs;
  opt.bootstrap.seed = g.seed.value_or(0);
  const auto rep = ranking::collapse_analysis(set, baseline, opt);
  json j = ranking::to_json(rep);
  j["input_sha256"] = report::sha256_file(data);
  if (g.format == "md") {
    std::ostringstream md;
    md << "# Rating collapse (baseline " << baseline << ")\n\n- models: " << rep.models.size()
       << "\n- R2 linear: " << rep.r2_linear << "\n- R2 polynomial: " << rep.r2_polynomial
       << (rep.polynomial_underdetermined ? " (underdetermined)" : "") << "\n- unexplained %: " << rep.unexplained_percent()
       << "\n\n## Overall leaderboard\n\n" << md_table_from_leaderboard(rep.overall);
    emit(out, md.str());
  } else {
    emit(out, report::canonical_json(j));
  }
  return 0;
}

int run_synth(const Globals& g, const std::optional<fs::path>& config_path, const fs::path& out, json overrides) {
  json cfg = config_path ? report::load_structured(*config_path) : json::object();
  if (cfg.is_null()) cfg = json::object();
  for (auto& [key, value] : overrides.items()) cfg[key] = value;
  if (g.seed) cfg["seed"] = *g.seed;
  auto config = synthgen::config_from_json(cfg);
  config.jobs = g.jobs;
  const auto data = synthgen::generate(config);
  std::ostringstream buf;
  write_jsonl(data.set, buf);
  report::write_atomic(out, buf.str());
  auto truth_path = out;
  truth_path.replace_filename(out.stem().string() + ".truth.json");
  const json truth = synthgen::to_json(data.truth);
  report::write_atomic(truth_path, report::canonical_json(truth));
  if (g.format == "md") {
    std::cout << "# Synthetic dataset\n\n- records: " << data.set.records.size() << "\n- analytic R2: " << data.truth.analytic_r2
              << "\n- regime: " << truth.at("expected_htmt_regime").get<std::string>() << "\n- ground truth: " << truth_path.string()
              << '\n';
  } else {
    std::cout << report::canonical_json(truth);
  }
  return 0;
}

int run_judge(const Globals& g, const fs::path& config_path, const fs::path& tasks_path, const fs::path& out) {
  auto endpoint = judge::endpoint_from_json(report::load_structured(config_path));
  const auto tasks = judge::load_tasks(tasks_path);
  const auto summary = judge::run_tasks(tasks, endpoint, out);
  json j;
  j["tasks"] = summary.tasks;
  j["written"] = summary.written;
  j["failed"] = summary.failed;
  j["prompt_tokens_estimate"] = summary.prompt_tokens_estimate;
  j["errors"] = summary.errors;
  if (g.format == "md") {
    std::cout << "# Judge run\n\n- tasks: " << summary.tasks << "\n- written: " << summary.written << "\n- failed: "
              << summary.failed << "\n- prompt tokens (estimate): " << summary.prompt_tokens_estimate << '\n';
    for (const auto& e : summary.errors) std::cout << "- error: " << e << '\n';
  } else {
    std::cout << report::canonical_json(j);
  }
  if (summary.failed > 0) {
    std::cerr << "error: " << summary.failed << " of " << summary.tasks << " judgments failed; first: " << summary.errors.front()
              << '\n';
    return 4;
  }
  return 0;
}

int run_report(const Globals& g, const fs::path& in, const std::optional<fs::path>& out, const std::optional<fs::path>& plots) {
  std::ifstream f(in, std::ios::binary);
  if (!f) throw InputError("cannot open " + in.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw InputError(in.string() + ": " + e.what());
  }
  if (plots) {
    for (const auto& p : report::emit_plot_data(doc, *plots)) std::cerr << "wrote " << p.string() << '\n';
  }
  emit(out, g.format == "md" ? report::render_markdown(doc) : report::canonical_json(doc));
  return 0;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Input: return 2;
    case ErrorKind::Numeric: return 3;
    case ErrorKind::Network: return 4;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audit LLM-judged pairwise benchmarks: schematic adherence, psychometric validity, rankings."};
  app.set_version_flag("--version", report::tool_version());
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (imputation, bootstrap, clustering, synthesis)");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"json", "md"}));
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  std::string simd;
  app.add_option("--simd", simd, "Force a reduction kernel backend")->check(CLI::IsMember({"scalar", "avx2", "neon"}));

  std::vector<std::string> criteria;

  auto* ingest = app.add_subcommand("ingest", "Validate judgments, report deviations, optionally rewrite as JSONL");
  fs::path ingest_in;
  std::optional<fs::path> ingest_out, ingest_summary;
  bool parse_raw = false;
  ingest->add_option("--in", ingest_in, "Judgment file (.jsonl or .csv)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", ingest_out, "Write normalised JSONL here");
  ingest->add_option("--summary", ingest_summary, "Write the summary here instead of stdout");
  ingest->add_flag("--parse-raw", parse_raw, "Re-extract every verdict from raw_text");
  ingest->add_option("--criteria", criteria, "Rubric criteria (default: the five-criterion rubric)");

  auto* audit = app.add_subcommand("audit", "Run the full audit for one setting");
  fs::path setting_path, audit_data;
  std::optional<fs::path> audit_out, audit_dir, audit_plots;
  bool force = false;
  audit->add_option("--setting", setting_path, "Settings file (YAML)")->required()->check(CLI::ExistingFile);
  audit->add_option("--data", audit_data, "Judgment file")->required()->check(CLI::ExistingFile);
  auto* out_opt = audit->add_option("--out", audit_out, "Report path (default: stdout)");
  audit->add_option("--out-dir", audit_dir, "Write a content-addressed report into this directory")->excludes(out_opt);
  audit->add_option("--plots", audit_plots, "Also write plot-data CSVs into this directory");
  audit->add_flag("--force", force, "Replace an existing report with different content");

  auto* rank = app.add_subcommand("rank", "Bradley-Terry leaderboard with bootstrap intervals");
  fs::path rank_data;
  std::string baseline, target = std::string(kOverallKey);
  int iterations = 100;
  bool drop_ties = false;
  std::optional<fs::path> rank_out, leaderboard;
  rank->add_option("--data", rank_data, "Judgment file")->required()->check(CLI::ExistingFile);
  rank->add_option("--baseline", baseline, "Baseline model (default: most frequent model_a)");
  rank->add_option("--target", target, "'overall' or a criterion name");
  rank->add_option("--iterations", iterations, "Bootstrap iterations")->check(CLI::PositiveNumber);
  rank->add_flag("--drop-ties", drop_ties, "Drop ties instead of splitting them into half wins");
  rank->add_option("--criteria", criteria, "Rubric criteria");
  rank->add_option("--out", rank_out, "Output path (default: stdout)");
  rank->add_option("--leaderboard", leaderboard, "Also write the leaderboard CSV here");

  auto* collapse = app.add_subcommand("collapse", "Regress overall ratings on per-factor ratings");
  fs::path collapse_data;
  std::optional<fs::path> collapse_out;
  collapse->add_option("--data", collapse_data, "Judgment file")->required()->check(CLI::ExistingFile);
  collapse->add_option("--baseline", baseline, "Baseline model");
  collapse->add_option("--criteria", criteria, "Rubric criteria");
  collapse->add_option("--out", collapse_out, "Output path (default: stdout)");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic judgment set with ground truth");
  std::optional<fs::path> synth_config;
  fs::path synth_out;
  std::optional<std::size_t> s_k, s_questions, s_models, s_latent;
  std::optional<double> s_noise, s_target, s_effect, s_missing, s_transitive;
  synth->add_option("--config", synth_config, "Synthetic config (YAML or JSON)")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output JSONL; ground truth goes to <stem>.truth.json")->required();
  synth->add_option("--k", s_k, "Factor count");
  synth->add_option("--questions", s_questions, "Questions");
  synth->add_option("--models", s_models, "Models, including the baseline");
  synth->add_option("--latent-dim", s_latent, "Latent dimension");
  synth->add_option("--noise", s_noise, "Overall noise sigma");
  synth->add_option("--target-r2", s_target, "Pick the noise sigma that gives this analytic R2");
  synth->add_option("--model-effect", s_effect, "Per-model latent effect sigma");
  synth->add_option("--missing-rate", s_missing, "Fraction of cells left missing");
  synth->add_option("--transitive", s_transitive, "Spread of a linear transitive quality ladder across models");

  auto* judge_run = app.add_subcommand("judge-run", "Collect judgments from an OpenAI-compatible endpoint");
  fs::path judge_config, judge_tasks, judge_out;
  judge_run->add_option("--config", judge_config, "Endpoint config (YAML)")->required()->check(CLI::ExistingFile);
  judge_run->add_option("--tasks", judge_tasks, "Task JSONL")->required()->check(CLI::ExistingFile);
  judge_run->add_option("--out", judge_out, "Judgment JSONL (appended)")->required();

  auto* rep = app.add_subcommand("report", "Re-render an audit report, optionally emitting plot data");
  fs::path report_in;
  std::optional<fs::path> report_out, report_plots;
  rep->add_option("--in", report_in, "Audit report JSON")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", report_out, "Output path (default: stdout)");
  rep->add_option("--plots", report_plots, "Write plot-data CSVs into this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!simd.empty()) {
      const auto backend = simd == "avx2" ? kernels::Backend::Avx2 : simd == "neon" ? kernels::Backend::Neon : kernels::Backend::Scalar;
      if (!kernels::backend_supported(backend)) throw InputError("SIMD backend '" + simd + "' is not available on this machine");
      kernels::set_backend(backend);
    }
    if (*ingest) return run_ingest(g, ingest_in, ingest_out, ingest_summary, parse_raw, criteria);
    if (*audit) return run_audit_cmd(g, setting_path, audit_data, audit_out, audit_dir, audit_plots, force);
    if (*rank) return run_rank(g, rank_data, baseline, target, iterations, drop_ties, criteria, rank_out, leaderboard);
    if (*collapse) return run_collapse(g, collapse_data, baseline, criteria, collapse_out);
    if (*synth) {
      json o = json::object();
      if (s_k) o["k"] = *s_k;
      if (s_questions) o["questions"] = *s_questions;
      if (s_models) o["models"] = *s_models;
      if (s_latent) o["latent_dim"] = *s_latent;
      if (s_noise) o["noise_sigma"] = *s_noise;
      if (s_target) o["target_r2"] = *s_target;
      if (s_effect) o["model_effect_sigma"] = *s_effect;
      if (s_missing) o["missing_rate"] = *s_missing;
      if (s_transitive) {
        std::size_t models = s_models.value_or(11);
        if (synth_config) {
          const auto c = report::load_structured(*synth_config);
          if (c.is_object() && c.contains("models")) models = c.at("models").get<std::size_t>();
        }
        std::vector<double> q(models);
        for (std::size_t m = 0; m < models; ++m) q[m] = models > 1 ? *s_transitive * static_cast<double>(m) / static_cast<double>(models - 1) : 0.0;
        o["transitive_quality"] = q;
      }
      return run_synth(g, synth_config, synth_out, o);
    }
    if (*judge_run) return run_judge(g, judge_config, judge_tasks, judge_out);
    if (*rep) return run_report(g, report_in, report_out, report_plots);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
