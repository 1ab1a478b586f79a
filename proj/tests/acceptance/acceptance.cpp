// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Every tolerance is a named constant next to the check that uses it.

#include "judgeaudit/error.hpp"
#include "judgeaudit/judgment.hpp"
#include "judgeaudit/psychometric.hpp"
#include "judgeaudit/ranking.hpp"
#include "judgeaudit/report.hpp"
#include "judgeaudit/schematic.hpp"
#include "judgeaudit/stats.hpp"
#include "judgeaudit/synthgen.hpp"

#include "oracles.hpp"

#include <httplib.h>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace judgeaudit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_seconds) {
    o.pass = false;
    o.detail += " [over the " + std::to_string(static_cast<int>(budget_seconds)) + " s budget]";
  }
  if (!o.pass) ++failures;
  char timing[32];
  std::snprintf(timing, sizeof timing, "%.2fs", secs);
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << timing << "): " << o.detail << std::endl;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

psychometric::ScoreCube cube_from(const std::vector<std::vector<std::vector<double>>>& table) {
  std::vector<std::string> f, q, o;
  for (std::size_t i = 0; i < table.size(); ++i) f.push_back("F" + std::to_string(i));
  for (std::size_t i = 0; i < table[0].size(); ++i) q.push_back("q" + std::to_string(i));
  for (std::size_t i = 0; i < table[0][0].size(); ++i) o.push_back("o" + std::to_string(i));
  psychometric::ScoreCube cube(f, q, o);
  for (std::size_t a = 0; a < table.size(); ++a)
    for (std::size_t b = 0; b < table[a].size(); ++b)
      for (std::size_t c = 0; c < table[a][b].size(); ++c) cube.at(a, b, c) = table[a][b][c];
  return cube;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& stdout_path) {
  const std::string cmd = std::string("\"") + JUDGEAUDIT_CLI + "\" " + args + " > \"" + stdout_path.string() + "\" 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---------------------------------------------------------------------------

Outcome sigmoid_endpoints() {
  const double mid = psychometric::sigmoid_normalize_clr(1.5);
  const double zero = psychometric::sigmoid_normalize_clr(0.0);
  const double two = psychometric::sigmoid_normalize_clr(2.0);
  const bool ok = mid == 0.5 && zero >= 0.045 && zero <= 0.050 && two >= 0.730 && two <= 0.732;
  return {ok, "clr_norm(1.5)=" + fmt(mid, 17) + " clr_norm(0)=" + fmt(zero, 6) + " clr_norm(2)=" + fmt(two, 6)};
}

Outcome nesting() {
  constexpr int kDatasets = 200;
  constexpr double kSlack = 1e-12;
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = INFINITY;
  int violations = 0;
  for (int d = 0; d < kDatasets; ++d) {
    synthgen::SyntheticConfig c;
    c.questions = 10;
    c.models = 11;  // 10 x 10 = 100 rows
    c.latent_dim = 1 + static_cast<std::size_t>(unit(rng) * 5) % 5;
    c.true_weights.clear();
    for (int j = 0; j < 5; ++j) c.true_weights.push_back(unit(rng) - 0.3);
    if (d % 3 == 0) c.interaction_terms.push_back({0, 1, unit(rng)});
    c.noise_sigma = 0.05 + 2.0 * unit(rng);
    c.model_effect_sigma = d % 2 ? 0.5 * unit(rng) : 0.0;
    c.seed = static_cast<std::uint64_t>(d);
    SampleMatrix s = d % 2 ? synthgen::generate(c).continuous : build_sample_matrix(synthgen::generate(c).set);
    double lin, poly;
    try {
      lin = schematic::fit_linear_schema(s).r_squared;
      poly = schematic::fit_polynomial_schema(s).r_squared;
    } catch (const NumericError&) {
      --d;  // constant overall after discretisation; draw another
      continue;
    }
    worst = std::min(worst, poly - lin);
    if (poly < lin - kSlack) ++violations;
  }
  return {violations == 0, std::to_string(kDatasets) + " datasets (m=100, k=5), min(r2_poly - r2_lin)=" + fmt(worst, 3) +
                               ", violations=" + std::to_string(violations)};
}

Outcome schematic_recovery() {
  constexpr double kTolerance = 0.04;
  constexpr double kRequiredShare = 0.95;
  constexpr int kSeeds = 20;
  const double targets[] = {0.1, 0.3, 0.5, 0.7, 0.9};
  int within = 0, runs = 0;
  std::ostringstream detail;
  for (double target : targets) {
    double disc_sum = 0.0, cont_sum = 0.0;
    for (int seed = 0; seed < kSeeds; ++seed) {
      synthgen::SyntheticConfig c;
      c.questions = 200;
      c.models = 11;  // m = 2000
      c.true_weights = {0.5, 0.3, 0.1, 0.05, 0.05};
      c.noise_sigma = synthgen::noise_for_target_r2(c, target);
      c.seed = 1000 + static_cast<std::uint64_t>(seed);
      const auto data = synthgen::generate(c);
      const double cont = schematic::fit_linear_schema(data.continuous).r_squared;
      const double disc = schematic::fit_linear_schema(build_sample_matrix(data.set)).r_squared;
      cont_sum += cont;
      disc_sum += disc;
      within += std::abs(cont - target) <= kTolerance;
      ++runs;
    }
    detail << " target " << target << ": continuous " << fmt(cont_sum / kSeeds, 3) << ", discretised "
           << fmt(disc_sum / kSeeds, 3) << ";";
  }
  const double share = static_cast<double>(within) / runs;
  return {share >= kRequiredShare,
          std::to_string(within) + "/" + std::to_string(runs) + " within +-0.04 (share " + fmt(share, 3) + ");" + detail.str()};
}

psychometric::PsychometricReport validity_of(const synthgen::SyntheticData& d) {
  const auto cube = psychometric::ScoreCube::from_sample(build_sample_matrix(d.set));
  return psychometric::psychometric_validity(cube, d.set.score_range);
}

Outcome factor_collapse() {
  constexpr double kMinSpearman = 0.9;
  constexpr double kMinHtmt = 0.9;
  constexpr double kMinGap = 0.2;
  synthgen::SyntheticConfig c;
  c.questions = 50;
  c.models = 41;  // m = 2000, 40 observation series per question
  c.model_effect_sigma = 1.0;
  c.noise_sigma = 0.5;
  c.seed = 77;

  c.latent_dim = 1;
  const auto collapsed = synthgen::generate(c);
  const auto corr = stats::spearman_matrix(build_sample_matrix(collapsed.set).factors);
  const auto bad = validity_of(collapsed);

  c.latent_dim = 5;
  const auto separable = validity_of(synthgen::generate(c));

  const double rho = corr.mean_off_diagonal();
  const double gap = separable.unified - bad.unified;
  const bool ok = rho >= kMinSpearman && bad.mean_htmt >= kMinHtmt && gap >= kMinGap;
  return {ok, "latent_dim=1: mean Spearman " + fmt(rho) + ", mean HTMT " + fmt(bad.mean_htmt) + ", unified " +
                  fmt(bad.unified) + "; latent_dim=5: unified " + fmt(separable.unified) + ", mean HTMT " +
                  fmt(separable.mean_htmt) + "; gap " + fmt(gap)};
}

Outcome cronbach_htmt_oracles() {
  constexpr double kTolerance = 1e-12;
  const std::vector<std::vector<double>> items{{1, 2, 3, 4}, {2, 2, 4, 5}, {1, 3, 3, 5}};
  const double alpha = psychometric::cronbach_alpha(cube_from({items}), 0);
  const double alpha_err = std::max(std::abs(alpha - oracle::cronbach(items)), std::abs(alpha - 70.0 / 73.0));

  const std::vector<double> a1{1, 2, 4, 3, 5, 2}, a2{2, 2, 5, 3, 4, 1};
  const std::vector<double> b1{3, 1, 2, 5, 4, 4}, b2{2, 1, 3, 5, 5, 3};
  const double h = psychometric::htmt(cube_from({{a1, a2}, {b1, b2}}), 0, 1);
  const double htmt_err = std::abs(h - oracle::htmt({a1, a2}, {b1, b2}));
  return {alpha_err <= kTolerance && htmt_err <= kTolerance,
          "alpha " + fmt(alpha, 12) + " (|err| " + fmt(alpha_err, 2) + "), HTMT " + fmt(h, 12) + " (|err| " +
              fmt(htmt_err, 2) + ")"};
}

std::vector<ranking::Battle> battles_of(std::initializer_list<std::tuple<const char*, const char*, ranking::Outcome, double, int>> rows) {
  std::vector<ranking::Battle> out;
  for (const auto& [a, b, o, w, n] : rows)
    for (int i = 0; i < n; ++i) out.push_back({a, b, o, w});
  return out;
}

std::vector<oracle::Duel> duels_of(const std::vector<ranking::Battle>& battles) {
  auto idx = [](const std::string& m) { return m == "A" ? 0 : m == "B" ? 1 : 2; };
  std::vector<oracle::Duel> out;
  for (const auto& b : battles) {
    const int a = idx(b.model_a), c = idx(b.model_b);
    if (b.outcome == ranking::Outcome::WinA) out.push_back({a, c, b.weight});
    if (b.outcome == ranking::Outcome::WinB) out.push_back({c, a, b.weight});
    if (b.outcome == ranking::Outcome::Tie) {
      out.push_back({a, c, 0.5 * b.weight});
      out.push_back({c, a, 0.5 * b.weight});
    }
  }
  return out;
}

Outcome bradley_terry() {
  constexpr double kOracleTolerance = 1e-6;
  constexpr double kResidualTolerance = 1e-4;
  constexpr int kRandomSets = 50;
  using ranking::Outcome;

  // Not separated: every model both wins and loses, so the MLE is interior.
  const auto battles = battles_of({{"A", "B", Outcome::WinA, 1, 3}, {"A", "B", Outcome::WinB, 1, 1},
                                   {"B", "C", Outcome::WinA, 1, 3}, {"C", "B", Outcome::WinA, 1, 1},
                                   {"A", "C", Outcome::WinA, 3, 1}, {"A", "C", Outcome::WinB, 1, 1}});
  const auto fit = ranking::bt_mle(battles, "A");
  const auto expect = oracle::bt_grid_3(duels_of(battles), ranking::BtOptions{}.l2);
  const double oracle_err =
      std::max(std::abs(fit.ratings.at("B") - expect[1]), std::abs(fit.ratings.at("C") - expect[2]));

  // The separated multiset {A>B x3, B>C x3, A>C x1 (w3)} has no finite MLE; the
  // regulariser caps it and the score equations still hold.
  const auto sep_battles = battles_of({{"A", "B", Outcome::WinA, 1, 3}, {"B", "C", Outcome::WinA, 1, 3},
                                       {"A", "C", Outcome::WinA, 3, 1}});
  const auto sep = ranking::bt_mle(sep_battles, "A");
  const bool sep_ok = sep.separated && std::isfinite(sep.ratings.at("C")) && sep.ratings.at("C") < sep.ratings.at("B") &&
                      sep.max_score_residual < kResidualTolerance;

  std::mt19937_64 rng(99);
  double worst_residual = 0.0;
  for (int s = 0; s < kRandomSets; ++s) {
    const int models = 3 + s % 8;
    std::uniform_int_distribution<int> pick(0, models - 1), outcome(0, 2);
    std::bernoulli_distribution strong(0.3);
    std::vector<ranking::Battle> set;
    for (int i = 0; i < models; ++i)
      set.push_back({"m" + std::to_string(i), "m" + std::to_string((i + 1) % models), Outcome::Tie, 1.0});
    for (int n = 0; n < 30 * models; ++n) {
      const int a = pick(rng), b = pick(rng);
      if (a != b)
        set.push_back({"m" + std::to_string(a), "m" + std::to_string(b), static_cast<Outcome>(outcome(rng)),
                       strong(rng) ? 3.0 : 1.0});
    }
    const auto t = ranking::bt_mle(set, "m0");
    worst_residual = std::max(worst_residual, ranking::score_residual(set, t.ratings));
  }

  const auto sym = ranking::ratings_to_winrates(
      ranking::bt_mle(battles_of({{"A", "B", Outcome::WinA, 1, 5}, {"A", "B", Outcome::WinB, 1, 5},
                                  {"B", "A", Outcome::WinA, 3, 2}, {"B", "A", Outcome::WinB, 3, 2}}),
                      "A"),
      "A");
  const double sym_rate = sym.win_rates.at("B");

  const bool ok = oracle_err <= kOracleTolerance && worst_residual < kResidualTolerance && sym_rate == 0.5 && sep_ok;
  return {ok, "grid oracle |err| " + fmt(oracle_err, 2) + ", max score residual over " + std::to_string(kRandomSets) +
                  " sets " + fmt(worst_residual, 2) + ", symmetric win rate " + fmt(sym_rate, 17) +
                  ", separated case capped: " + (sep_ok ? "yes" : "no") + " (C=" + fmt(sep.ratings.at("C")) + ")"};
}

Outcome elo_collapse() {
  constexpr double kMaxRawR2 = 0.6;
  constexpr double kMinCollapseR2 = 0.99;
  constexpr int kSeeds = 10;
  constexpr std::size_t kModels = 12;
  double worst_raw = 0.0, worst_collapse = 1.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    synthgen::SyntheticConfig c;
    c.questions = 1200;
    c.models = kModels;
    c.transitive_quality = std::vector<double>(kModels);
    for (std::size_t i = 0; i < kModels; ++i) (*c.transitive_quality)[i] = 0.15 * static_cast<double>(i);
    c.noise_sigma = synthgen::noise_for_target_r2(c, 0.5);
    c.seed = 4242 + static_cast<std::uint64_t>(seed);
    const auto data = synthgen::generate(c);
    worst_raw = std::max(worst_raw, schematic::schematic_adherence(build_sample_matrix(data.set)).r2_schematic);
    worst_collapse = std::min(worst_collapse, ranking::collapse_analysis(data.set, "model-00").r2_linear);
  }
  const bool ok = worst_raw <= kMaxRawR2 && worst_collapse >= kMinCollapseR2;
  return {ok, std::to_string(kSeeds) + " seeds, " + std::to_string(kModels) + " models: max raw schematic R2 " +
                  fmt(worst_raw) + ", min collapse r2_linear " + fmt(worst_collapse, 6)};
}

// Chat-completions stand-in whose replies depend only on the request.
class MockJudge {
 public:
  MockJudge() {
    server_.Post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      const std::string user = body["messages"][1]["content"];
      const char* tokens[] = {"A>>B", "A>B", "A=B", "B>A", "B>>A"};
      std::size_t h = std::hash<std::string>{}(user);
      std::string reply = "Reasoning.\n";
      for (const char* c : {"Correctness", "Completeness", "Safety", "Conciseness", "Style"}) {
        reply += std::string(c) + ": ((" + tokens[h % 5] + "))\n";
        h /= 5;
      }
      reply += std::string("My final verdict is: [[") + tokens[h % 5] + "]]";
      res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockJudge() {
    server_.stop();
    thread_.join();
  }
  int port() const { return port_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "judgeaudit_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  MockJudge judge;
  ::setenv("JUDGEAUDIT_ACCEPTANCE_KEY", "k", 1);

  {
    std::ofstream(dir / "setting.yaml") << "name: determinism\nmetrics:\n  bootstrap_iterations: 30\n  imputations: 3\n";
    std::ofstream(dir / "judge.yaml") << "base_url: http://127.0.0.1:" << judge.port()
                                      << "/v1\nmodel: mock\napi_key_env: JUDGEAUDIT_ACCEPTANCE_KEY\nmax_in_flight: 4\n";
    std::ofstream tasks(dir / "tasks.jsonl");
    for (int i = 0; i < 24; ++i) {
      tasks << json{{"question_id", "q" + std::to_string(i)}, {"question", "Question " + std::to_string(i)},
                    {"response_a", "answer a" + std::to_string(i)}, {"response_b", "answer b" + std::to_string(i * 7)},
                    {"model_a", "base"}, {"model_b", "m" + std::to_string(i % 3)}}
                   .dump()
            << "\n";
    }
  }

  const std::string g = "--seed 7 --jobs 4 ";
  // Each entry produces files under a run directory; both runs must match byte for byte.
  struct Step {
    std::string name;
    std::function<std::string(const fs::path&)> args;  // given the run directory
    std::vector<std::string> outputs;
  };
  const std::string d = (dir / "data.jsonl").string();
  const std::vector<Step> steps{
      {"synth", [&](const fs::path& r) { return g + "synth --questions 40 --models 12 --transitive 1.5 --model-effect 0.6 --missing-rate 0.02 --out " + (r / "synth.jsonl").string(); }, {"synth.jsonl", "synth.truth.json", "synth.stdout"}},
      {"ingest", [&](const fs::path& r) { return g + "ingest --in " + d + " --out " + (r / "ingest.jsonl").string(); }, {"ingest.jsonl", "ingest.stdout"}},
      {"audit", [&](const fs::path& r) { return g + "audit --setting " + (dir / "setting.yaml").string() + " --data " + d + " --out " + (r / "audit.json").string() + " --plots " + (r / "plots").string(); }, {"audit.json", "plots/variance_decomposition.csv", "plots/correlations.csv", "plots/loadings.csv", "plots/collapse.csv"}},
      {"rank", [&](const fs::path& r) { return g + "rank --data " + d + " --iterations 50 --leaderboard " + (r / "board.csv").string(); }, {"rank.stdout", "board.csv"}},
      {"collapse", [&](const fs::path& r) { return g + "collapse --data " + d; }, {"collapse.stdout"}},
      {"report", [&](const fs::path& r) { return g + "--format md report --in " + (r / "audit.json").string(); }, {"report.stdout"}},
      {"judge-run", [&](const fs::path& r) { return g + "judge-run --config " + (dir / "judge.yaml").string() + " --tasks " + (dir / "tasks.jsonl").string() + " --out " + (r / "judged.jsonl").string(); }, {"judged.jsonl", "judge-run.stdout"}},
  };

  // Shared input for the analysis subcommands.
  if (run_cli(g + "synth --questions 40 --models 12 --transitive 1.5 --model-effect 0.6 --missing-rate 0.02 --out " + d,
              dir / "seed.stdout") != 0) {
    return {false, "could not synthesise the shared input"};
  }

  std::vector<std::string> mismatched;
  std::size_t compared = 0;
  for (const char* run : {"run1", "run2"}) fs::create_directories(dir / run);
  for (const auto& step : steps) {
    for (const char* run : {"run1", "run2"}) {
      const int code = run_cli(step.args(dir / run), dir / run / (step.name + ".stdout"));
      if (code != 0) return {false, step.name + " exited with " + std::to_string(code)};
    }
    for (const auto& out : step.outputs) {
      const auto a = slurp(dir / "run1" / out), b = slurp(dir / "run2" / out);
      ++compared;
      if (a.empty() || report::sha256_hex(a) != report::sha256_hex(b)) mismatched.push_back(out);
    }
  }
  ::unsetenv("JUDGEAUDIT_ACCEPTANCE_KEY");
  fs::remove_all(dir);
  std::string detail = std::to_string(steps.size()) + " subcommands, " + std::to_string(compared) +
                       " outputs hash-compared across two runs";
  if (!mismatched.empty()) {
    detail += "; differing or empty:";
    for (const auto& m : mismatched) detail += " " + m;
  }
  return {mismatched.empty(), detail};
}

Outcome deviation_accounting() {
  // judge x setting groups with planted flag counts per criterion.
  struct Plan {
    std::string judge, setting;
    std::size_t total;
    std::vector<std::size_t> flagged;  // five criteria then overall
  };
  const std::vector<Plan> plans{{"judge-a", "setting1", 1000, {1, 0, 3, 0, 0, 2}},
                                {"judge-a", "setting2", 400, {400, 400, 400, 400, 400, 400}},
                                {"judge-b", "setting1", 250, {0, 5, 0, 10, 25, 0}}};
  JudgmentSet set;
  std::size_t planted = 0;
  for (const auto& p : plans) {
    for (std::size_t i = 0; i < p.total; ++i) {
      JudgmentRecord r;
      r.question_id = "q" + std::to_string(i);
      r.model_a = "base";
      r.model_b = "m";
      r.judge = p.judge;
      r.setting = p.setting;
      r.factor_verdicts.assign(5, VerdictLabel::Tie);
      r.overall_verdict = VerdictLabel::BetterA;
      r.deviation_flags.assign(6, false);
      for (std::size_t c = 0; c < 6; ++c) {
        if (i < p.flagged[c]) {
          r.deviation_flags[c] = true;
          (c < 5 ? r.factor_verdicts[c] : r.overall_verdict).reset();
        }
      }
      set.records.push_back(r);
    }
    for (auto f : p.flagged) planted += f;
  }
  // Shuffle so grouping cannot rely on input order.
  std::shuffle(set.records.begin(), set.records.end(), std::mt19937_64(5));
  const GroupKey keys[] = {GroupKey::Judge, GroupKey::Setting};
  const auto table = deviation_rates(set, keys);

  bool ok = table.rows.size() == plans.size() && table.total_flagged() == planted &&
            table.group_by == std::vector<std::string>{"judge", "setting"} && table.criteria == rubric_criteria();
  for (std::size_t g = 0; ok && g < plans.size(); ++g) {
    const auto& row = table.rows[g];
    const auto& p = plans[g];
    ok = row.group == std::vector<std::string>{p.judge, p.setting} && row.total == p.total;
    double sum = 0.0;
    for (std::size_t c = 0; ok && c < 5; ++c) {
      const double expect = 100.0 * static_cast<double>(p.flagged[c]) / static_cast<double>(p.total);
      ok = row.flagged[c] == p.flagged[c] && row.percent[c] == expect;
      sum += expect;
    }
    ok = ok && row.average == sum / 5.0 &&
         row.overall_percent == 100.0 * static_cast<double>(p.flagged[5]) / static_cast<double>(p.total);
  }
  const auto csv = report::deviation_csv(table);
  const std::string expected_csv =
      "judge,setting,Correctness,Completeness,Safety,Conciseness,Style,overall,average\n"
      "judge-a,setting1,0.1,0,0.3,0,0,0.2,0.08\n"
      "judge-a,setting2,100,100,100,100,100,100,100\n"
      "judge-b,setting1,0,2,0,4,10,0,3.2\n";
  ok = ok && csv == expected_csv;
  return {ok, std::to_string(table.rows.size()) + " groups, " + std::to_string(table.total_flagged()) +
                  " flags recounted; csv " + (csv == expected_csv ? "matches" : "differs:\n" + csv)};
}

Outcome bootstrap_sanity() {
  constexpr int kSeeds = 10;
  constexpr int kIterations = 200;
  constexpr double kRelTolerance = 0.25;
  const std::vector<double> constant(300, 3.0);
  const auto flat = stats::bootstrap(
      [&](std::span<const std::size_t> rows) {
        double s = 0;
        for (auto r : rows) s += constant[r];
        return s / static_cast<double>(rows.size());
      },
      constant.size(), kIterations, 1);
  const bool degenerate = flat.lower == 3.0 && flat.upper == 3.0;

  double small_width = 0.0, large_width = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    synthgen::SyntheticConfig c;
    c.models = 6;
    c.transitive_quality = std::vector<double>{0, 0.1, 0.2, 0.3, 0.4, 0.5};
    c.seed = 300 + static_cast<std::uint64_t>(seed);
    ranking::BootstrapOptions opt;
    opt.iterations = kIterations;
    opt.seed = static_cast<std::uint64_t>(seed);
    opt.jobs = 4;
    for (std::size_t questions : {100u, 200u}) {
      c.questions = questions;
      const auto t = ranking::bootstrap_ratings(synthgen::generate(c).set, "overall", "model-00", opt);
      double w = 0.0;
      for (const auto& [m, ci] : t.ci)
        if (m != "model-00") w += ci.second - ci.first;
      (questions == 100 ? small_width : large_width) += w;
    }
  }
  const double ratio = small_width / large_width;
  const bool shrink = std::abs(ratio / std::sqrt(2.0) - 1.0) <= kRelTolerance;
  return {degenerate && shrink, "constant statistic interval [" + fmt(flat.lower) + ", " + fmt(flat.upper) +
                                    "]; width ratio n vs 2n over " + std::to_string(kSeeds) + " seeds " + fmt(ratio) +
                                    " (sqrt 2 = 1.414, +-25%)"};
}

}  // namespace

int main() {
  criterion("sigmoid normalization endpoints", 1, sigmoid_endpoints);
  criterion("nesting r2_polynomial >= r2_linear", 10, nesting);
  criterion("schematic recovery", 60, schematic_recovery);
  criterion("factor collapse detection", 30, factor_collapse);
  criterion("cronbach alpha and HTMT hand oracles", 1, cronbach_htmt_oracles);
  criterion("bradley-terry correctness", 30, bradley_terry);
  criterion("ELO collapse reproduction", 60, elo_collapse);
  criterion("determinism of every subcommand", 60, determinism);
  criterion("deviation accounting", 1, deviation_accounting);
  criterion("bootstrap sanity", 120, bootstrap_sanity);
  std::cout << (failures ? "FAILED: " : "ALL PASSED: ") << failures << " of 10 criteria failed" << std::endl;
  return failures ? 1 : 0;
}
