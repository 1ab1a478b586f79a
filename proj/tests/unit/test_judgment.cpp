#include <doctest.h>

#include "judgeaudit/error.hpp"
#include "judgeaudit/judgment.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace judgeaudit;

namespace {

std::string row(const std::string& q, const std::string& overall, const std::string& style = "\"A=B\"",
                const std::string& judge = "j1", const std::string& setting = "s1") {
  return "{\"question_id\":\"" + q + "\",\"model_a\":\"base\",\"model_b\":\"m1\",\"judge\":\"" + judge +
         "\",\"setting\":\"" + setting +
         "\",\"factor_verdicts\":{\"Correctness\":\"A>>B\",\"Completeness\":\"A>B\",\"Safety\":\"A=B\","
         "\"Conciseness\":\"B>A\",\"Style\":" +
         style + "}" + (overall.empty() ? "" : ",\"overall_verdict\":" + overall) + "}\n";
}

JudgmentRecord make_record(const std::string& q, std::vector<double> factors, double overall,
                           const std::string& obs = "m1") {
  JudgmentRecord r;
  r.question_id = q;
  r.model_a = "base";
  r.model_b = obs;
  r.judge = "j";
  r.setting = "s";
  auto label = [](double v) -> std::optional<VerdictLabel> {
    if (std::isnan(v)) return std::nullopt;
    return static_cast<VerdictLabel>(static_cast<int>(v) - 1);
  };
  for (double f : factors) r.factor_verdicts.push_back(label(f));
  r.overall_verdict = label(overall);
  r.deviation_flags.assign(factors.size() + 1, false);
  return r;
}

}  // namespace

TEST_CASE("parse_verdict examples") {
  CHECK(parse_verdict("My final verdict is tie: [[A=B]]", VerdictMarker::OverallBrackets) == VerdictLabel::Tie);
  CHECK(parse_verdict("Completeness: ((A>>B))", VerdictMarker::FactorParens, "Completeness") == VerdictLabel::MuchBetterA);
  CHECK_FALSE(parse_verdict("no verdict here", VerdictMarker::OverallBrackets));
  CHECK_FALSE(parse_verdict("", VerdictMarker::FactorParens, "Style"));
}

TEST_CASE("parse_verdict takes the last occurrence and respects the criterion") {
  const std::string text =
      "Correctness: ((A>B))\nStyle: ((B>>A))\nOn reflection, Correctness: ((B>A))\n"
      "My final verdict is [[A>B]] ... actually [[B>>A]]";
  CHECK(parse_verdict(text, VerdictMarker::FactorParens, "Correctness") == VerdictLabel::BetterB);
  CHECK(parse_verdict(text, VerdictMarker::FactorParens, "Style") == VerdictLabel::MuchBetterB);
  CHECK_FALSE(parse_verdict(text, VerdictMarker::FactorParens, "Safety"));
  CHECK(parse_verdict(text, VerdictMarker::OverallBrackets) == VerdictLabel::MuchBetterB);
  CHECK(parse_verdict("**Safety**: (( A = B ))", VerdictMarker::FactorParens, "safety") == VerdictLabel::Tie);
}

TEST_CASE("likert mapping and round trip over the canonical strings") {
  CHECK(verdict_to_likert(VerdictLabel::Tie) == 3);
  CHECK(verdict_to_likert(VerdictLabel::MuchBetterA) == 1);
  CHECK(verdict_to_likert(VerdictLabel::MuchBetterB) == 5);
  const char* canon[] = {"[[A>>B]]", "[[A>B]]", "[[A=B]]", "[[B>A]]", "[[B>>A]]"};
  for (int i = 0; i < 5; ++i) {
    const auto label = parse_verdict(std::string("My final verdict is: ") + canon[i], VerdictMarker::OverallBrackets);
    REQUIRE(label);
    CHECK(verdict_to_likert(*label) == i + 1);
    CHECK(verdict_string(*label) == canon[i]);
    CHECK(verdict_from_string(verdict_token(*label)) == label);
  }
}

TEST_CASE("jsonl ingestion") {
  std::istringstream clean(row("q1", "\"[[A=B]]\"") + row("q2", "\"B>A\""));
  const auto set = parse_jsonl(clean);
  REQUIRE(set.records.size() == 2);
  CHECK_FALSE(set.records[0].any_flagged());
  CHECK(set.records[1].overall_score() == 4);
  CHECK(set.records[0].factor_score(0) == 1);

  std::istringstream no_overall(row("q1", ""));
  const auto flagged = parse_jsonl(no_overall);
  CHECK(flagged.records[0].overall_flagged());
  CHECK(flagged.records[0].overall_score() == 3);

  std::istringstream missing(row("q1", "null", "null"));
  const auto miss = parse_jsonl(missing);
  CHECK_FALSE(miss.records[0].any_flagged());
  CHECK(std::isnan(miss.records[0].factor_score(4)));
  CHECK(miss.missing_cells() == 2);
  CHECK_THROWS_AS(build_sample_matrix(miss), InputError);

  std::istringstream bad_criterion(
      "{\"question_id\":\"q\",\"model_a\":\"a\",\"model_b\":\"b\",\"judge\":\"j\",\"setting\":\"s\","
      "\"factor_verdicts\":{\"Accuracy\":\"A>B\"},\"overall_verdict\":\"A>B\"}\n");
  CHECK_THROWS_WITH_AS(parse_jsonl(bad_criterion),
                       doctest::Contains("Correctness, Completeness, Safety, Conciseness, Style"), InputError);

  std::istringstream no_model(row("q1", "\"A>B\"") + "{\"question_id\":\"q\"}\n");
  CHECK_THROWS_WITH_AS(parse_jsonl(no_model), doctest::Contains("row 2"), InputError);
}

TEST_CASE("csv ingestion matches jsonl") {
  std::istringstream csv(
      "question_id,model_a,model_b,judge,setting,Correctness,Completeness,Safety,Conciseness,Style,overall,raw_text\n"
      "q1,base,m1,j1,s1,A>>B,A>B,A=B,B>A,A=B,[[A=B]],\"multi\nline, text\"\n"
      "q2,base,m1,j1,s1,A>>B,A>B,A=B,B>A,garbage,NA,\n");
  const auto set = parse_csv(csv);
  REQUIRE(set.records.size() == 2);
  CHECK(set.records[0].raw_text == "multi\nline, text");
  CHECK(set.records[1].factor_flagged(4));
  CHECK(set.records[1].factor_score(4) == 3);
  CHECK(std::isnan(set.records[1].overall_score()));

  std::istringstream unknown("question_id,model_a,model_b,judge,setting,Accuracy\n");
  CHECK_THROWS_AS(parse_csv(unknown), InputError);
}

TEST_CASE("jsonl round trip") {
  std::istringstream in(row("q1", "\"[[A=B]]\"") + row("q2", "") + row("q3", "null"));
  const auto set = parse_jsonl(in);
  std::ostringstream out;
  write_jsonl(set, out);
  std::istringstream again(out.str());
  const auto back = parse_jsonl(again);
  REQUIRE(back.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.records[i].deviation_flags == set.records[i].deviation_flags);
    CHECK(back.records[i].factor_verdicts == set.records[i].factor_verdicts);
    CHECK(back.records[i].overall_verdict == set.records[i].overall_verdict);
  }
}

TEST_CASE("parse_raw_verdicts and raw_text independence") {
  JudgmentRecord r;
  r.raw_text = "Correctness: ((A>B))\nCompleteness: ((A=B))\nConciseness: ((B>>A))\nStyle: ((A>>B))\n"
               "My final verdict is: [[B>A]]";
  const auto criteria = rubric_criteria();
  parse_raw_verdicts(r, criteria);
  CHECK(r.factor_flagged(2));
  CHECK(r.factor_score(2) == 3);
  CHECK(r.factor_score(0) == 2);
  CHECK(r.overall_score() == 4);
  auto again = r;
  parse_raw_verdicts(again, criteria);
  CHECK(again.factor_verdicts == r.factor_verdicts);

  JudgmentSet set;
  for (int i = 0; i < 4; ++i) set.records.push_back(make_record("q" + std::to_string(i), {1, 2, 3, 4, 5}, 2 + i % 3));
  set.records[0].raw_text = "anything";
  const auto a = build_sample_matrix(set);
  for (auto& rec : set.records) rec.raw_text.reset();
  const auto b = build_sample_matrix(set);
  CHECK(a.factors == b.factors);
  CHECK(a.overall == b.overall);
}

TEST_CASE("build_sample_matrix") {
  JudgmentSet set;
  set.records.push_back(make_record("q1", {3, 3, 3, 3, 3}, 3));
  set.records.push_back(make_record("q2", {3, 3, 3, 3, 3}, 3));
  auto s = build_sample_matrix(set);
  CHECK(s.factors.rows() == 2);
  CHECK((s.factors.array() == 3).all());
  CHECK(s.overall == Eigen::Vector2d(3, 3));

  set.records[1].factor_verdicts[0] = VerdictLabel::MuchBetterB;
  set.records[1].factor_verdicts[4].reset();
  set.records[1].deviation_flags[4] = true;
  s = build_sample_matrix(set);
  CHECK(s.factors(1, 0) == 5);
  CHECK(s.factors(1, 4) == 3);
  CHECK_FALSE(s.imputed_mask(1, 4));
  const GroupKey keys[] = {GroupKey::Judge};
  CHECK(deviation_rates(set, keys).total_flagged() == 1);
}

TEST_CASE("deviation_rates") {
  JudgmentSet set;
  for (int i = 0; i < 1000; ++i) set.records.push_back(make_record("q", {1, 2, 3, 4, 5}, 3));
  set.records[17].factor_verdicts[2].reset();
  set.records[17].deviation_flags[2] = true;
  const GroupKey keys[] = {GroupKey::Judge, GroupKey::Setting};
  auto t = deviation_rates(set, keys);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.group_by == std::vector<std::string>{"judge", "setting"});
  CHECK(t.rows[0].percent[2] == doctest::Approx(0.1));
  CHECK(t.rows[0].average == doctest::Approx(0.02));
  CHECK(t.rows[0].percent[0] == 0.0);

  for (auto& r : set.records) r.deviation_flags.assign(6, true);
  t = deviation_rates(set, keys);
  for (double p : t.rows[0].percent) CHECK(p == 100.0);
  CHECK(t.rows[0].average == 100.0);
  CHECK(t.total_flagged() == 6000);

  JudgmentSet empty;
  CHECK_THROWS_AS(deviation_rates(empty, keys), InputError);
}

TEST_CASE("impute_missing") {
  JudgmentSet set;
  for (int i = 0; i < 30; ++i) set.records.push_back(make_record("q" + std::to_string(i), {double(1 + i % 5), 3, 2, 4, 3}, 1 + (i * 7) % 5));
  auto full = impute_missing(set, 3, 1);
  REQUIRE(full.matrices.size() == 3);
  CHECK(full.matrices[0].factors == full.matrices[2].factors);
  CHECK_FALSE(full.matrices[0].imputed_mask.any());

  set.records[4].factor_verdicts[1].reset();
  const auto a = impute_missing(set, 2, 9);
  const auto b = impute_missing(set, 2, 9);
  CHECK(a.matrices[0].factors == b.matrices[0].factors);
  CHECK(a.matrices[1].factors == b.matrices[1].factors);
  CHECK(a.matrices[0].imputed_mask(4, 1));
  for (const auto& m : a.matrices) {
    CHECK(m.factors.minCoeff() >= 1.0);
    CHECK(m.factors.maxCoeff() <= 5.0);
  }

  CHECK_THROWS_AS(impute_missing(set, 0, 1), InputError);
  CHECK_THROWS_AS(impute_missing(JudgmentSet{}, 1, 1), InputError);

  auto with_blank = set;
  with_blank.records.push_back(make_record("qz", {NAN, NAN, NAN, NAN, NAN}, NAN));
  CHECK(impute_missing(with_blank, 1, 1).dropped_rows == 1);
}

TEST_CASE("impute_missing recovers a duplicated column") {
  int close = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed + 500);
    std::uniform_int_distribution<int> ud(1, 5);
    JudgmentSet set;
    for (int i = 0; i < 60; ++i) {
      const double f1 = ud(rng);
      set.records.push_back(make_record("q" + std::to_string(i), {f1, f1, double(ud(rng)), double(ud(rng)), double(ud(rng))},
                                        ud(rng)));
    }
    const double truth = set.records[7].factor_score(0);
    set.records[7].factor_verdicts[1].reset();
    const auto out = impute_missing(set, 1, seed);
    if (std::abs(out.matrices[0].factors(7, 1) - truth) <= 0.5) ++close;
  }
  CHECK(close >= 95);
}

TEST_CASE("utf8 validation") {
  CHECK(valid_utf8("plain"));
  CHECK(valid_utf8("caf\xC3\xA9"));
  CHECK_FALSE(valid_utf8("\xC3"));
  CHECK_FALSE(valid_utf8("\xFF\xFE"));
}
