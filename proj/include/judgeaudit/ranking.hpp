#pragma once
// Weighted Bradley-Terry ratings from pairwise Likert verdicts, win rates
// against a baseline, bootstrap intervals and the rating-collapse regression.
//
// Ratings use the natural-log parameterisation: P(i beats j) = 1 / (1 + e^(r_j - r_i)).

#include "judgeaudit/judgment.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace judgeaudit::ranking {

enum class Outcome { WinA, WinB, Tie };

struct Battle {
  std::string model_a;
  std::string model_b;
  Outcome outcome = Outcome::Tie;
  double weight = 1.0;
};

enum class TiePolicy { HalfWins, Drop };

struct BtOptions {
  double tolerance = 1e-8;
  int max_iter = 10000;
  double l2 = 1e-6;
  TiePolicy ties = TiePolicy::HalfWins;
};

struct RatingTable {
  std::string baseline;
  std::map<std::string, double> ratings;  // baseline is exactly 0
  std::map<std::string, double> win_rates;
  std::map<std::string, std::pair<double, double>> ci;
  int iterations = 0;         // bootstrap iterations, 0 for a point fit
  int sweeps = 0;             // optimizer sweeps of the point fit
  bool separated = false;     // some model never loses or never wins against its component
  double max_score_residual = 0.0;

  std::vector<std::string> models() const;
};

/// A criterion name or "overall".
using Target = std::string;

/// Likert 1/5 -> decisive win (weight 3), 2/4 -> win (1), 3 -> tie (1).
/// Missing cells produce no battle; deviations read as ties.
std::vector<Battle> judgments_to_battles(const JudgmentSet& set, const Target& target);

/// Regularised weighted Bradley-Terry MLE by cyclic coordinate ascent with
/// re-centring, anchored afterwards so the baseline rating is 0.
RatingTable bt_mle(const std::vector<Battle>& battles, const std::string& baseline, const BtOptions& options = {});

/// Fills win_rates from ratings.
RatingTable ratings_to_winrates(RatingTable table, const std::string& baseline);

double logistic(double x) noexcept;
/// 1000 + 400 / ln 10 * rating, for display only.
double elo_display(double rating) noexcept;

/// Weighted log-likelihood of the battles under `ratings`, ties split per the policy.
double log_likelihood(const std::vector<Battle>& battles, const std::map<std::string, double>& ratings,
                      TiePolicy ties = TiePolicy::HalfWins);

/// Largest |observed - expected| weighted win count at `ratings` (regulariser included).
double score_residual(const std::vector<Battle>& battles, const std::map<std::string, double>& ratings,
                      const BtOptions& options = {});

struct BootstrapOptions {
  int iterations = 100;
  std::uint64_t seed = 0;
  double level = 0.95;
  unsigned jobs = 1;
  BtOptions bt;
};

/// Resamples records (not battles) with replacement and refits each time.
RatingTable bootstrap_ratings(const JudgmentSet& set, const Target& target, const std::string& baseline,
                              const BootstrapOptions& options = {});

struct CollapseReport {
  std::vector<std::string> criteria;
  std::vector<std::string> models;
  std::map<std::string, RatingTable> per_factor;
  RatingTable overall;
  double r2_linear = 0.0;
  double r2_polynomial = 0.0;
  bool polynomial_underdetermined = false;
  std::vector<double> linear_weights;  // intercept first
  std::size_t regression_rows = 0;
  std::size_t regression_coefficients = 0;

  double unexplained_percent() const { return 100.0 * (1.0 - std::max(r2_linear, r2_polynomial)); }
};

struct CollapseOptions {
  BootstrapOptions bootstrap;
  bool with_intervals = false;
  int polynomial_degree = 2;
};

CollapseReport collapse_analysis(const JudgmentSet& set, const std::string& baseline,
                                 const CollapseOptions& options = {});

/// Most frequent model_a, ties broken alphabetically.
std::string default_baseline(const JudgmentSet& set);

nlohmann::json to_json(const RatingTable& table);
nlohmann::json to_json(const CollapseReport& report);
/// model,rating,elo_display,win_rate,ci_low,ci_high
std::string leaderboard_csv(const RatingTable& table);

}  // namespace judgeaudit::ranking
