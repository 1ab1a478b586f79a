#include "judgeaudit/ranking.hpp"

#include "judgeaudit/error.hpp"
#include "judgeaudit/parallel.hpp"
#include "judgeaudit/schematic.hpp"
#include "judgeaudit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace judgeaudit::ranking {

using nlohmann::json;

namespace {

// Pairwise weight totals after tie expansion: wins(i, j) is the weight of i beating j.
struct Tally {
  std::vector<std::string> models;
  std::map<std::string, std::size_t> index;
  Eigen::MatrixXd wins;
};

Tally tally(const std::vector<Battle>& battles, TiePolicy ties) {
  Tally t;
  for (const auto& b : battles) {
    t.index.emplace(b.model_a, 0);
    t.index.emplace(b.model_b, 0);
  }
  for (auto& [name, i] : t.index) {
    i = t.models.size();
    t.models.push_back(name);
  }
  const auto n = static_cast<Eigen::Index>(t.models.size());
  t.wins = Eigen::MatrixXd::Zero(n, n);
  for (const auto& b : battles) {
    if (!(b.weight > 0.0)) throw InputError("battle weight must be positive");
    if (b.model_a == b.model_b) continue;
    const auto a = static_cast<Eigen::Index>(t.index.at(b.model_a));
    const auto c = static_cast<Eigen::Index>(t.index.at(b.model_b));
    switch (b.outcome) {
      case Outcome::WinA: t.wins(a, c) += b.weight; break;
      case Outcome::WinB: t.wins(c, a) += b.weight; break;
      case Outcome::Tie:
        if (ties == TiePolicy::HalfWins) {
          t.wins(a, c) += 0.5 * b.weight;
          t.wins(c, a) += 0.5 * b.weight;
        }
        break;
    }
  }
  return t;
}

std::vector<std::vector<std::string>> components(const Tally& t) {
  const auto n = t.models.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (t.wins(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.0) parent[find(i)] = find(j);
    }
  }
  std::map<std::size_t, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(t.models[i]);
  std::vector<std::vector<std::string>> out;
  for (auto& [root, names] : groups) out.push_back(std::move(names));
  return out;
}

// The unregularised MLE exists only when the directed win graph is strongly connected.
bool strongly_connected(const Eigen::MatrixXd& wins) {
  const auto n = wins.rows();
  if (n <= 1) return true;
  for (bool forward : {true, false}) {
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    std::vector<Eigen::Index> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (Eigen::Index v = 0; v < n; ++v) {
        const double w = forward ? wins(u, v) : wins(v, u);
        if (w > 0.0 && !seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = true;
          stack.push_back(v);
        }
      }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) return false;
  }
  return true;
}

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

// Gradient of the penalised log-likelihood for coordinate i.
double coordinate_gradient(const Eigen::MatrixXd& wins, const Eigen::VectorXd& theta, Eigen::Index i, double ti,
                           double l2, double* curvature) {
  double g = -l2 * ti;
  double h = -l2;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    if (j == i) continue;
    const double n = wins(i, j) + wins(j, i);
    if (n == 0.0) continue;
    const double p = sigmoid(ti - theta(j));
    g += wins(i, j) - n * p;
    h -= n * p * (1.0 - p);
  }
  if (curvature) *curvature = h;
  return g;
}

// g is strictly decreasing in ti; Newton steps with a bisection bracket.
double solve_coordinate(const Eigen::MatrixXd& wins, const Eigen::VectorXd& theta, Eigen::Index i, double l2) {
  double x = theta(i);
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 100; ++it) {
    double h = 0.0;
    const double g = coordinate_gradient(wins, theta, i, x, l2, &h);
    if (std::abs(g) < 1e-13) break;
    if (g > 0.0) lo = x; else hi = x;
    double next = x - g / h;
    if (!(next > lo && next < hi)) {
      if (std::isfinite(lo) && std::isfinite(hi)) {
        next = 0.5 * (lo + hi);
      } else {
        next = g > 0.0 ? x + std::max(1.0, std::abs(x)) : x - std::max(1.0, std::abs(x));
      }
    }
    if (std::abs(next - x) < 1e-15 * std::max(1.0, std::abs(x))) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

std::optional<Battle> battle_from_score(const JudgmentRecord& r, double s) {
  if (std::isnan(s)) return std::nullopt;
  Battle b{r.model_a, r.model_b, Outcome::Tie, 1.0};
  const int likert = static_cast<int>(std::lround(s));
  switch (likert) {
    case 1: b.outcome = Outcome::WinA; b.weight = 3.0; break;
    case 2: b.outcome = Outcome::WinA; break;
    case 3: break;
    case 4: b.outcome = Outcome::WinB; break;
    case 5: b.outcome = Outcome::WinB; b.weight = 3.0; break;
    default: throw InputError("verdict score outside 1..5");
  }
  return b;
}

json table_json(const RatingTable& t) {
  json j;
  j["baseline"] = t.baseline;
  json models = json::object();
  for (const auto& [m, r] : t.ratings) {
    json row;
    row["rating"] = r;
    row["elo_display"] = elo_display(r);
    if (auto w = t.win_rates.find(m); w != t.win_rates.end()) row["win_rate"] = w->second;
    if (auto c = t.ci.find(m); c != t.ci.end()) {
      row["ci_low"] = c->second.first;
      row["ci_high"] = c->second.second;
    }
    models[m] = row;
  }
  j["models"] = models;
  j["iterations"] = t.iterations;
  j["sweeps"] = t.sweeps;
  j["separated"] = t.separated;
  j["max_score_residual"] = t.max_score_residual;
  return j;
}

}  // namespace

std::vector<std::string> RatingTable::models() const {
  std::vector<std::string> out;
  for (const auto& [m, r] : ratings) out.push_back(m);
  return out;
}

double logistic(double x) noexcept { return sigmoid(x); }

double elo_display(double rating) noexcept { return 1000.0 + 400.0 / std::numbers::ln10 * rating; }

std::vector<Battle> judgments_to_battles(const JudgmentSet& set, const Target& target) {
  std::optional<std::size_t> factor;
  if (target != kOverallKey) {
    const auto it = std::find(set.criteria.begin(), set.criteria.end(), target);
    if (it == set.criteria.end()) throw InputError("unknown ranking target '" + target + "'");
    factor = static_cast<std::size_t>(it - set.criteria.begin());
  }
  std::vector<Battle> out;
  out.reserve(set.records.size());
  for (const auto& r : set.records) {
    const double s = factor ? r.factor_score(*factor) : r.overall_score();
    if (auto b = battle_from_score(r, s)) out.push_back(std::move(*b));
  }
  return out;
}

RatingTable bt_mle(const std::vector<Battle>& battles, const std::string& baseline, const BtOptions& options) {
  const Tally t = tally(battles, options.ties);
  if (!t.index.contains(baseline)) throw InputError("baseline model '" + baseline + "' does not appear in any battle");
  const auto comps = components(t);
  if (comps.size() > 1) {
    std::ostringstream msg;
    msg << "comparison graph is disconnected (" << comps.size() << " components):";
    for (const auto& c : comps) {
      msg << " {";
      for (std::size_t i = 0; i < c.size(); ++i) msg << (i ? ", " : "") << c[i];
      msg << '}';
    }
    throw InputError(msg.str());
  }
  const auto n = static_cast<Eigen::Index>(t.models.size());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  int sweep = 0;
  double change = std::numeric_limits<double>::infinity();
  while (change >= options.tolerance) {
    if (sweep >= options.max_iter) {
      throw NumericError("bt_mle did not converge after " + std::to_string(options.max_iter) +
                         " sweeps (last max rating change " + std::to_string(change) + ")");
    }
    const Eigen::VectorXd before = theta;
    for (Eigen::Index i = 0; i < n; ++i) theta(i) = solve_coordinate(t.wins, theta, i, options.l2);
    // The penalised optimum has zero mean; shifting there only lowers the penalty.
    theta.array() -= theta.mean();
    change = (theta - before).cwiseAbs().maxCoeff();
    ++sweep;
  }

  RatingTable out;
  out.baseline = baseline;
  out.sweeps = sweep;
  out.separated = !strongly_connected(t.wins);
  const double anchor = theta(static_cast<Eigen::Index>(t.index.at(baseline)));
  for (std::size_t i = 0; i < t.models.size(); ++i) {
    out.ratings[t.models[i]] = t.models[i] == baseline ? 0.0 : theta(static_cast<Eigen::Index>(i)) - anchor;
  }
  double residual = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    residual = std::max(residual, std::abs(coordinate_gradient(t.wins, theta, i, theta(i), options.l2, nullptr)));
  }
  out.max_score_residual = residual;
  return ratings_to_winrates(std::move(out), baseline);
}

RatingTable ratings_to_winrates(RatingTable table, const std::string& baseline) {
  const auto it = table.ratings.find(baseline);
  if (it == table.ratings.end()) throw InputError("baseline model '" + baseline + "' has no rating");
  const double base = it->second;
  table.win_rates.clear();
  for (const auto& [m, r] : table.ratings) table.win_rates[m] = logistic(r - base);
  return table;
}

double log_likelihood(const std::vector<Battle>& battles, const std::map<std::string, double>& ratings,
                      TiePolicy ties) {
  const Tally t = tally(battles, ties);
  double ll = 0.0;
  const auto n = static_cast<Eigen::Index>(t.models.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (t.wins(i, j) == 0.0) continue;
      const double d = ratings.at(t.models[static_cast<std::size_t>(i)]) - ratings.at(t.models[static_cast<std::size_t>(j)]);
      // log sigmoid(d), stable for large |d|
      ll += t.wins(i, j) * (d >= 0.0 ? -std::log1p(std::exp(-d)) : d - std::log1p(std::exp(d)));
    }
  }
  return ll;
}

double score_residual(const std::vector<Battle>& battles, const std::map<std::string, double>& ratings,
                      const BtOptions& options) {
  const Tally t = tally(battles, options.ties);
  const auto n = static_cast<Eigen::Index>(t.models.size());
  Eigen::VectorXd theta(n);
  for (Eigen::Index i = 0; i < n; ++i) theta(i) = ratings.at(t.models[static_cast<std::size_t>(i)]);
  // Anchoring is a pure shift; the regulariser acts on the zero-mean representative.
  theta.array() -= theta.mean();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    worst = std::max(worst, std::abs(coordinate_gradient(t.wins, theta, i, theta(i), options.l2, nullptr)));
  }
  return worst;
}

RatingTable bootstrap_ratings(const JudgmentSet& set, const Target& target, const std::string& baseline,
                              const BootstrapOptions& options) {
  if (set.empty()) throw InputError("bootstrap_ratings: empty judgment set");
  if (options.iterations < 1) throw InputError("bootstrap_ratings: iterations must be positive");
  RatingTable point = bt_mle(judgments_to_battles(set, target), baseline, options.bt);
  const auto models = point.models();

  const auto iters = static_cast<std::size_t>(options.iterations);
  std::vector<std::optional<std::vector<double>>> draws(iters);
  parallel_for(iters, options.jobs, [&](std::size_t it) {
    const auto rows = stats::resample_rows(set.records.size(), options.seed, it);
    JudgmentSet sub;
    sub.criteria = set.criteria;
    sub.score_range = set.score_range;
    sub.records.reserve(rows.size());
    for (auto r : rows) sub.records.push_back(set.records[r]);
    try {
      const auto fit = bt_mle(judgments_to_battles(sub, target), baseline, options.bt);
      if (fit.ratings.size() != models.size()) return;
      std::vector<double> values;
      for (const auto& m : models) values.push_back(fit.ratings.at(m));
      draws[it] = std::move(values);
    } catch (const Error&) {
    }
  });

  const auto failed = static_cast<std::size_t>(std::count(draws.begin(), draws.end(), std::nullopt));
  if (static_cast<double>(failed) > 0.1 * static_cast<double>(iters)) {
    throw NumericError("bootstrap_ratings: " + std::to_string(failed) + " of " + std::to_string(iters) +
                       " resamples could not be rated (disconnected comparisons); collect more judgments per model");
  }
  const double tail = (1.0 - options.level) / 2.0;
  for (std::size_t m = 0; m < models.size(); ++m) {
    std::vector<double> values;
    for (const auto& d : draws) {
      if (d) values.push_back((*d)[m]);
    }
    point.ci[models[m]] = {stats::quantile(values, tail), stats::quantile(values, 1.0 - tail)};
  }
  point.iterations = options.iterations;
  return point;
}

std::string default_baseline(const JudgmentSet& set) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : set.records) ++counts[r.model_a];
  if (counts.empty()) throw InputError("no records to choose a baseline from");
  return std::max_element(counts.begin(), counts.end(),
                          [](const auto& a, const auto& b) { return a.second < b.second; })
      ->first;
}

CollapseReport collapse_analysis(const JudgmentSet& set, const std::string& baseline, const CollapseOptions& options) {
  if (set.empty()) throw InputError("collapse_analysis: empty judgment set");
  CollapseReport rep;
  rep.criteria = set.criteria;

  auto rate = [&](const Target& target) {
    return options.with_intervals ? bootstrap_ratings(set, target, baseline, options.bootstrap)
                                  : bt_mle(judgments_to_battles(set, target), baseline, options.bootstrap.bt);
  };
  rep.overall = rate(std::string(kOverallKey));
  rep.models = rep.overall.models();
  const std::size_t k = set.k();
  if (rep.models.size() < k + 2) {
    throw InputError("insufficient models for collapse regression: " + std::to_string(rep.models.size()) +
                     " models, need at least " + std::to_string(k + 2) + " for " + std::to_string(k) + " factors");
  }
  for (const auto& c : set.criteria) {
    auto table = rate(c);
    if (table.models() != rep.models) {
      throw InputError("collapse_analysis: factor '" + c + "' rates a different model set than the overall verdict");
    }
    rep.per_factor.emplace(c, std::move(table));
  }

  SampleMatrix sample;
  const auto m = static_cast<Eigen::Index>(rep.models.size());
  sample.factors.resize(m, static_cast<Eigen::Index>(k));
  sample.overall.resize(m);
  sample.criteria = set.criteria;
  sample.imputed_mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(m, static_cast<Eigen::Index>(k + 1), false);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& model = rep.models[static_cast<std::size_t>(i)];
    sample.question_ids.push_back(model);
    sample.observation_ids.push_back(model);
    sample.overall(i) = rep.overall.ratings.at(model);
    for (std::size_t j = 0; j < k; ++j) {
      sample.factors(i, static_cast<Eigen::Index>(j)) = rep.per_factor.at(set.criteria[j]).ratings.at(model);
    }
  }
  const auto linear = schematic::fit_linear_schema(sample);
  rep.r2_linear = linear.r_squared;
  rep.linear_weights.assign(linear.coefficients.data(), linear.coefficients.data() + linear.coefficients.size());
  rep.regression_rows = static_cast<std::size_t>(m);
  rep.regression_coefficients = static_cast<std::size_t>(linear.coefficients.size());

  schematic::SchematicOptions poly_options;
  poly_options.polynomial_degree = options.polynomial_degree;
  poly_options.allow_underdetermined = true;
  const auto poly = schematic::fit_polynomial_schema(sample, poly_options);
  rep.r2_polynomial = poly.r_squared;
  rep.polynomial_underdetermined = poly.underdetermined;
  return rep;
}

json to_json(const RatingTable& table) { return table_json(table); }

json to_json(const CollapseReport& r) {
  json j;
  j["criteria"] = r.criteria;
  j["models"] = r.models;
  j["overall_ratings"] = table_json(r.overall);
  json pf = json::object();
  for (const auto& [c, t] : r.per_factor) pf[c] = table_json(t);
  j["per_factor_ratings"] = pf;
  j["r2_linear"] = r.r2_linear;
  j["r2_polynomial"] = r.r2_polynomial;
  j["polynomial_underdetermined"] = r.polynomial_underdetermined;
  j["linear_weights"] = r.linear_weights;
  j["regression_rows"] = r.regression_rows;
  j["regression_coefficients"] = r.regression_coefficients;
  j["unexplained_percent"] = r.unexplained_percent();
  return j;
}

std::string leaderboard_csv(const RatingTable& t) {
  std::vector<std::string> models = t.models();
  std::stable_sort(models.begin(), models.end(),
                   [&](const auto& a, const auto& b) { return t.ratings.at(a) > t.ratings.at(b); });
  std::ostringstream out;
  out.precision(6);
  out << "model,rating,elo_display,win_rate,ci_low,ci_high\n";
  for (const auto& m : models) {
    const double r = t.ratings.at(m);
    out << m << ',' << r << ',' << elo_display(r) << ',' << t.win_rates.at(m) << ',';
    if (auto c = t.ci.find(m); c != t.ci.end()) out << c->second.first << ',' << c->second.second;
    else out << ',';
    out << '\n';
  }
  return out.str();
}

}  // namespace judgeaudit::ranking
