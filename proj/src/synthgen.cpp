#include "judgeaudit/synthgen.hpp"

#include "judgeaudit/error.hpp"
#include "judgeaudit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace judgeaudit::synthgen {

using nlohmann::json;

namespace {

struct Resolved {
  Eigen::VectorXd beta;
  Eigen::MatrixXd loadings;
  Eigen::MatrixXd effects;    // models x d
  Eigen::VectorXd quality;    // models
};

Eigen::MatrixXd draw_effects(const SyntheticConfig& c) {
  auto rng = derived_rng(c.seed, 0);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.models), static_cast<Eigen::Index>(c.latent_dim));
  if (c.model_effect_sigma > 0.0) {
    for (Eigen::Index m = 0; m < u.rows(); ++m) {
      for (Eigen::Index d = 0; d < u.cols(); ++d) u(m, d) = c.model_effect_sigma * normal(rng);
    }
  }
  return u;
}

Resolved resolve(const SyntheticConfig& c) {
  validate(c);
  Resolved r;
  const auto k = static_cast<Eigen::Index>(c.k);
  if (c.true_weights.empty()) {
    r.beta = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(c.k));
  } else {
    r.beta = Eigen::Map<const Eigen::VectorXd>(c.true_weights.data(), k);
  }
  r.loadings = c.factor_loadings.size() ? c.factor_loadings : default_loadings(c.k, c.latent_dim);
  r.effects = draw_effects(c);
  r.quality = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.models));
  if (c.transitive_quality) {
    r.quality = Eigen::Map<const Eigen::VectorXd>(c.transitive_quality->data(), static_cast<Eigen::Index>(c.models));
  }
  return r;
}

// Mean factor vector of records comparing model b against the baseline.
Eigen::VectorXd pair_mean(const Resolved& r, Eigen::Index b) {
  const Eigen::VectorXd shift = (r.effects.row(b) - r.effects.row(0)).transpose();
  return r.loadings * shift + Eigen::VectorXd::Constant(r.loadings.rows(), r.quality(b) - r.quality(0));
}

struct Moments {
  double signal_variance = 0.0;
  Eigen::MatrixXd factor_covariance;
};

// Gaussian moments of s = beta' f + sum c f_j f_l with f | b ~ N(mu_b, Sigma),
// b uniform over the compared models.
Moments signal_moments(const SyntheticConfig& c, const Resolved& r) {
  const Eigen::MatrixXd sigma = r.loadings * r.loadings.transpose();
  const auto k = sigma.rows();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(k, k);
  for (const auto& t : c.interaction_terms) {
    const auto j = static_cast<Eigen::Index>(t.j);
    const auto l = static_cast<Eigen::Index>(t.l);
    q(j, l) += 0.5 * t.coefficient;
    q(l, j) += 0.5 * t.coefficient;
  }
  const double quad_var = 2.0 * (q * sigma * q * sigma).trace();
  const auto pairs = static_cast<Eigen::Index>(c.models) - 1;
  std::vector<double> means;
  double within = 0.0;
  Eigen::VectorXd mu_bar = Eigen::VectorXd::Zero(k);
  std::vector<Eigen::VectorXd> mus;
  for (Eigen::Index b = 1; b <= pairs; ++b) {
    const Eigen::VectorXd mu = pair_mean(r, b);
    mus.push_back(mu);
    mu_bar += mu;
    const Eigen::VectorXd a = r.beta + 2.0 * q * mu;
    within += a.dot(sigma * a) + quad_var;
    means.push_back(r.beta.dot(mu) + (q * sigma).trace() + mu.dot(q * mu));
  }
  mu_bar /= static_cast<double>(pairs);
  within /= static_cast<double>(pairs);
  double mean_of_means = 0.0;
  for (double m : means) mean_of_means += m;
  mean_of_means /= static_cast<double>(pairs);
  double between = 0.0;
  for (double m : means) between += (m - mean_of_means) * (m - mean_of_means);
  between /= static_cast<double>(pairs);

  Moments out;
  out.signal_variance = within + between;
  out.factor_covariance = sigma;
  for (const auto& mu : mus) out.factor_covariance += (mu - mu_bar) * (mu - mu_bar).transpose() / static_cast<double>(pairs);
  return out;
}

VerdictLabel label_for(int likert) {
  static constexpr std::array<VerdictLabel, 5> kLabels{VerdictLabel::MuchBetterA, VerdictLabel::BetterA, VerdictLabel::Tie,
                                                       VerdictLabel::BetterB, VerdictLabel::MuchBetterB};
  return kLabels.at(static_cast<std::size_t>(likert - 1));
}

std::string model_name(std::size_t m) {
  std::ostringstream s;
  s << "model-" << (m < 10 ? "0" : "") << m;
  return s.str();
}

std::string question_name(std::size_t q) {
  std::ostringstream s;
  s << "q" << q;
  return s.str();
}

}  // namespace

Eigen::MatrixXd default_loadings(std::size_t k, std::size_t latent_dim) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(latent_dim));
  for (std::size_t j = 0; j < k; ++j) l(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j % latent_dim)) = 1.0;
  return l;
}

void validate(const SyntheticConfig& c) {
  if (c.k < 1) throw InputError("synthetic config: k must be at least 1");
  if (c.questions < 1) throw InputError("synthetic config: questions must be at least 1");
  if (c.models < 2) throw InputError("synthetic config: need at least 2 models");
  if (c.latent_dim < 1 || c.latent_dim > c.k) throw InputError("synthetic config: latent_dim must be in [1, k]");
  if (!c.true_weights.empty() && c.true_weights.size() != c.k) {
    throw InputError("synthetic config: true_weights needs " + std::to_string(c.k) + " entries");
  }
  if (!(c.noise_sigma >= 0.0)) throw InputError("synthetic config: noise_sigma must be non-negative");
  if (!(c.model_effect_sigma >= 0.0)) throw InputError("synthetic config: model_effect_sigma must be non-negative");
  if (!(c.missing_rate >= 0.0 && c.missing_rate < 1.0)) throw InputError("synthetic config: missing_rate must be in [0, 1)");
  if (c.factor_loadings.size()) {
    if (c.factor_loadings.rows() != static_cast<Eigen::Index>(c.k) ||
        c.factor_loadings.cols() != static_cast<Eigen::Index>(c.latent_dim)) {
      throw InputError("synthetic config: factor_loadings must be k x latent_dim");
    }
    if (c.factor_loadings.cwiseAbs().maxCoeff() == 0.0) throw InputError("synthetic config: degenerate (zero) factor loadings");
    if (!c.factor_loadings.allFinite()) throw InputError("synthetic config: non-finite factor loadings");
  }
  for (const auto& t : c.interaction_terms) {
    if (t.j >= c.k || t.l >= c.k) throw InputError("synthetic config: interaction index out of range");
  }
  if (c.transitive_quality && c.transitive_quality->size() != c.models) {
    throw InputError("synthetic config: transitive_quality needs one entry per model");
  }
}

double analytic_r2(const SyntheticConfig& config) {
  const Resolved r = resolve(config);
  const double signal = signal_moments(config, r).signal_variance;
  const double noise = config.noise_sigma * config.noise_sigma;
  if (noise == 0.0) return 1.0;
  return signal / (signal + noise);
}

double noise_for_target_r2(const SyntheticConfig& config, double target) {
  if (!(target > 0.0 && target <= 1.0)) throw InputError("target R^2 must be in (0, 1]");
  const Resolved r = resolve(config);
  const double signal = signal_moments(config, r).signal_variance;
  return std::sqrt(signal * (1.0 - target) / target);
}

int discretize(double z) noexcept {
  int bin = 1;
  for (double cut : kLikertCuts) {
    if (z > cut) ++bin;
  }
  return bin;
}

std::vector<std::string> criteria_for(std::size_t k) {
  if (k == kRubricCriteria.size()) return rubric_criteria();
  std::vector<std::string> out;
  for (std::size_t j = 0; j < k; ++j) out.push_back("F" + std::to_string(j + 1));
  return out;
}

SyntheticData generate(const SyntheticConfig& config) {
  const Resolved r = resolve(config);
  const std::size_t k = config.k;
  const std::size_t m = config.judgments();
  const auto d = static_cast<Eigen::Index>(config.latent_dim);
  const auto ki = static_cast<Eigen::Index>(k);

  Eigen::MatrixXd f(static_cast<Eigen::Index>(m), ki);
  Eigen::VectorXd overall(static_cast<Eigen::Index>(m));
  std::vector<std::vector<bool>> missing(m);
  parallel_for(m, config.jobs, [&](std::size_t row) {
    auto rng = derived_rng(config.seed, row + 1);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;
    const auto b = static_cast<Eigen::Index>(row % (config.models - 1) + 1);
    Eigen::VectorXd z(d);
    for (Eigen::Index i = 0; i < d; ++i) z(i) = normal(rng);
    const Eigen::VectorXd fr = r.loadings * z + pair_mean(r, b);
    double o = config.intercept + r.beta.dot(fr);
    for (const auto& t : config.interaction_terms) {
      o += t.coefficient * fr(static_cast<Eigen::Index>(t.j)) * fr(static_cast<Eigen::Index>(t.l));
    }
    o += config.noise_sigma * normal(rng);
    const auto ri = static_cast<Eigen::Index>(row);
    f.row(ri) = fr.transpose();
    overall(ri) = o;
    missing[row].resize(k + 1, false);
    if (config.missing_rate > 0.0) {
      for (std::size_t c = 0; c <= k; ++c) missing[row][c] = unif(rng) < config.missing_rate;
    }
  });

  SyntheticData out;
  out.truth.config = config;
  out.truth.model_effects = r.effects;
  out.truth.analytic_r2 = analytic_r2(config);
  const Moments mom = signal_moments(config, r);
  const Eigen::VectorXd sd = mom.factor_covariance.diagonal().cwiseSqrt();
  Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(ki, ki);
  for (Eigen::Index i = 0; i < ki; ++i) {
    for (Eigen::Index j = 0; j < ki; ++j) {
      if (i != j) corr(i, j) = sd(i) > 0 && sd(j) > 0 ? mom.factor_covariance(i, j) / (sd(i) * sd(j)) : 0.0;
    }
  }
  out.truth.expected_factor_correlation = corr;
  double off = 0.0;
  for (Eigen::Index i = 0; i < ki; ++i) {
    for (Eigen::Index j = 0; j < ki; ++j) {
      if (i != j) off += corr(i, j);
    }
  }
  const double mean_off = k > 1 ? off / static_cast<double>(k * (k - 1)) : 1.0;
  out.truth.expected_htmt_regime =
      config.latent_dim == 1 || mean_off >= 0.85 ? HtmtRegime::Collapsed : HtmtRegime::Separable;

  // Scaled by the sample sd but not centred: 0 means "no difference" and must stay the tie.
  auto standardize = [](const Eigen::VectorXd& col) {
    const double mu = col.mean();
    const double var = (col.array() - mu).square().sum() / std::max<double>(1.0, static_cast<double>(col.size() - 1));
    const double s = var > 0.0 ? std::sqrt(var) : 1.0;
    return Eigen::VectorXd(col / s);
  };
  std::vector<Eigen::VectorXd> zcols;
  for (Eigen::Index j = 0; j < ki; ++j) zcols.push_back(standardize(f.col(j)));
  const Eigen::VectorXd zover = standardize(overall);

  out.set.criteria = criteria_for(k);
  out.set.records.reserve(m);
  for (std::size_t row = 0; row < m; ++row) {
    const auto ri = static_cast<Eigen::Index>(row);
    const std::size_t q = row / (config.models - 1);
    const std::size_t b = row % (config.models - 1) + 1;
    JudgmentRecord rec;
    rec.question_id = question_name(q);
    rec.model_a = model_name(0);
    rec.model_b = model_name(b);
    rec.judge = "synthetic-judge";
    rec.setting = "synthetic";
    rec.deviation_flags.assign(k + 1, false);
    std::string raw;
    for (std::size_t j = 0; j < k; ++j) {
      if (missing[row][j]) {
        rec.factor_verdicts.emplace_back(std::nullopt);
        continue;
      }
      const auto label = label_for(discretize(zcols[j](ri)));
      rec.factor_verdicts.emplace_back(label);
      raw += out.set.criteria[j] + ": ((" + std::string(verdict_token(label)) + "))\n";
    }
    if (!missing[row][k]) {
      const auto label = label_for(discretize(zover(ri)));
      rec.overall_verdict = label;
      raw += "My final verdict is: " + verdict_string(label) + "\n";
    }
    rec.raw_text = raw;
    out.set.records.push_back(std::move(rec));
  }

  out.continuous.factors = f;
  out.continuous.overall = overall;
  out.continuous.criteria = out.set.criteria;
  out.continuous.imputed_mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
      static_cast<Eigen::Index>(m), ki + 1, false);
  for (const auto& rec : out.set.records) {
    out.continuous.question_ids.push_back(rec.question_id);
    out.continuous.observation_ids.push_back(rec.observation_id());
  }
  return out;
}

json to_json(const SyntheticConfig& c) {
  json j;
  j["k"] = c.k;
  j["questions"] = c.questions;
  j["models"] = c.models;
  j["true_weights"] = c.true_weights;
  j["intercept"] = c.intercept;
  j["noise_sigma"] = c.noise_sigma;
  j["latent_dim"] = c.latent_dim;
  if (c.factor_loadings.size()) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < c.factor_loadings.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index l = 0; l < c.factor_loadings.cols(); ++l) row.push_back(c.factor_loadings(i, l));
      rows.push_back(row);
    }
    j["factor_loadings"] = rows;
  }
  json inter = json::array();
  for (const auto& t : c.interaction_terms) inter.push_back({t.j, t.l, t.coefficient});
  j["interaction_terms"] = inter;
  if (c.transitive_quality) j["transitive_quality"] = *c.transitive_quality;
  j["model_effect_sigma"] = c.model_effect_sigma;
  j["missing_rate"] = c.missing_rate;
  j["seed"] = c.seed;
  return j;
}

SyntheticConfig config_from_json(const json& j) {
  if (!j.is_object()) throw InputError("synthetic config must be an object");
  static const std::vector<std::string> known{"k", "questions", "models", "true_weights", "intercept",
                                              "noise_sigma", "latent_dim", "factor_loadings", "interaction_terms",
                                              "transitive_quality", "model_effect_sigma", "missing_rate", "seed",
                                              "target_r2"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw InputError("synthetic config: unknown key '" + key + "'");
    }
  }
  SyntheticConfig c;
  try {
    c.k = j.value("k", c.k);
    c.questions = j.value("questions", c.questions);
    c.models = j.value("models", c.models);
    c.latent_dim = j.value("latent_dim", c.k);
    c.true_weights = j.value("true_weights", c.true_weights);
    c.intercept = j.value("intercept", c.intercept);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.model_effect_sigma = j.value("model_effect_sigma", c.model_effect_sigma);
    c.missing_rate = j.value("missing_rate", c.missing_rate);
    c.seed = j.value("seed", c.seed);
    if (j.contains("factor_loadings")) {
      const auto& rows = j.at("factor_loadings");
      c.factor_loadings.resize(static_cast<Eigen::Index>(rows.size()),
                               rows.empty() ? 0 : static_cast<Eigen::Index>(rows.at(0).size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows.at(i).size() != static_cast<std::size_t>(c.factor_loadings.cols())) {
          throw InputError("synthetic config: ragged factor_loadings");
        }
        for (std::size_t l = 0; l < rows.at(i).size(); ++l) {
          c.factor_loadings(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = rows.at(i).at(l).get<double>();
        }
      }
    }
    if (j.contains("interaction_terms")) {
      for (const auto& t : j.at("interaction_terms")) {
        c.interaction_terms.push_back({t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>(), t.at(2).get<double>()});
      }
    }
    if (j.contains("transitive_quality")) c.transitive_quality = j.at("transitive_quality").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw InputError(std::string("synthetic config: ") + e.what());
  }
  validate(c);
  if (j.contains("target_r2")) c.noise_sigma = noise_for_target_r2(c, j.at("target_r2").get<double>());
  return c;
}

json to_json(const GroundTruth& t) {
  json j;
  j["analytic_r2"] = t.analytic_r2;
  json corr = json::array();
  for (Eigen::Index i = 0; i < t.expected_factor_correlation.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < t.expected_factor_correlation.cols(); ++c) row.push_back(t.expected_factor_correlation(i, c));
    corr.push_back(row);
  }
  j["expected_factor_correlation"] = corr;
  j["expected_htmt_regime"] = t.expected_htmt_regime == HtmtRegime::Collapsed ? "collapsed" : "separable";
  j["config"] = to_json(t.config);
  return j;
}

void write_dataset(const SyntheticData& data, const std::filesystem::path& jsonl_path) {
  {
    std::ofstream out(jsonl_path, std::ios::binary);
    if (!out) throw InputError("cannot write " + jsonl_path.string());
    write_jsonl(data.set, out);
  }
  auto truth_path = jsonl_path;
  truth_path.replace_filename(jsonl_path.stem().string() + ".truth.json");
  std::ofstream out(truth_path, std::ios::binary);
  if (!out) throw InputError("cannot write " + truth_path.string());
  out << to_json(data.truth).dump(2) << '\n';
}

}  // namespace judgeaudit::synthgen
