#pragma once
// Synthetic judgments with known ground truth.
//
// Every record compares the baseline model 0 (assistant A) with a model b > 0
// (assistant B) on one question. Continuous factor scores are
//   f = L (z + u_b - u_0) + (q_b - q_0) 1,  z ~ N(0, I_d),
// where u_m ~ N(0, model_effect_sigma^2 I_d) is a per-model latent effect drawn
// once per dataset and q is the optional transitive quality. The overall score
// is beta0 + beta' f + interactions + N(0, noise_sigma^2). Each column is then
// divided by its sample sd (not centred, so 0 stays a tie) and cut at +-0.25
// and +-0.84 into Likert 1..5, so high scores favour assistant B.

#include "judgeaudit/judgment.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

namespace judgeaudit::synthgen {

struct Interaction {
  std::size_t j = 0;
  std::size_t l = 0;
  double coefficient = 0.0;
};

struct SyntheticConfig {
  std::size_t k = 5;
  std::size_t questions = 200;
  std::size_t models = 11;
  std::vector<double> true_weights;  // empty: all 1/k
  double intercept = 0.0;
  double noise_sigma = 0.5;
  std::size_t latent_dim = 5;
  Eigen::MatrixXd factor_loadings;  // k x latent_dim; empty: default_loadings()
  std::vector<Interaction> interaction_terms;
  std::optional<std::vector<double>> transitive_quality;  // one entry per model
  double model_effect_sigma = 0.0;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;
  unsigned jobs = 1;

  std::size_t judgments() const noexcept { return questions * (models - 1); }
};

enum class HtmtRegime { Separable, Collapsed };

struct GroundTruth {
  double analytic_r2 = 0.0;
  Eigen::MatrixXd expected_factor_correlation;
  HtmtRegime expected_htmt_regime = HtmtRegime::Separable;
  SyntheticConfig config;
  Eigen::MatrixXd model_effects;  // models x latent_dim, as drawn
};

struct SyntheticData {
  JudgmentSet set;
  GroundTruth truth;
  SampleMatrix continuous;  // pre-discretisation scores, one row per record, before missingness
};

inline constexpr std::array<double, 4> kLikertCuts{-0.84, -0.25, 0.25, 0.84};

/// Identity when latent_dim == k, otherwise factor j loads 1 on latent j mod latent_dim.
Eigen::MatrixXd default_loadings(std::size_t k, std::size_t latent_dim);

/// Throws InputError on an invalid or degenerate configuration.
void validate(const SyntheticConfig& config);

SyntheticData generate(const SyntheticConfig& config);

/// Variance share of the signal in the continuous overall score, over the
/// dataset's generating distribution (a mixture over the compared models).
double analytic_r2(const SyntheticConfig& config);

/// noise_sigma that makes analytic_r2 equal `target` in (0, 1].
double noise_for_target_r2(const SyntheticConfig& config, double target);

/// Standardised value -> Likert bin; monotone non-decreasing.
int discretize(double standardized) noexcept;

std::vector<std::string> criteria_for(std::size_t k);

nlohmann::json to_json(const SyntheticConfig& config);
SyntheticConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroundTruth& truth);

/// JSONL judgments plus `<stem>.truth.json` next to them.
void write_dataset(const SyntheticData& data, const std::filesystem::path& jsonl_path);

}  // namespace judgeaudit::synthgen
