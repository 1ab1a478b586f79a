#pragma once
// Psychometric validity of a judged benchmark: internal consistency
// (Cronbach's alpha), discriminant validity from factor loadings (cross-loading
// ratio) and item correlations (HTMT), folded into one unified score.
//
// Items are questions. Each item is observed once per observation series, a
// (model pair, judge, setting) combination, so item correlations and variances
// are taken across the observation axis.

#include "judgeaudit/judgment.hpp"

#include <Eigen/Dense>

#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace judgeaudit::psychometric {

class ScoreCube {
 public:
  ScoreCube() = default;
  ScoreCube(std::vector<std::string> factors, std::vector<std::string> questions,
            std::vector<std::string> observations);

  /// Cells without a record stay NaN; repeated (question, observation) rows are averaged.
  static ScoreCube from_sample(const SampleMatrix& sample);

  std::size_t k() const noexcept { return factors_.size(); }
  std::size_t n() const noexcept { return questions_.size(); }
  std::size_t r() const noexcept { return observations_.size(); }
  const std::vector<std::string>& factors() const noexcept { return factors_; }
  const std::vector<std::string>& questions() const noexcept { return questions_; }
  const std::vector<std::string>& observations() const noexcept { return observations_; }

  double& at(std::size_t factor, std::size_t question, std::size_t observation);
  double at(std::size_t factor, std::size_t question, std::size_t observation) const;

  /// Scores of one question-item across all observations.
  std::span<const double> item(std::size_t factor, std::size_t question) const;
  /// Every score of one factor (question-major).
  std::span<const double> factor_scores(std::size_t factor) const;

  bool complete() const;
  /// Drops observation series with any missing cell.
  ScoreCube complete_cases() const;
  /// Same data with the factor axis reordered: new factor i is old order[i].
  ScoreCube permute_factors(std::span<const std::size_t> order) const;

 private:
  std::vector<std::string> factors_;
  std::vector<std::string> questions_;
  std::vector<std::string> observations_;
  std::vector<double> values_;  // [factor][question][observation]
};

struct LoadingsMatrix {
  std::vector<std::string> factors;
  Eigen::MatrixXd correlation;  // pooled k x k factor correlation
  Eigen::VectorXd eigenvalues;  // descending
  Eigen::MatrixXd lambda;       // observed factor x latent factor, varimax rotated
  std::vector<std::size_t> assignment;  // observed factor i -> latent column
  std::string rotation = "varimax";
};

struct PsychometricReport {
  std::vector<std::string> factors;
  std::vector<double> alpha;
  std::vector<double> clr_raw;  // +inf when a factor has no cross-loading
  std::vector<double> clr_norm;
  Eigen::MatrixXd htmt;
  double mean_alpha = 0.0;
  double mean_clr_norm = 0.0;
  double mean_htmt = 0.0;  // off-diagonal mean
  double unified = 0.0;
  double sensitivity = 0.0;
  double score_range = 4.0;
  LoadingsMatrix loadings;
  std::size_t questions = 0;
  std::size_t observations = 0;
};

double cronbach_alpha(const ScoreCube& cube, std::size_t factor);

/// Principal components of the pooled factor correlation matrix (all k
/// components), varimax rotation, then Hungarian matching of observed factors
/// to latent columns by |loading|.
LoadingsMatrix extract_loadings(const ScoreCube& cube);
LoadingsMatrix loadings_from_correlation(const Eigen::MatrixXd& correlation, std::vector<std::string> factors);

/// Kaiser-normalised varimax.
Eigen::MatrixXd varimax(const Eigen::MatrixXd& loadings, int max_iter = 1000, double eps = 1e-5);

/// Minimum-cost perfect matching; result[row] = column.
std::vector<std::size_t> hungarian(const Eigen::MatrixXd& cost);

double cross_loading_ratio(const LoadingsMatrix& loadings, std::size_t factor);

/// 1 / (1 + exp(-2 (clr - 1.5))); the +inf sentinel maps to 1.
double sigmoid_normalize_clr(double clr);

double htmt(const ScoreCube& cube, std::size_t i, std::size_t j);
Eigen::MatrixXd htmt_matrix(const ScoreCube& cube);

PsychometricReport psychometric_validity(const ScoreCube& cube, double score_range);

nlohmann::json to_json(const PsychometricReport& report);
nlohmann::json to_json(const LoadingsMatrix& loadings);
/// observed_factor,latent_factor,loading
std::string loadings_csv(const LoadingsMatrix& loadings);

}  // namespace judgeaudit::psychometric
