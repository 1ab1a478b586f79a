#pragma once
// Schematic adherence: how much of a judge's overall verdict its own factor
// scores explain, plus weight-integration and per-context stability metrics.

#include "judgeaudit/judgment.hpp"
#include "judgeaudit/stats.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace judgeaudit::schematic {

struct SchematicOptions {
  int polynomial_degree = 2;
  // Doubles the i<j sum, i.e. averages over unordered pairs; off keeps the literal c(c-1) divisor.
  bool cs_ordered_pairs = false;
  // Let the polynomial fit run with fewer rows than terms (minimum-norm solution).
  bool allow_underdetermined = false;
};

struct PolynomialTerm {
  std::string name;                 // e.g. "Correctness*Style", "Safety^2"
  std::vector<std::size_t> powers;  // exponent per factor
  double coefficient = 0.0;
};

struct QuestionClusters {
  std::map<std::string, int> assignments;  // question id -> cluster id in [0, c)
  int c = 0;
  Eigen::MatrixXd centroids;  // c x k
  double silhouette = 0.0;
};

struct ContextStability {
  double cs = 0.0;
  std::map<int, Eigen::VectorXd> cluster_weights;  // factor weights, intercept excluded
  std::vector<std::string> warnings;
};

struct SchematicReport {
  std::vector<std::string> criteria;
  double r2_linear = 0.0;
  double r2_polynomial = 0.0;
  double r2_schematic = 0.0;
  double sensitivity = 0.0;
  Eigen::VectorXd linear_weights;  // beta_0 .. beta_k
  std::vector<PolynomialTerm> polynomial_terms;
  bool polynomial_underdetermined = false;
  double weight_disparity = 0.0;
  double weight_entropy = 0.0;
  std::optional<double> context_stability;
  std::map<int, Eigen::VectorXd> cluster_weights;
  std::size_t rows = 0;
  std::vector<std::string> warnings;

  double unexplained_percent() const { return 100.0 * (1.0 - r2_schematic); }
};

stats::OlsFit fit_linear_schema(const SampleMatrix& sample);

/// Every monomial of total degree 1..degree over the k factors, in graded
/// order: linear terms, then squares, then pairwise interactions for degree 2.
std::vector<PolynomialTerm> polynomial_terms(const std::vector<std::string>& criteria, int degree);

stats::OlsFit fit_polynomial_schema(const SampleMatrix& sample, const SchematicOptions& options = {});

/// sigma(|beta|) / mu(|beta|), population standard deviation.
double weight_disparity(std::span<const double> weights);
/// -sum p_j ln p_j with p_j = |beta_j| / sum |beta|.
double weight_entropy(std::span<const double> weights);

/// k-means on per-question mean factor vectors. Without `c`, the count with
/// the best mean silhouette over [2, min(8, questions / 10)] wins.
QuestionClusters cluster_questions(const SampleMatrix& sample, std::optional<int> c, std::uint64_t seed);

ContextStability context_stability(const SampleMatrix& sample, const QuestionClusters& clusters,
                                   bool ordered_pairs = false);

SchematicReport schematic_adherence(const SampleMatrix& sample, const SchematicOptions& options = {},
                                    const QuestionClusters* clusters = nullptr);

nlohmann::json to_json(const SchematicReport& report);
/// factor,weight rows (plus one column per cluster when present).
std::string weights_csv(const SchematicReport& report);

}  // namespace judgeaudit::schematic
