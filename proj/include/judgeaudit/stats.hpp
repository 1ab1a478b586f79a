#pragma once
// Shared numerical primitives: least squares, rank correlation, multiple-test
// correction, percentile bootstrap and symmetric eigendecomposition.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace judgeaudit::stats {

struct OlsOptions {
  // Minimum-norm solution when there are no more rows than parameters.
  bool allow_underdetermined = false;
  // Singular values below rcond * sigma_max are treated as zero.
  double rcond = 1e-10;
};

struct OlsFit {
  Eigen::VectorXd coefficients;  // intercept first
  double r_squared = 0.0;
  Eigen::VectorXd residuals;
  std::vector<std::string> design_columns;  // "intercept" followed by the design names
  Eigen::Index rank = 0;
  bool underdetermined = false;
  double sse = 0.0;
  double sst = 0.0;
};

/// Least squares of target on [1, design]. R^2 = 1 - SSE/SST.
/// Throws NumericError "underdetermined" when rows <= parameters (unless
/// allowed) and "degenerate target" when the target has zero variance.
OlsFit ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& target,
           std::vector<std::string> names = {}, const OlsOptions& options = {});

double variance(std::span<const double> x);  // n - 1 denominator
double pearson(std::span<const double> x, std::span<const double> y);  // NaN when either is constant
std::vector<double> average_ranks(std::span<const double> x);
double spearman(std::span<const double> x, std::span<const double> y);

/// Two-sided p-value from the t approximation with m - 2 degrees of freedom.
double correlation_p_value(double rho, std::size_t m);

enum class CorrelationMethod { Spearman, Pearson };

struct CorrelationMatrix {
  Eigen::MatrixXd values;  // NaN marks an undefined pair (constant column)
  Eigen::MatrixXd p_values;
  Eigen::MatrixXd corrected_p;
  CorrelationMethod method = CorrelationMethod::Spearman;
  std::size_t tests = 0;

  /// Mean of the defined off-diagonal entries; NaN when none are defined.
  double mean_off_diagonal() const;
};

/// Pairwise Spearman matrix over the columns of `matrix` (m >= 3). The
/// Bonferroni family defaults to the k(k-1)/2 pairwise tests.
CorrelationMatrix spearman_matrix(const Eigen::MatrixXd& matrix,
                                  std::optional<std::size_t> tests = std::nullopt);

/// min(1, p * tests) per entry; NaN passes through.
std::vector<double> bonferroni(std::span<const double> p, long tests);

struct BootstrapResult {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::size_t failed = 0;
  std::vector<double> samples;  // finite replicate values, in iteration order
};

using RowStatistic = std::function<double(std::span<const std::size_t>)>;

/// Row indices for bootstrap replicate `iteration` (iid, with replacement).
std::vector<std::size_t> resample_rows(std::size_t rows, std::uint64_t seed, std::uint64_t iteration);

/// Linear-interpolation quantile (Hyndman-Fan type 7) of unsorted values.
double quantile(std::vector<double> values, double q);

/// Percentile bootstrap. A replicate that throws or returns a non-finite
/// value counts as failed; more than 10% failures raise NumericError.
BootstrapResult bootstrap(const RowStatistic& statistic, std::size_t rows, int iterations,
                          std::uint64_t seed, double level = 0.95, unsigned jobs = 1);

struct SymmetricEigen {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // orthonormal columns
};

/// Largest-magnitude entry of each eigenvector is made positive.
SymmetricEigen eigendecompose_symmetric(const Eigen::MatrixXd& matrix);

}  // namespace judgeaudit::stats
