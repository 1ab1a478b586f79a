#include "judgeaudit/stats.hpp"

#include "judgeaudit/error.hpp"
#include "judgeaudit/kernels.hpp"
#include "judgeaudit/parallel.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace judgeaudit::stats {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::span<const double> column(const Eigen::MatrixXd& m, Eigen::Index j) {
  return {m.col(j).data(), static_cast<std::size_t>(m.rows())};
}
}  // namespace

OlsFit ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& target, std::vector<std::string> names,
           const OlsOptions& options) {
  const Eigen::Index m = design.rows();
  const Eigen::Index p = design.cols() + 1;
  if (target.size() != m) throw InputError("ols: design has " + std::to_string(m) +
                                           " rows but target has " + std::to_string(target.size()));
  if (m <= p && !options.allow_underdetermined) {
    throw NumericError("underdetermined: " + std::to_string(m) + " rows for " + std::to_string(p) +
                       " parameters");
  }
  if (m < 2) throw NumericError("underdetermined: fewer than 2 rows");

  const std::span<const double> y(target.data(), static_cast<std::size_t>(m));
  const double y_mean = kernels::mean(y);
  const double sst = kernels::sum_sq_dev(y, y_mean);
  if (!(sst > 0.0) || sst <= 1e-24 * static_cast<double>(m) * std::max(1.0, y_mean * y_mean)) {
    throw NumericError("degenerate target: zero variance, R^2 undefined");
  }

  Eigen::MatrixXd x(m, p);
  x.col(0).setOnes();
  x.rightCols(p - 1) = design;

  // Equilibrate columns so the cutoff is relative to a well-scaled problem.
  Eigen::VectorXd scale(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double norm = x.col(j).norm();
    scale(j) = norm > 0.0 ? norm : 1.0;
    x.col(j) /= scale(j);
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cutoff = options.rcond * (sv.size() > 0 ? sv(0) : 0.0);
  Eigen::VectorXd uty = svd.matrixU().transpose() * target;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) {
      uty(i) /= sv(i);
      ++rank;
    } else {
      uty(i) = 0.0;
    }
  }
  Eigen::VectorXd beta = svd.matrixV() * uty;
  for (Eigen::Index j = 0; j < p; ++j) beta(j) /= scale(j);

  OlsFit fit;
  fit.coefficients = beta;
  fit.residuals = target - design * beta.tail(p - 1) - Eigen::VectorXd::Constant(m, beta(0));
  fit.rank = rank;
  fit.underdetermined = m <= p;
  fit.sst = sst;
  fit.sse = kernels::dot({fit.residuals.data(), static_cast<std::size_t>(m)},
                         {fit.residuals.data(), static_cast<std::size_t>(m)});
  fit.r_squared = 1.0 - fit.sse / sst;
  fit.design_columns.reserve(static_cast<std::size_t>(p));
  fit.design_columns.emplace_back("intercept");
  for (Eigen::Index j = 1; j < p; ++j) {
    const auto idx = static_cast<std::size_t>(j - 1);
    fit.design_columns.push_back(idx < names.size() ? names[idx] : "x" + std::to_string(j));
  }
  return fit;
}

double variance(std::span<const double> x) {
  if (x.size() < 2) return kNaN;
  return kernels::sum_sq_dev(x, kernels::mean(x)) / static_cast<double>(x.size() - 1);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return kNaN;
  const double mx = kernels::mean(x);
  const double my = kernels::mean(y);
  const double sxx = kernels::sum_sq_dev(x, mx);
  const double syy = kernels::sum_sq_dev(y, my);
  if (!(sxx > 0.0) || !(syy > 0.0)) return kNaN;
  const double r = kernels::cross_dev(x, mx, y, my) / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

double correlation_p_value(double rho, std::size_t m) {
  if (!std::isfinite(rho) || m < 3) return kNaN;
  if (std::abs(rho) >= 1.0) return 0.0;
  const double df = static_cast<double>(m - 2);
  const double t = std::abs(rho) * std::sqrt(df / (1.0 - rho * rho));
  const boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, t)));
}

double CorrelationMatrix::mean_off_diagonal() const {
  double total = 0.0;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (i != j && std::isfinite(values(i, j))) {
        total += values(i, j);
        ++count;
      }
    }
  }
  return count ? total / static_cast<double>(count) : kNaN;
}

CorrelationMatrix spearman_matrix(const Eigen::MatrixXd& matrix, std::optional<std::size_t> tests) {
  const Eigen::Index m = matrix.rows();
  const Eigen::Index k = matrix.cols();
  if (m < 3) throw InputError("spearman_matrix: need at least 3 rows, got " + std::to_string(m));

  Eigen::MatrixXd ranks(m, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto r = average_ranks(column(matrix, j));
    ranks.col(j) = Eigen::Map<const Eigen::VectorXd>(r.data(), m);
  }

  CorrelationMatrix out;
  out.method = CorrelationMethod::Spearman;
  out.tests = tests.value_or(static_cast<std::size_t>(k * (k - 1) / 2));
  out.values = Eigen::MatrixXd::Identity(k, k);
  out.p_values = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const double rho = pearson(column(ranks, i), column(ranks, j));
      const double p = correlation_p_value(rho, static_cast<std::size_t>(m));
      out.values(i, j) = out.values(j, i) = rho;
      out.p_values(i, j) = out.p_values(j, i) = p;
    }
  }
  const std::vector<double> flat(out.p_values.data(), out.p_values.data() + out.p_values.size());
  const auto corrected = bonferroni(flat, static_cast<long>(std::max<std::size_t>(out.tests, 1)));
  out.corrected_p = Eigen::Map<const Eigen::MatrixXd>(corrected.data(), k, k);
  return out;
}

std::vector<double> bonferroni(std::span<const double> p, long tests) {
  if (tests <= 0) throw InputError("bonferroni: tests must be positive, got " + std::to_string(tests));
  std::vector<double> out(p.size());
  const double n = static_cast<double>(tests);
  std::transform(p.begin(), p.end(), out.begin(), [n](double v) { return std::isnan(v) ? v : std::min(1.0, v * n); });
  return out;
}

std::vector<std::size_t> resample_rows(std::size_t rows, std::uint64_t seed, std::uint64_t iteration) {
  auto rng = derived_rng(seed, iteration);
  std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
  std::vector<std::size_t> idx(rows);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0 || values[lo] == values[hi]) return values[lo];
  return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapResult bootstrap(const RowStatistic& statistic, std::size_t rows, int iterations, std::uint64_t seed,
                          double level, unsigned jobs) {
  if (iterations < 1) throw InputError("bootstrap: iterations must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw InputError("bootstrap: level must lie in (0, 1)");
  if (rows == 0) throw InputError("bootstrap: no rows");

  std::vector<std::size_t> identity(rows);
  std::iota(identity.begin(), identity.end(), std::size_t{0});

  BootstrapResult out;
  out.point = statistic(identity);
  out.iterations = iterations;
  out.seed = seed;

  std::vector<double> replicate(static_cast<std::size_t>(iterations), kNaN);
  parallel_for(replicate.size(), jobs, [&](std::size_t it) {
    try {
      const auto idx = resample_rows(rows, seed, it);
      replicate[it] = statistic(idx);
    } catch (const std::exception&) {
      replicate[it] = kNaN;
    }
  });

  for (double v : replicate) {
    if (std::isfinite(v)) out.samples.push_back(v); else ++out.failed;
  }
  if (static_cast<double>(out.failed) > 0.1 * iterations) {
    throw NumericError("bootstrap: " + std::to_string(out.failed) + " of " + std::to_string(iterations) +
                       " replicates failed");
  }
  const double tail = 0.5 * (1.0 - level);
  out.lower = quantile(out.samples, tail);
  out.upper = quantile(out.samples, 1.0 - tail);
  return out;
}

SymmetricEigen eigendecompose_symmetric(const Eigen::MatrixXd& matrix) {
  if (matrix.rows() != matrix.cols()) throw InputError("eigendecompose_symmetric: matrix is not square");
  if (!matrix.allFinite()) throw NumericError("eigendecompose_symmetric: non-finite entries");
  const double asym = (matrix - matrix.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10) throw InputError("eigendecompose_symmetric: matrix is not symmetric (max |A - A^T| = " +
                                     std::to_string(asym) + ")");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (matrix + matrix.transpose()));
  if (solver.info() != Eigen::Success) throw NumericError("eigendecompose_symmetric: solver did not converge");

  const Eigen::Index k = matrix.rows();
  SymmetricEigen out;
  out.values.resize(k);
  out.vectors.resize(k, k);
  // Eigen sorts ascending.
  for (Eigen::Index i = 0; i < k; ++i) {
    out.values(i) = solver.eigenvalues()(k - 1 - i);
    Eigen::VectorXd v = solver.eigenvectors().col(k - 1 - i);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    out.vectors.col(i) = v;
  }
  return out;
}

}  // namespace judgeaudit::stats
