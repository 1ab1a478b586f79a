#include <doctest.h>

#include "judgeaudit/error.hpp"
#include "judgeaudit/kernels.hpp"
#include "judgeaudit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace judgeaudit;
using namespace judgeaudit::stats;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index m, Eigen::Index p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd x(m, p);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = nd(rng);
  return x;
}

// Rank-then-Pearson with the textbook formulas.
double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        if (w < v[i]) ++less;
        if (w == v[i]) ++equal;
      }
      r[i] = less + (equal + 1) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("ols: identity line") {
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 2;
  Eigen::VectorXd y(3);
  y << 0, 1, 2;
  const auto fit = ols(x, y);
  CHECK(fit.coefficients[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(fit.coefficients[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ols: exact combination, independent target and errors") {
  const auto x = random_matrix(200, 4, 1);
  Eigen::VectorXd y = 1.5 + (x * Eigen::Vector4d(0.2, -1, 3, 0.5)).array();
  const auto fit = ols(x, y);
  CHECK(std::abs(fit.r_squared - 1.0) < 1e-9);
  CHECK(fit.design_columns.front() == "intercept");

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto d = random_matrix(2000, 5, 100 + seed);
    const Eigen::VectorXd t = random_matrix(2000, 1, 200 + seed).col(0);
    CHECK(ols(d, t).r_squared < 0.01);
  }

  CHECK_THROWS_AS(ols(random_matrix(3, 3, 2), Eigen::VectorXd::Ones(3) * 2 + Eigen::VectorXd::LinSpaced(3, 0, 1)), NumericError);
  CHECK_THROWS_WITH_AS(ols(random_matrix(10, 2, 3), Eigen::VectorXd::Constant(10, 3.0)), doctest::Contains("degenerate target"),
                       NumericError);
}

TEST_CASE("ols: R^2 is 1 - SSE/SST and survives affine rescaling and collinearity") {
  const auto x = random_matrix(300, 3, 5);
  const Eigen::VectorXd y = (x.col(0) * 0.7 + random_matrix(300, 1, 6).col(0)).eval();
  const auto fit = ols(x, y);
  const double sse = fit.residuals.squaredNorm();
  const double sst = (y.array() - y.mean()).square().sum();
  CHECK(fit.r_squared == doctest::Approx(1.0 - sse / sst).epsilon(1e-12));
  CHECK(fit.r_squared <= 1.0);

  Eigen::MatrixXd scaled = x;
  scaled.col(1) = scaled.col(1) * -4.0 + Eigen::VectorXd::Constant(300, 9.0);
  CHECK(std::abs(ols(scaled, y).r_squared - fit.r_squared) < 1e-12);

  Eigen::MatrixXd collinear(300, 4);
  collinear << x, x.col(0) * 2.0;
  const auto c = ols(collinear, y);
  CHECK(std::abs(c.r_squared - fit.r_squared) < 1e-10);
  CHECK(c.rank == 4);
}

TEST_CASE("ols: nested designs never lose R^2") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = random_matrix(60, 6, seed);
    const Eigen::VectorXd y = random_matrix(60, 1, seed + 1000).col(0);
    double prev = 0.0;
    for (Eigen::Index p = 1; p <= 6; ++p) {
      const double r2 = ols(x.leftCols(p), y).r_squared;
      CHECK(r2 >= prev - 1e-12);
      prev = r2;
    }
  }
}

TEST_CASE("spearman") {
  const std::vector<double> a{1, 4, 2, 8, 5, 7, 3, 6, 9, 0};
  std::vector<double> neg(a.size());
  std::transform(a.begin(), a.end(), neg.begin(), [](double v) { return -v; });
  CHECK(spearman(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(spearman(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));

  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> ud(1, 5);  // forces ties
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> x(10), y(10);
    for (auto& v : x) v = ud(rng);
    for (auto& v : y) v = ud(rng);
    const double o = oracle_spearman(x, y);
    if (std::isnan(o)) continue;
    CHECK(std::abs(spearman(x, y) - o) < 1e-12);
    std::vector<double> cubed(x.size());
    std::transform(x.begin(), x.end(), cubed.begin(), [](double v) { return std::exp(v) * v * v * v; });
    CHECK(std::abs(spearman(cubed, y) - o) < 1e-12);
  }
}

TEST_CASE("spearman_matrix: structure, constant columns and bonferroni family") {
  Eigen::MatrixXd m = random_matrix(50, 4, 11);
  m.col(3).setConstant(2.0);
  const auto c = spearman_matrix(m);
  CHECK(c.tests == 6);
  for (int i = 0; i < 3; ++i) {
    CHECK(c.values(i, i) == 1.0);
    for (int j = 0; j < 3; ++j) {
      CHECK(c.values(i, j) == c.values(j, i));
      if (i != j) CHECK(c.corrected_p(i, j) == doctest::Approx(std::min(1.0, c.p_values(i, j) * 6)));
    }
    CHECK(std::isnan(c.values(i, 3)));
  }
  double mean = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) mean += c.values(i, j);
  CHECK(c.mean_off_diagonal() == doctest::Approx(mean / 6));
  CHECK_THROWS_AS(spearman_matrix(random_matrix(2, 3, 1)), InputError);
}

TEST_CASE("bonferroni") {
  const std::vector<double> p{0.01, 0.2, 0.0, 1.0};
  const auto b = bonferroni(p, 10);
  CHECK(b[0] == doctest::Approx(0.1));
  CHECK(b[1] == 1.0);
  CHECK(b[2] == 0.0);
  CHECK(b[3] == 1.0);
  CHECK_THROWS_AS(bonferroni(p, 0), InputError);
  // monotone and never below the input
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
  const auto g = bonferroni(grid, 7);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(g[i] >= grid[i]);
    if (i) CHECK(g[i] >= g[i - 1]);
  }
}

TEST_CASE("correlation p-value") {
  CHECK(correlation_p_value(0.0, 30) == doctest::Approx(1.0));
  CHECK(correlation_p_value(1.0, 30) == 0.0);
  // t = 0.5 * sqrt(28 / 0.75) = 3.055; two-sided p with 28 df
  CHECK(correlation_p_value(0.5, 30) == doctest::Approx(0.004879).epsilon(1e-3));
}

TEST_CASE("quantile type 7") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile({4, 1, 3, 2}, 0.0) == 1.0);
  CHECK(quantile({4, 1, 3, 2}, 1.0) == 4.0);
  CHECK(quantile({1, 2, 3, 4, 5}, 0.25) == 2.0);
}

TEST_CASE("bootstrap") {
  const std::vector<double> constant(40, 2.5);
  auto mean_of = [](const std::vector<double>& v) {
    return [&v](std::span<const std::size_t> rows) {
      double s = 0;
      for (auto r : rows) s += v[r];
      return s / static_cast<double>(rows.size());
    };
  };
  const auto flat = bootstrap(mean_of(constant), constant.size(), 200, 5);
  CHECK(flat.lower == 2.5);
  CHECK(flat.upper == 2.5);
  CHECK(flat.point == 2.5);

  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd;
  std::vector<double> sample(500);
  for (auto& v : sample) v = nd(rng);
  const auto a = bootstrap(mean_of(sample), sample.size(), 1000, 13);
  const auto b = bootstrap(mean_of(sample), sample.size(), 1000, 13, 0.95, 4);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  CHECK(a.samples == b.samples);
  const double expected = 2 * 1.96 / std::sqrt(500.0);
  CHECK(std::abs((a.upper - a.lower) / expected - 1.0) <= 0.2);
  CHECK(a.point == doctest::Approx(std::accumulate(sample.begin(), sample.end(), 0.0) / 500).epsilon(1e-12));
  CHECK(a.lower <= a.upper);

  int calls = 0;
  auto flaky = [&calls](std::span<const std::size_t>) -> double {
    if (calls++ % 3 == 0) throw NumericError("boom");
    return 1.0;
  };
  CHECK_THROWS_AS(bootstrap(flaky, 10, 30, 1), NumericError);

  CHECK(resample_rows(20, 3, 7) == resample_rows(20, 3, 7));
  CHECK(resample_rows(20, 3, 7) != resample_rows(20, 3, 8));
}

TEST_CASE("eigendecompose_symmetric") {
  const auto id = eigendecompose_symmetric(Eigen::MatrixXd::Identity(4, 4));
  for (int i = 0; i < 4; ++i) CHECK(id.values[i] == doctest::Approx(1.0));

  const auto d = eigendecompose_symmetric(Eigen::Vector3d(1, 3, 2).asDiagonal().toDenseMatrix());
  CHECK(d.values[0] == doctest::Approx(3));
  CHECK(d.values[1] == doctest::Approx(2));
  CHECK(d.values[2] == doctest::Approx(1));
  CHECK(d.vectors(1, 0) == doctest::Approx(1.0));
  CHECK(d.vectors(2, 1) == doctest::Approx(1.0));

  const auto x = random_matrix(100, 5, 21);
  Eigen::MatrixXd cov = (x.rowwise() - x.colwise().mean()).transpose() * (x.rowwise() - x.colwise().mean());
  const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
  const Eigen::MatrixXd corr = sd.cwiseInverse().asDiagonal() * cov * sd.cwiseInverse().asDiagonal();
  const auto e = eigendecompose_symmetric(corr);
  const Eigen::MatrixXd rebuilt = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
  CHECK((rebuilt - corr).cwiseAbs().maxCoeff() < 1e-8);
  for (int i = 1; i < 5; ++i) CHECK(e.values[i - 1] >= e.values[i]);
  for (int c = 0; c < 5; ++c) {
    Eigen::Index arg;
    e.vectors.col(c).cwiseAbs().maxCoeff(&arg);
    CHECK(e.vectors(arg, c) > 0);
  }

  Eigen::Matrix2d bad;
  bad << 1, 0.5, 0.4, 1;
  CHECK_THROWS_AS(eigendecompose_symmetric(bad), InputError);
}
