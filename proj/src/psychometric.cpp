#include "judgeaudit/psychometric.hpp"

#include "judgeaudit/error.hpp"
#include "judgeaudit/kernels.hpp"
#include "judgeaudit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace judgeaudit::psychometric {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_complete(const ScoreCube& cube, const char* what) {
  if (!cube.complete()) {
    throw InputError(std::string(what) + ": score cube has missing cells; use complete_cases() or impute first");
  }
}

// Items centred and scaled to unit norm, so a dot product is a Pearson r.
// Constant items come back as NaN rows.
std::vector<std::vector<double>> standardized_items(const ScoreCube& cube, std::size_t f) {
  std::vector<std::vector<double>> out(cube.n());
  for (std::size_t q = 0; q < cube.n(); ++q) {
    const auto x = cube.item(f, q);
    const double mu = kernels::mean(x);
    const double ss = kernels::sum_sq_dev(x, mu);
    out[q].resize(x.size());
    if (!(ss > 0.0)) {
      std::fill(out[q].begin(), out[q].end(), kNaN);
      continue;
    }
    const double inv = 1.0 / std::sqrt(ss);
    std::transform(x.begin(), x.end(), out[q].begin(), [&](double v) { return (v - mu) * inv; });
  }
  return out;
}

// Mean correlation over item pairs (q, q') with q != q' (q < q' when same).
double mean_item_correlation(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                             bool same) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t q = 0; q < a.size(); ++q) {
    for (std::size_t p = same ? q + 1 : 0; p < b.size(); ++p) {
      if (p == q) continue;
      const double r = kernels::dot(a[q], b[p]);
      if (std::isfinite(r)) {
        total += std::clamp(r, -1.0, 1.0);
        ++count;
      }
    }
  }
  return count ? total / static_cast<double>(count) : kNaN;
}

}  // namespace

ScoreCube::ScoreCube(std::vector<std::string> factors, std::vector<std::string> questions,
                     std::vector<std::string> observations)
    : factors_(std::move(factors)),
      questions_(std::move(questions)),
      observations_(std::move(observations)),
      values_(factors_.size() * questions_.size() * observations_.size(), kNaN) {}

ScoreCube ScoreCube::from_sample(const SampleMatrix& sample) {
  std::map<std::string, std::size_t> qidx, oidx;
  for (const auto& q : sample.question_ids) qidx.emplace(q, 0);
  for (const auto& o : sample.observation_ids) oidx.emplace(o, 0);
  std::vector<std::string> qs, os;
  for (auto& [name, i] : qidx) {
    i = qs.size();
    qs.push_back(name);
  }
  for (auto& [name, i] : oidx) {
    i = os.size();
    os.push_back(name);
  }
  ScoreCube cube(sample.criteria, qs, os);
  std::vector<double> sums(cube.values_.size(), 0.0);
  std::vector<int> counts(cube.values_.size(), 0);
  for (Eigen::Index row = 0; row < sample.rows(); ++row) {
    const auto q = qidx.at(sample.question_ids[static_cast<std::size_t>(row)]);
    const auto o = oidx.at(sample.observation_ids[static_cast<std::size_t>(row)]);
    for (std::size_t f = 0; f < cube.k(); ++f) {
      const double v = sample.factors(row, static_cast<Eigen::Index>(f));
      if (!(v >= 1.0 && v <= 5.0)) throw InputError("score cube: factor score outside [1, 5]");
      const auto at = (f * cube.n() + q) * cube.r() + o;
      sums[at] += v;
      ++counts[at];
    }
  }
  for (std::size_t i = 0; i < sums.size(); ++i) {
    if (counts[i] > 0) cube.values_[i] = sums[i] / counts[i];
  }
  return cube;
}

double& ScoreCube::at(std::size_t f, std::size_t q, std::size_t o) { return values_.at((f * n() + q) * r() + o); }

double ScoreCube::at(std::size_t f, std::size_t q, std::size_t o) const { return values_.at((f * n() + q) * r() + o); }

std::span<const double> ScoreCube::item(std::size_t f, std::size_t q) const {
  return {values_.data() + (f * n() + q) * r(), r()};
}

std::span<const double> ScoreCube::factor_scores(std::size_t f) const {
  return {values_.data() + f * n() * r(), n() * r()};
}

bool ScoreCube::complete() const {
  return std::none_of(values_.begin(), values_.end(), [](double v) { return std::isnan(v); });
}

ScoreCube ScoreCube::complete_cases() const {
  std::vector<std::size_t> keep;
  for (std::size_t o = 0; o < r(); ++o) {
    bool ok = true;
    for (std::size_t f = 0; f < k() && ok; ++f) {
      for (std::size_t q = 0; q < n() && ok; ++q) ok = !std::isnan(at(f, q, o));
    }
    if (ok) keep.push_back(o);
  }
  std::vector<std::string> os;
  for (auto o : keep) os.push_back(observations_[o]);
  ScoreCube out(factors_, questions_, os);
  for (std::size_t f = 0; f < k(); ++f) {
    for (std::size_t q = 0; q < n(); ++q) {
      for (std::size_t t = 0; t < keep.size(); ++t) out.at(f, q, t) = at(f, q, keep[t]);
    }
  }
  return out;
}

ScoreCube ScoreCube::permute_factors(std::span<const std::size_t> order) const {
  std::vector<std::string> fs;
  for (auto f : order) fs.push_back(factors_.at(f));
  ScoreCube out(fs, questions_, observations_);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto src = factor_scores(order[i]);
    std::copy(src.begin(), src.end(), out.values_.begin() + static_cast<std::ptrdiff_t>(i * n() * r()));
  }
  return out;
}

double cronbach_alpha(const ScoreCube& cube, std::size_t factor) {
  require_complete(cube, "cronbach_alpha");
  const std::size_t n = cube.n();
  if (n < 2) throw InputError("cronbach_alpha: need at least 2 questions");
  if (cube.r() < 3) throw InputError("cronbach_alpha: need at least 3 observations");
  double item_var = 0.0;
  std::vector<double> totals(cube.r(), 0.0);
  for (std::size_t q = 0; q < n; ++q) {
    const auto x = cube.item(factor, q);
    item_var += stats::variance(x);
    for (std::size_t o = 0; o < x.size(); ++o) totals[o] += x[o];
  }
  const double total_var = stats::variance(totals);
  if (!(total_var > 0.0)) {
    throw NumericError("no observation variance: factor '" + cube.factors().at(factor) + "'");
  }
  const double nn = static_cast<double>(n);
  return nn / (nn - 1.0) * (1.0 - item_var / total_var);
}

Eigen::MatrixXd varimax(const Eigen::MatrixXd& loadings, int max_iter, double eps) {
  const Eigen::Index p = loadings.rows();
  const Eigen::Index nf = loadings.cols();
  if (nf < 2) return loadings;
  Eigen::VectorXd sc = loadings.rowwise().norm();
  for (Eigen::Index i = 0; i < p; ++i) {
    if (!(sc(i) > 0.0)) sc(i) = 1.0;
  }
  const Eigen::MatrixXd x = sc.cwiseInverse().asDiagonal() * loadings;
  Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(nf, nf);
  double d = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd z = x * rot;
    const Eigen::RowVectorXd colsq = z.array().square().colwise().sum();
    const Eigen::MatrixXd target = z.array().cube().matrix() - z * (colsq / static_cast<double>(p)).asDiagonal();
    const Eigen::MatrixXd b = x.transpose() * target;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeFullU | Eigen::ComputeFullV);
    rot = svd.matrixU() * svd.matrixV().transpose();
    const double past = d;
    d = svd.singularValues().sum();
    if (d < past * (1.0 + eps)) break;
  }
  return sc.asDiagonal() * (x * rot);
}

std::vector<std::size_t> hungarian(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) throw InputError("hungarian: cost matrix must be square");
  // Potentials formulation, 1-based with a virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

LoadingsMatrix loadings_from_correlation(const Eigen::MatrixXd& correlation, std::vector<std::string> factors) {
  if (!correlation.allFinite()) throw NumericError("extract_loadings: non-finite factor correlations");
  const auto eig = stats::eigendecompose_symmetric(correlation);
  const Eigen::VectorXd root = eig.values.cwiseMax(0.0).cwiseSqrt();
  // PCA loadings V sqrt(L), turned by V' onto the symmetric square root of the
  // correlation. Same span, but no dependence on the basis the eigensolver
  // picks inside a repeated eigenvalue, which otherwise strands varimax.
  const Eigen::MatrixXd start = eig.vectors * root.asDiagonal() * eig.vectors.transpose();

  LoadingsMatrix out;
  out.factors = std::move(factors);
  out.correlation = correlation;
  out.eigenvalues = eig.values;
  out.lambda = varimax(start);
  out.assignment = hungarian(-out.lambda.cwiseAbs());
  // Latent sign is arbitrary: orient each matched column so its own loading is positive.
  for (std::size_t i = 0; i < out.assignment.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(out.assignment[i]);
    if (out.lambda(static_cast<Eigen::Index>(i), col) < 0.0) out.lambda.col(col) *= -1.0;
  }
  return out;
}

LoadingsMatrix extract_loadings(const ScoreCube& cube) {
  require_complete(cube, "extract_loadings");
  const auto k = static_cast<Eigen::Index>(cube.k());
  Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i + 1; j < k; ++j) {
      corr(i, j) = corr(j, i) = stats::pearson(cube.factor_scores(static_cast<std::size_t>(i)),
                                               cube.factor_scores(static_cast<std::size_t>(j)));
    }
  }
  return loadings_from_correlation(corr, cube.factors());
}

double cross_loading_ratio(const LoadingsMatrix& loadings, std::size_t factor) {
  const auto row = static_cast<Eigen::Index>(factor);
  const auto own = static_cast<Eigen::Index>(loadings.assignment.at(factor));
  double cross = 0.0;
  for (Eigen::Index j = 0; j < loadings.lambda.cols(); ++j) {
    if (j != own) cross = std::max(cross, std::abs(loadings.lambda(row, j)));
  }
  if (cross <= 1e-12) return kInf;
  return std::max(0.0, loadings.lambda(row, own)) / cross;
}

double sigmoid_normalize_clr(double clr) {
  if (std::isinf(clr) && clr > 0.0) return 1.0;
  return 1.0 / (1.0 + std::exp(-2.0 * (clr - 1.5)));
}

double htmt(const ScoreCube& cube, std::size_t i, std::size_t j) {
  require_complete(cube, "htmt");
  if (cube.n() < 2) throw InputError("htmt: each factor needs at least 2 question items");
  const auto items_i = standardized_items(cube, i);
  const auto items_j = i == j ? items_i : standardized_items(cube, j);
  const double within_i = mean_item_correlation(items_i, items_i, true);
  const double within_j = i == j ? within_i : mean_item_correlation(items_j, items_j, true);
  for (auto [f, w] : {std::pair{i, within_i}, std::pair{j, within_j}}) {
    if (!(w > 0.0)) {
      throw NumericError("unreliable trait: factor '" + cube.factors().at(f) +
                         "' has non-positive mean within-factor item correlation");
    }
  }
  const double cross = mean_item_correlation(items_i, items_j, false);
  return std::abs(cross) / std::sqrt(within_i * within_j);
}

Eigen::MatrixXd htmt_matrix(const ScoreCube& cube) {
  const auto k = static_cast<Eigen::Index>(cube.k());
  Eigen::MatrixXd h(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i; j < k; ++j) {
      h(i, j) = h(j, i) = htmt(cube, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    }
  }
  return h;
}

PsychometricReport psychometric_validity(const ScoreCube& cube, double score_range) {
  require_complete(cube, "psychometric_validity");
  if (cube.k() < 2) throw InputError("psychometric_validity: need at least 2 factors");
  if (!(score_range > 0.0)) throw InputError("psychometric_validity: score_range must be positive");

  PsychometricReport r;
  r.factors = cube.factors();
  r.score_range = score_range;
  r.questions = cube.n();
  r.observations = cube.r();
  const std::size_t k = cube.k();
  for (std::size_t f = 0; f < k; ++f) r.alpha.push_back(cronbach_alpha(cube, f));
  r.loadings = extract_loadings(cube);
  for (std::size_t f = 0; f < k; ++f) {
    r.clr_raw.push_back(cross_loading_ratio(r.loadings, f));
    r.clr_norm.push_back(sigmoid_normalize_clr(r.clr_raw.back()));
  }
  r.htmt = htmt_matrix(cube);

  r.mean_alpha = std::accumulate(r.alpha.begin(), r.alpha.end(), 0.0) / static_cast<double>(k);
  r.mean_clr_norm = std::accumulate(r.clr_norm.begin(), r.clr_norm.end(), 0.0) / static_cast<double>(k);
  double off = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) off += r.htmt(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  r.mean_htmt = 2.0 * off / static_cast<double>(k * (k - 1));
  r.unified = (r.mean_alpha + r.mean_clr_norm + (1.0 - r.mean_htmt)) / 3.0;
  r.sensitivity = std::sqrt(std::max(0.0, 1.0 - r.unified)) * score_range;
  return r;
}

json to_json(const LoadingsMatrix& l) {
  json j;
  j["factors"] = l.factors;
  j["rotation"] = l.rotation;
  j["eigenvalues"] = std::vector<double>(l.eigenvalues.data(), l.eigenvalues.data() + l.eigenvalues.size());
  json lambda = json::array();
  for (Eigen::Index i = 0; i < l.lambda.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(l.lambda.cols()));
    for (Eigen::Index c = 0; c < l.lambda.cols(); ++c) row[static_cast<std::size_t>(c)] = l.lambda(i, c);
    lambda.push_back(row);
  }
  j["lambda"] = lambda;
  j["assignment"] = l.assignment;
  return j;
}

json to_json(const PsychometricReport& r) {
  json j;
  j["factors"] = r.factors;
  j["alpha"] = r.alpha;
  json clr = json::array();
  for (double c : r.clr_raw) clr.push_back(std::isinf(c) ? json("inf") : json(c));
  j["clr_raw"] = clr;
  j["clr_norm"] = r.clr_norm;
  json h = json::array();
  for (Eigen::Index i = 0; i < r.htmt.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(r.htmt.cols()));
    for (Eigen::Index c = 0; c < r.htmt.cols(); ++c) row[static_cast<std::size_t>(c)] = r.htmt(i, c);
    h.push_back(row);
  }
  j["htmt"] = h;
  j["mean_alpha"] = r.mean_alpha;
  j["mean_clr_norm"] = r.mean_clr_norm;
  j["mean_htmt"] = r.mean_htmt;
  j["unified"] = r.unified;
  j["sensitivity"] = r.sensitivity;
  j["score_range"] = r.score_range;
  j["questions"] = r.questions;
  j["observations"] = r.observations;
  j["loadings"] = to_json(r.loadings);
  return j;
}

std::string loadings_csv(const LoadingsMatrix& l) {
  std::ostringstream out;
  out.precision(6);
  out << "observed_factor,latent_factor,loading\n";
  for (Eigen::Index i = 0; i < l.lambda.rows(); ++i) {
    for (Eigen::Index c = 0; c < l.lambda.cols(); ++c) {
      out << l.factors[static_cast<std::size_t>(i)] << ",latent_" << (c + 1) << ',' << l.lambda(i, c) << '\n';
    }
  }
  return out.str();
}

}  // namespace judgeaudit::psychometric
