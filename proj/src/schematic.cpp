#include "judgeaudit/schematic.hpp"

#include "judgeaudit/error.hpp"
#include "judgeaudit/kernels.hpp"
#include "judgeaudit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace judgeaudit::schematic {

using nlohmann::json;

namespace {

std::string term_name(const std::vector<std::string>& criteria, const std::vector<std::size_t>& powers) {
  std::string name;
  for (std::size_t j = 0; j < powers.size(); ++j) {
    if (powers[j] == 0) continue;
    if (!name.empty()) name += '*';
    name += criteria[j];
    if (powers[j] > 1) name += '^' + std::to_string(powers[j]);
  }
  return name;
}

// All multisets of `size` factor indices drawn from [start, k), lexicographic.
void multisets(std::size_t k, std::size_t size, std::size_t start, std::vector<std::size_t>& current,
               std::vector<std::vector<std::size_t>>& out) {
  if (current.size() == size) {
    out.push_back(current);
    return;
  }
  for (std::size_t j = start; j < k; ++j) {
    current.push_back(j);
    multisets(k, size, j, current, out);
    current.pop_back();
  }
}

Eigen::MatrixXd polynomial_design(const Eigen::MatrixXd& factors, const std::vector<PolynomialTerm>& terms) {
  Eigen::MatrixXd x(factors.rows(), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t t = 0; t < terms.size(); ++t) {
    Eigen::VectorXd col = Eigen::VectorXd::Ones(factors.rows());
    for (std::size_t j = 0; j < terms[t].powers.size(); ++j) {
      for (std::size_t e = 0; e < terms[t].powers[j]; ++e) col.array() *= factors.col(static_cast<Eigen::Index>(j)).array();
    }
    x.col(static_cast<Eigen::Index>(t)) = col;
  }
  return x;
}

std::vector<double> abs_weights(std::span<const double> weights) {
  std::vector<double> a(weights.size());
  std::transform(weights.begin(), weights.end(), a.begin(), [](double w) { return std::abs(w); });
  if (std::all_of(a.begin(), a.end(), [](double w) { return w == 0.0; }) || a.empty()) {
    throw NumericError("no factor signal: every weight is zero");
  }
  return a;
}

struct Points {
  std::vector<std::string> ids;
  std::vector<double> data;  // row-major n x k
  std::size_t k = 0;
  std::size_t n() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * k, k}; }
};

Points question_means(const SampleMatrix& sample) {
  std::map<std::string, std::pair<Eigen::VectorXd, int>> acc;
  for (Eigen::Index i = 0; i < sample.rows(); ++i) {
    auto& [sum, count] = acc[sample.question_ids[static_cast<std::size_t>(i)]];
    if (count == 0) sum = Eigen::VectorXd::Zero(sample.k());
    sum += sample.factors.row(i).transpose();
    ++count;
  }
  Points p;
  p.k = static_cast<std::size_t>(sample.k());
  for (const auto& [id, entry] : acc) {
    p.ids.push_back(id);
    const Eigen::VectorXd mean = entry.first / entry.second;
    p.data.insert(p.data.end(), mean.data(), mean.data() + mean.size());
  }
  return p;
}

struct KMeansResult {
  std::vector<int> labels;
  std::vector<double> centroids;  // row-major c x k
  double inertia = std::numeric_limits<double>::infinity();
};

KMeansResult kmeans_once(const Points& pts, int c, std::mt19937_64& rng) {
  const std::size_t n = pts.n();
  const std::size_t k = pts.k;
  const auto uc = static_cast<std::size_t>(c);
  std::vector<double> centroids(uc * k);
  auto centroid = [&](std::size_t j) { return std::span<double>(centroids.data() + j * k, k); };

  // k-means++ seeding
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  for (std::size_t j = 0; j < uc; ++j) {
    std::copy_n(pts.row(pick).data(), k, centroid(j).data());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], kernels::sum_sq_diff(pts.row(i), centroid(j)));
      total += d2[i];
    }
    if (j + 1 == uc) break;
    if (total <= 0.0) {
      pick = first(rng);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= d2[i];
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
  }

  KMeansResult out;
  out.labels.assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < uc; ++j) {
        const double d = kernels::sum_sq_diff(pts.row(i), centroid(j));
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(j);
        }
      }
      if (out.labels[i] != best) changed = true;
      out.labels[i] = best;
    }
    // Refill empty clusters with the point farthest from its centroid.
    std::vector<std::size_t> counts(uc, 0);
    for (int l : out.labels) ++counts[static_cast<std::size_t>(l)];
    for (std::size_t j = 0; j < uc; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto l = static_cast<std::size_t>(out.labels[i]);
        if (counts[l] <= 1) continue;
        const double d = kernels::sum_sq_diff(pts.row(i), centroid(l));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far_d < 0.0) continue;
      --counts[static_cast<std::size_t>(out.labels[far])];
      out.labels[far] = static_cast<int>(j);
      ++counts[j];
      changed = true;
    }
    std::fill(centroids.begin(), centroids.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto ctr = centroid(static_cast<std::size_t>(out.labels[i]));
      for (std::size_t d = 0; d < k; ++d) ctr[d] += pts.row(i)[d];
    }
    for (std::size_t j = 0; j < uc; ++j) {
      if (counts[j] == 0) continue;
      for (auto& v : centroid(j)) v /= static_cast<double>(counts[j]);
    }
    if (!changed) break;
  }
  out.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) out.inertia += kernels::sum_sq_diff(pts.row(i), centroid(static_cast<std::size_t>(out.labels[i])));
  out.centroids = std::move(centroids);
  return out;
}

double silhouette(const Points& pts, const std::vector<int>& labels, int c) {
  const std::size_t n = pts.n();
  std::vector<std::size_t> counts(static_cast<std::size_t>(c), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> dist(static_cast<std::size_t>(c), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      dist[static_cast<std::size_t>(labels[j])] += std::sqrt(kernels::sum_sq_diff(pts.row(i), pts.row(j)));
    }
    const auto own = static_cast<std::size_t>(labels[i]);
    if (counts[own] <= 1) continue;  // singleton contributes 0
    const double a = dist[own] / static_cast<double>(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < dist.size(); ++l) {
      if (l != own && counts[l] > 0) b = std::min(b, dist[l] / static_cast<double>(counts[l]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0 && std::isfinite(b)) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

QuestionClusters run_kmeans(const Points& pts, int c, std::uint64_t seed) {
  constexpr int kRestarts = 8;
  KMeansResult best;
  for (int r = 0; r < kRestarts; ++r) {
    auto rng = derived_rng(seed, static_cast<std::uint64_t>(c) * 1000 + static_cast<std::uint64_t>(r));
    auto result = kmeans_once(pts, c, rng);
    if (result.inertia < best.inertia - 1e-12) best = std::move(result);
  }
  // Canonical labels: order of first appearance over the sorted question ids.
  std::vector<int> remap(static_cast<std::size_t>(c), -1);
  int next = 0;
  for (int l : best.labels) {
    if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = next++;
  }
  QuestionClusters out;
  out.c = c;
  out.centroids = Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(pts.k));
  for (int l = 0; l < c; ++l) {
    const int to = remap[static_cast<std::size_t>(l)];
    if (to < 0) continue;
    for (std::size_t d = 0; d < pts.k; ++d) out.centroids(to, static_cast<Eigen::Index>(d)) = best.centroids[static_cast<std::size_t>(l) * pts.k + d];
  }
  std::vector<int> labels(best.labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = remap[static_cast<std::size_t>(best.labels[i])];
    out.assignments[pts.ids[i]] = labels[i];
  }
  out.silhouette = silhouette(pts, labels, c);
  return out;
}

}  // namespace

stats::OlsFit fit_linear_schema(const SampleMatrix& sample) {
  return stats::ols(sample.factors, sample.overall, sample.criteria);
}

std::vector<PolynomialTerm> polynomial_terms(const std::vector<std::string>& criteria, int degree) {
  if (degree < 1) throw InputError("polynomial degree must be >= 1");
  const std::size_t k = criteria.size();
  std::vector<PolynomialTerm> terms;
  for (int d = 1; d <= degree; ++d) {
    std::vector<std::vector<std::size_t>> sets;
    std::vector<std::size_t> current;
    multisets(k, static_cast<std::size_t>(d), 0, current, sets);
    std::stable_partition(sets.begin(), sets.end(), [](const auto& s) { return s.front() == s.back(); });
    for (const auto& s : sets) {
      PolynomialTerm t;
      t.powers.assign(k, 0);
      for (auto j : s) ++t.powers[j];
      t.name = term_name(criteria, t.powers);
      terms.push_back(std::move(t));
    }
  }
  return terms;
}

stats::OlsFit fit_polynomial_schema(const SampleMatrix& sample, const SchematicOptions& options) {
  const auto terms = polynomial_terms(sample.criteria, options.polynomial_degree);
  const auto params = static_cast<Eigen::Index>(terms.size()) + 1;
  if (sample.rows() <= params && !options.allow_underdetermined) {
    throw NumericError("polynomial schema needs more than " + std::to_string(params) + " rows, got " +
                       std::to_string(sample.rows()));
  }
  std::vector<std::string> names;
  for (const auto& t : terms) names.push_back(t.name);
  stats::OlsOptions ols_options;
  ols_options.allow_underdetermined = options.allow_underdetermined;
  return stats::ols(polynomial_design(sample.factors, terms), sample.overall, names, ols_options);
}

double weight_disparity(std::span<const double> weights) {
  const auto a = abs_weights(weights);
  const double mu = kernels::mean(a);
  const double sigma = std::sqrt(kernels::sum_sq_dev(a, mu) / static_cast<double>(a.size()));
  return sigma / mu;
}

double weight_entropy(std::span<const double> weights) {
  const auto a = abs_weights(weights);
  const double total = kernels::sum(a);
  double h = 0.0;
  for (double w : a) {
    if (w > 0.0) {
      const double p = w / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

QuestionClusters cluster_questions(const SampleMatrix& sample, std::optional<int> c, std::uint64_t seed) {
  const Points pts = question_means(sample);
  const int questions = static_cast<int>(pts.n());
  if (questions < 2) throw InputError("cluster_questions: need at least 2 distinct questions, got " + std::to_string(questions));
  if (c) {
    if (*c < 2) throw InputError("cluster_questions: cluster count must be >= 2, got " + std::to_string(*c));
    if (*c > questions) {
      throw InputError("cluster_questions: " + std::to_string(*c) + " clusters requested for " +
                       std::to_string(questions) + " questions");
    }
    return run_kmeans(pts, *c, seed);
  }
  const int hi = std::max(2, std::min(8, questions / 10));
  std::optional<QuestionClusters> best;
  for (int cc = 2; cc <= std::min(hi, questions); ++cc) {
    auto candidate = run_kmeans(pts, cc, seed);
    if (!best || candidate.silhouette > best->silhouette + 1e-12) best = std::move(candidate);
  }
  return *best;
}

ContextStability context_stability(const SampleMatrix& sample, const QuestionClusters& clusters, bool ordered_pairs) {
  const auto k = sample.k();
  std::map<int, std::vector<std::size_t>> rows;
  for (Eigen::Index i = 0; i < sample.rows(); ++i) {
    const auto it = clusters.assignments.find(sample.question_ids[static_cast<std::size_t>(i)]);
    if (it == clusters.assignments.end()) {
      throw InputError("context_stability: question '" + sample.question_ids[static_cast<std::size_t>(i)] +
                       "' has no cluster assignment");
    }
    rows[it->second].push_back(static_cast<std::size_t>(i));
  }
  ContextStability out;
  for (const auto& [cluster, idx] : rows) {
    if (static_cast<Eigen::Index>(idx.size()) <= k + 1) {
      out.warnings.push_back("cluster " + std::to_string(cluster) + " dropped: " + std::to_string(idx.size()) +
                             " rows, need more than " + std::to_string(k + 1));
      continue;
    }
    const SampleMatrix sub = sample.select_rows(idx);
    try {
      const auto fit = fit_linear_schema(sub);
      out.cluster_weights[cluster] = fit.coefficients.tail(k);
    } catch (const NumericError& e) {
      out.warnings.push_back("cluster " + std::to_string(cluster) + " dropped: " + e.what());
    }
  }
  const auto c = out.cluster_weights.size();
  if (c < 2) throw NumericError("context_stability: fewer than 2 usable clusters");
  double total = 0.0;
  for (auto i = out.cluster_weights.begin(); i != out.cluster_weights.end(); ++i) {
    for (auto j = std::next(i); j != out.cluster_weights.end(); ++j) total += (i->second - j->second).norm();
  }
  const double pairs = static_cast<double>(c * (c - 1));
  out.cs = 1.0 - (ordered_pairs ? 2.0 : 1.0) * total / pairs;
  return out;
}

SchematicReport schematic_adherence(const SampleMatrix& sample, const SchematicOptions& options,
                                    const QuestionClusters* clusters) {
  const auto linear = fit_linear_schema(sample);
  const auto poly = fit_polynomial_schema(sample, options);

  SchematicReport r;
  r.criteria = sample.criteria;
  r.rows = static_cast<std::size_t>(sample.rows());
  r.r2_linear = linear.r_squared;
  r.r2_polynomial = poly.r_squared;
  r.r2_schematic = std::max(r.r2_linear, r.r2_polynomial);
  r.sensitivity = std::sqrt(std::max(0.0, 1.0 - r.r2_schematic));
  r.linear_weights = linear.coefficients;
  r.polynomial_underdetermined = poly.underdetermined;
  r.polynomial_terms = polynomial_terms(sample.criteria, options.polynomial_degree);
  for (std::size_t t = 0; t < r.polynomial_terms.size(); ++t) {
    r.polynomial_terms[t].coefficient = poly.coefficients(static_cast<Eigen::Index>(t) + 1);
  }

  const Eigen::VectorXd w = linear.coefficients.tail(sample.k());
  const std::span<const double> ws(w.data(), static_cast<std::size_t>(w.size()));
  try {
    r.weight_disparity = weight_disparity(ws);
    r.weight_entropy = weight_entropy(ws);
  } catch (const NumericError& e) {
    r.weight_disparity = r.weight_entropy = std::numeric_limits<double>::quiet_NaN();
    r.warnings.emplace_back(e.what());
  }

  if (clusters) {
    auto cs = context_stability(sample, *clusters, options.cs_ordered_pairs);
    r.context_stability = cs.cs;
    r.cluster_weights = std::move(cs.cluster_weights);
    r.warnings.insert(r.warnings.end(), cs.warnings.begin(), cs.warnings.end());
  }
  return r;
}

json to_json(const SchematicReport& r) {
  json j;
  j["criteria"] = r.criteria;
  j["rows"] = r.rows;
  j["r2_linear"] = r.r2_linear;
  j["r2_polynomial"] = r.r2_polynomial;
  j["r2_schematic"] = r.r2_schematic;
  j["sensitivity"] = r.sensitivity;
  j["unexplained_percent"] = r.unexplained_percent();
  json weights = json::object();
  weights["intercept"] = r.linear_weights.size() ? r.linear_weights(0) : 0.0;
  for (std::size_t c = 0; c < r.criteria.size() && static_cast<Eigen::Index>(c + 1) < r.linear_weights.size(); ++c) {
    weights[r.criteria[c]] = r.linear_weights(static_cast<Eigen::Index>(c) + 1);
  }
  j["linear_weights"] = weights;
  json terms = json::array();
  for (const auto& t : r.polynomial_terms) terms.push_back({{"term", t.name}, {"coefficient", t.coefficient}});
  j["polynomial_terms"] = terms;
  j["polynomial_underdetermined"] = r.polynomial_underdetermined;
  j["weight_disparity"] = r.weight_disparity;
  j["weight_entropy"] = r.weight_entropy;
  j["context_stability"] = r.context_stability ? json(*r.context_stability) : json(nullptr);
  json cw = json::object();
  for (const auto& [cluster, wv] : r.cluster_weights) {
    json one = json::object();
    for (std::size_t c = 0; c < r.criteria.size(); ++c) one[r.criteria[c]] = wv(static_cast<Eigen::Index>(c));
    cw[std::to_string(cluster)] = one;
  }
  j["cluster_weights"] = cw;
  j["warnings"] = r.warnings;
  return j;
}

std::string weights_csv(const SchematicReport& r) {
  std::ostringstream out;
  out.precision(6);
  out << "factor,weight";
  for (const auto& [cluster, w] : r.cluster_weights) out << ",cluster_" << cluster;
  out << '\n';
  for (std::size_t c = 0; c < r.criteria.size(); ++c) {
    out << r.criteria[c] << ',' << r.linear_weights(static_cast<Eigen::Index>(c) + 1);
    for (const auto& [cluster, w] : r.cluster_weights) out << ',' << w(static_cast<Eigen::Index>(c));
    out << '\n';
  }
  return out.str();
}

}  // namespace judgeaudit::schematic
