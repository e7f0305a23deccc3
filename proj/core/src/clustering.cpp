#include "dansep/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace dansep::cluster {
namespace {

void check_cloud(const PointCloud& points, int k, const char* what) {
  if (k < 1) throw Error(std::string(what) + ": k must be at least 1");
  if (points.cols() < k)
    throw Error(std::string(what) + ": k = " + std::to_string(k) + " exceeds the " +
                std::to_string(points.cols()) + " available points");
  if (!points.allFinite()) throw Error(std::string(what) + ": non-finite points");
}

Matrix seed_plus_plus(const PointCloud& x, int k, std::mt19937_64& rng) {
  const Eigen::Index m = x.cols();
  Matrix centers(x.rows(), k);
  std::uniform_int_distribution<Eigen::Index> pick(0, m - 1);
  centers.col(0) = x.col(pick(rng));
  Vector d2 = (x.colwise() - centers.col(0)).colwise().squaredNorm().transpose();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total <= 0.0) {
      chosen = pick(rng);
    } else {
      const double target = unit(rng) * total;
      double acc = 0.0;
      chosen = m - 1;
      for (Eigen::Index i = 0; i < m; ++i) {
        acc += d2(i);
        if (acc > target) {
          chosen = i;
          break;
        }
      }
    }
    centers.col(c) = x.col(chosen);
    d2 = d2.cwiseMin((x.colwise() - centers.col(c)).colwise().squaredNorm().transpose());
  }
  return centers;
}

// Nearest-center assignment; returns whether any label changed. `dist` gets
// each point's squared distance to its center.
bool assign(const PointCloud& x, const Matrix& centers, std::vector<int>& labels, Vector& dist) {
  bool changed = false;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centers.cols(); ++c) {
      const double d = (x.col(i) - centers.col(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    if (labels[i] != best) changed = true;
    labels[i] = best;
    dist(i) = best_d;
  }
  return changed;
}

void update_centers(const PointCloud& x, std::vector<int>& labels, Matrix& centers, Vector& dist) {
  const Eigen::Index k = centers.cols();
  Matrix sums = Matrix::Zero(x.rows(), k);
  std::vector<Eigen::Index> counts(k, 0);
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    sums.col(labels[i]) += x.col(i);
    ++counts[labels[i]];
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    if (counts[c] > 0) {
      centers.col(c) = sums.col(c) / static_cast<double>(counts[c]);
      continue;
    }
    // Empty cluster: move the worst-fitting point (from a cluster that can spare it).
    Eigen::Index far = -1;
    for (Eigen::Index i = 0; i < x.cols(); ++i)
      if (counts[labels[i]] > 1 && (far < 0 || dist(i) > dist(far))) far = i;
    if (far < 0) far = 0;
    const int old = labels[far];
    --counts[old];
    sums.col(old) -= x.col(far);
    if (counts[old] > 0) centers.col(old) = sums.col(old) / static_cast<double>(counts[old]);
    labels[far] = static_cast<int>(c);
    counts[c] = 1;
    sums.col(c) = x.col(far);
    centers.col(c) = x.col(far);
    dist(far) = 0.0;
  }
}

KMeansResult lloyd(const PointCloud& x, int k, const KMeansOptions& opts, std::mt19937_64& rng) {
  KMeansResult r;
  r.centers = seed_plus_plus(x, k, rng);
  r.assignments.assign(x.cols(), -1);
  Vector dist(x.cols());
  assign(x, r.centers, r.assignments, dist);
  r.inertia_trace.push_back(dist.sum());

  bool stale = false;  // centers not yet recomputed for the latest labels
  for (int it = 0; it < opts.max_iter; ++it) {
    update_centers(x, r.assignments, r.centers, dist);
    const bool changed = assign(x, r.centers, r.assignments, dist);
    const double prev = r.inertia_trace.back();
    const double now = dist.sum();
    r.inertia_trace.push_back(now);
    r.iterations = it + 1;
    stale = changed;
    if (!changed) break;
    if (prev - now <= opts.tol * std::max(prev, std::numeric_limits<double>::min())) break;
  }
  if (stale) {
    update_centers(x, r.assignments, r.centers, dist);
    for (Eigen::Index i = 0; i < x.cols(); ++i)
      dist(i) = (x.col(i) - r.centers.col(r.assignments[i])).squaredNorm();
    r.inertia_trace.push_back(dist.sum());
  }
  r.inertia = dist.sum();
  return r;
}

struct Factor {
  Matrix lower;  // Cholesky factor
  double log_det = 0.0;
};

Factor factorize(Matrix& cov, double reg, int& reregularizations) {
  const Eigen::Index dim = cov.rows();
  for (int attempt = 0;; ++attempt) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) {
      Factor f;
      f.lower = llt.matrixL();
      f.log_det = 2.0 * f.lower.diagonal().array().log().sum();
      if (std::isfinite(f.log_det)) return f;
    }
    if (attempt > 60) throw Error("gmm: covariance is not positive definite after regularization");
    cov += reg * std::pow(2.0, attempt) * Matrix::Identity(dim, dim);
    ++reregularizations;
  }
}

// Symmetrizes and raises every eigenvalue below `floor` to it. Covariances that
// are already well conditioned are returned unchanged.
void floor_eigenvalues(Matrix& cov, double floor) {
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() >= floor) return;
  const Vector clamped = eig.eigenvalues().cwiseMax(floor);
  cov = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
  cov = 0.5 * (cov + cov.transpose());
}

// M x k log(pi_k N(x_i | mu_k, Sigma_k)).
Matrix joint_log_density(const GmmModel& model, const std::vector<Factor>& factors,
                         const PointCloud& x) {
  const Eigen::Index dim = x.rows();
  const Eigen::Index k = model.num_components();
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  Matrix out(x.cols(), k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Matrix diff = x.colwise() - model.means.col(c);
    factors[c].lower.triangularView<Eigen::Lower>().solveInPlace(diff);
    const double base = std::log(model.weights(c)) - 0.5 * (dim * log_2pi + factors[c].log_det);
    out.col(c) = (base - 0.5 * diff.colwise().squaredNorm().array()).transpose();
  }
  return out;
}

// Normalizes rows in place to responsibilities; returns per-point log-likelihoods.
Vector normalize_rows(Matrix& log_joint) {
  Vector ll(log_joint.rows());
  for (Eigen::Index i = 0; i < log_joint.rows(); ++i) {
    const double mx = log_joint.row(i).maxCoeff();
    const double lse = mx + std::log((log_joint.row(i).array() - mx).exp().sum());
    ll(i) = lse;
    log_joint.row(i) = (log_joint.row(i).array() - lse).exp();
  }
  return ll;
}

std::vector<Factor> factor_all(GmmModel& model) {
  std::vector<Factor> factors;
  factors.reserve(model.covariances.size());
  for (auto& cov : model.covariances)
    factors.push_back(factorize(cov, model.reg, model.reregularizations));
  return factors;
}

}  // namespace

KMeansResult kmeans(const PointCloud& points, int k, const KMeansOptions& opts) {
  check_cloud(points, k, "kmeans");
  std::mt19937_64 rng(opts.seed);
  KMeansResult best;
  bool have = false;
  for (int run = 0; run < std::max(1, opts.restarts); ++run) {
    KMeansResult r = lloyd(points, k, opts, rng);
    if (!have || r.inertia < best.inertia) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

double default_regularization(const PointCloud& points) {
  const Eigen::Index dim = points.rows();
  const Vector mean = points.rowwise().mean();
  const double trace =
      (points.colwise() - mean).squaredNorm() / static_cast<double>(points.cols());
  return std::max(1e-6 * trace / static_cast<double>(dim), 1e-12);
}

GmmModel gmm_fit(const PointCloud& points, int k, const GmmOptions& opts) {
  check_cloud(points, k, "gmm_fit");
  const Eigen::Index dim = points.rows();
  const Eigen::Index m = points.cols();
  const Matrix eye = Matrix::Identity(dim, dim);

  GmmModel model;
  model.reg = opts.reg > 0.0 ? opts.reg : default_regularization(points);

  KMeansOptions km;
  km.seed = opts.seed;
  km.restarts = opts.kmeans_restarts;
  const KMeansResult init = kmeans(points, k, km);
  model.means = init.centers;
  model.weights = Vector::Zero(k);
  model.covariances.assign(k, Matrix::Zero(dim, dim));
  for (Eigen::Index i = 0; i < m; ++i) {
    const int c = init.assignments[i];
    const Vector d = points.col(i) - model.means.col(c);
    model.covariances[c].noalias() += d * d.transpose();
    model.weights(c) += 1.0;
  }
  for (int c = 0; c < k; ++c) {
    if (opts.mode == CovarianceMode::FixedSpherical) {
      model.covariances[c] = opts.fixed_variance * eye;
      model.weights(c) = 1.0 / k;
    } else {
      model.covariances[c] /= model.weights(c);
      floor_eigenvalues(model.covariances[c], model.reg);
      model.weights(c) /= static_cast<double>(m);
    }
  }

  auto e_step = [&](Matrix& resp) {
    const auto factors = factor_all(model);
    resp = joint_log_density(model, factors, points);
    return normalize_rows(resp).mean();
  };

  Matrix resp;
  double ll = e_step(resp);
  model.ll_trace.push_back(ll);
  for (int it = 1; it <= opts.max_iter; ++it) {
    const Vector mass = resp.colwise().sum().transpose();
    for (int c = 0; c < k; ++c) {
      if (mass(c) <= 1e-12) continue;  // starved component keeps its parameters
      model.means.col(c) = points * resp.col(c) / mass(c);
      if (opts.mode == CovarianceMode::Full) {
        const Matrix centered = points.colwise() - model.means.col(c);
        model.covariances[c].noalias() =
            centered * resp.col(c).asDiagonal() * centered.transpose() / mass(c);
        floor_eigenvalues(model.covariances[c], model.reg);
      }
    }
    if (opts.mode == CovarianceMode::Full) {
      model.weights = mass.cwiseMax(1e-300) / mass.sum();
    }
    const double next = e_step(resp);
    model.ll_trace.push_back(next);
    model.iterations = it;
    const bool done = std::abs(next - ll) < opts.tol;
    ll = next;
    if (done) break;
  }
  model.log_likelihood = ll;
  return model;
}

Matrix gmm_posterior(const GmmModel& model, const PointCloud& points) {
  GmmModel copy = model;
  const auto factors = factor_all(copy);
  Matrix resp = joint_log_density(copy, factors, points);
  normalize_rows(resp);
  return resp;
}

double gmm_mean_log_likelihood(const GmmModel& model, const PointCloud& points) {
  GmmModel copy = model;
  const auto factors = factor_all(copy);
  Matrix resp = joint_log_density(copy, factors, points);
  return normalize_rows(resp).mean();
}

std::string to_string(Algorithm algo) { return algo == Algorithm::Gmm ? "gmm" : "kmeans"; }

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "gmm") return Algorithm::Gmm;
  if (name == "kmeans") return Algorithm::KMeans;
  throw ConfigError("unknown clustering algorithm '" + name + "' (expected kmeans or gmm)");
}

Matrix cluster_attractors(const net::EmbeddingMatrix& v, int n_speakers, Algorithm algo,
                          std::uint64_t seed, const Matrix& column_mask) {
  if (n_speakers < 1) throw Error("cluster_attractors: n_speakers must be at least 1");
  PointCloud points;
  if (column_mask.size() == 0) {
    points = v.values;
  } else {
    if (column_mask.size() != v.values.cols())
      throw Error("cluster_attractors: column mask size does not match the embedding");
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < column_mask.size(); ++j)
      if (column_mask(j) != 0.0) keep.push_back(j);
    points.resize(v.values.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j)
      points.col(static_cast<Eigen::Index>(j)) = v.values.col(keep[j]);
  }

  Matrix centers;
  Vector mass(n_speakers);
  if (algo == Algorithm::KMeans) {
    KMeansOptions opts;
    opts.seed = seed;
    const KMeansResult r = kmeans(points, n_speakers, opts);
    centers = r.centers;
    mass.setZero();
    for (int a : r.assignments) mass(a) += 1.0;
  } else {
    GmmOptions opts;
    opts.seed = seed;
    const GmmModel g = gmm_fit(points, n_speakers, opts);
    centers = g.means;
    mass = g.weights;
  }

  std::vector<int> order(n_speakers);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mass(a) > mass(b); });
  Matrix attractors(n_speakers, v.dim());
  for (int i = 0; i < n_speakers; ++i) attractors.row(i) = centers.col(order[i]).transpose();
  return attractors;
}

}  // namespace dansep::cluster
