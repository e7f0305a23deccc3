#pragma once

#include "dansep/common.hpp"
#include "dansep/network.hpp"

#include <cstdint>
#include <optional>

namespace dansep::cluster {

/// Points are stored column-wise: a K x M matrix holds M points of dimension K.
using PointCloud = Matrix;

struct KMeansOptions {
  int max_iter = 100;
  double tol = 1e-10;  // relative inertia decrease that counts as converged
  int restarts = 5;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  Matrix centers;                    // K x k
  std::vector<int> assignments;      // one label per point
  double inertia = 0.0;              // sum of squared distances to assigned centers
  std::vector<double> inertia_trace; // per Lloyd iteration of the winning run
  int iterations = 0;
};

/// Lloyd iterations from k-means++ seeding; the best of `restarts` runs by
/// inertia. An empty cluster is re-seeded with the point farthest from its center.
KMeansResult kmeans(const PointCloud& points, int k, const KMeansOptions& opts = {});

enum class CovarianceMode {
  Full,            // each component has its own unrestricted covariance
  FixedSpherical,  // covariances frozen to variance * I, weights frozen to 1/k
};

struct GmmOptions {
  int max_iter = 100;
  double tol = 1e-6;  // on the change of mean log-likelihood per point
  /// Eigenvalue floor for every covariance. Non-positive selects
  /// 1e-6 * trace(global covariance) / K.
  double reg = 0.0;
  std::uint64_t seed = 0;
  int kmeans_restarts = 5;
  CovarianceMode mode = CovarianceMode::Full;
  double fixed_variance = 1.0;  // used by CovarianceMode::FixedSpherical
};

struct GmmModel {
  Vector weights;                 // k, on the simplex
  Matrix means;                   // K x k
  std::vector<Matrix> covariances;
  double log_likelihood = 0.0;    // mean per point
  std::vector<double> ll_trace;   // mean log-likelihood after each E-step
  int iterations = 0;
  double reg = 0.0;
  int reregularizations = 0;      // times a covariance needed extra loading

  Eigen::Index num_components() const { return weights.size(); }
};

/// Default eigenvalue floor: 1e-6 * trace(global covariance) / K, with a tiny
/// absolute minimum so degenerate clouds stay positive definite.
double default_regularization(const PointCloud& points);

/// EM with full covariances, initialized from k-means (means = centers,
/// covariances = per-cluster biased covariance, weights = cluster fractions).
/// Covariance eigenvalues below reg are raised to reg, so a well-conditioned
/// fit is plain EM. Stops when the mean log-likelihood changes by less than tol.
GmmModel gmm_fit(const PointCloud& points, int k, const GmmOptions& opts = {});

/// M x k responsibilities, rows on the simplex (log-sum-exp stabilized).
Matrix gmm_posterior(const GmmModel& model, const PointCloud& points);

/// Mean log-likelihood per point under the model.
double gmm_mean_log_likelihood(const GmmModel& model, const PointCloud& points);

enum class Algorithm { KMeans, Gmm };

std::string to_string(Algorithm algo);
Algorithm algorithm_from_string(const std::string& name);

/// Clusters the columns of V (optionally only those with a nonzero entry in
/// `column_mask`) and returns the cluster centers as an N x K attractor matrix,
/// rows ordered by descending cluster mass.
Matrix cluster_attractors(const net::EmbeddingMatrix& v, int n_speakers, Algorithm algo,
                          std::uint64_t seed, const Matrix& column_mask = {});

}  // namespace dansep::cluster
