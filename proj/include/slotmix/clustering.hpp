#pragma once

#include <vector>

#include "slotmix/matrix.hpp"
#include "slotmix/rng.hpp"

namespace slotmix {

inline constexpr double kVarianceFloor = 1e-6;
inline constexpr double kDegenerateWeight = 1e-12;

// Diagonal-covariance Gaussian mixture parameters.
struct GmmState {
  int64_t k = 0;
  int64_t dim = 0;
  Mat mu;     // K x D
  Mat sigma;  // K x D per-dimension variances, >= kVarianceFloor
  std::vector<double> pi;

  static GmmState uniform_init(const Mat& mu0, double var0);
};

// Posterior assignment weights; each row sums to 1.
struct Responsibilities {
  int64_t n = 0;
  int64_t k = 0;
  Mat gamma;  // N x K
};

// Log-density matrix: out[i][k] = log N(x_i | mu_k, diag(sigma_k)), with the
// full normalization constant.
Mat gmm_log_density(const Mat& x, const GmmState& state);

Responsibilities gmm_e_step(const Mat& x, const GmmState& state);

struct MStepResult {
  GmmState state;
  std::vector<bool> degenerate;  // components left unchanged for lack of weight
};

// Weighted ML update (biased 1/N-style variances, floored). Components whose
// total responsibility falls below kDegenerateWeight keep their previous
// parameters and are flagged.
MStepResult gmm_m_step(const Mat& x, const Responsibilities& resp, const GmmState& prev);

double gmm_log_likelihood(const Mat& x, const GmmState& state);

struct GmmFitResult {
  GmmState state;
  Responsibilities resp;
  std::vector<double> loglik;    // length T+1: initial value, then one per iteration
  std::vector<bool> degenerate;  // OR over iterations
};

GmmFitResult gmm_fit(const Mat& x, const GmmState& init, int64_t iterations);

struct SoftKmeansResult {
  Mat centers;      // K x D
  Mat assignments;  // N x K rows summing to 1
  std::vector<bool> empty;
};

// One soft update: assignments = softmax_k(-beta * ||x_i - c_k||^2), centers
// re-estimated with per-cluster weights renormalized over points. Clusters
// with total weight below kDegenerateWeight keep their center, flagged.
SoftKmeansResult soft_kmeans_step(const Mat& x, const Mat& centers, double beta);

// Draw from component k via per-dimension Box-Muller.
std::vector<double> gmm_sample(const GmmState& state, int64_t component, Rng& rng);

// Farthest-point selection of k rows (first chosen by rng), used to seed the
// concept library fit.
Mat farthest_point_init(const Mat& x, int64_t k, Rng& rng);

}  // namespace slotmix
