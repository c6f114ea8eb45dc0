#include "slotmix/clustering.hpp"

#include <cmath>
#include <limits>

#include "slotmix/tensor.hpp"  // ContractError

namespace slotmix {

GmmState GmmState::uniform_init(const Mat& mu0, double var0) {
  GmmState s;
  s.k = mu0.rows;
  s.dim = mu0.cols;
  s.mu = mu0;
  s.sigma = Mat(s.k, s.dim, std::max(var0, kVarianceFloor));
  s.pi.assign(static_cast<size_t>(s.k), 1.0 / static_cast<double>(s.k));
  return s;
}

Mat gmm_log_density(const Mat& x, const GmmState& state) {
  if (x.cols != state.dim)
    throw ContractError("gmm_log_density: x has dim " + std::to_string(x.cols) +
                        ", state has dim " + std::to_string(state.dim));
  const int64_t n = x.rows, k = state.k, d = state.dim;
  Mat out(n, k);
  constexpr double log2pi = 1.8378770664093454836;  // log(2*pi)
  for (int64_t j = 0; j < k; ++j) {
    double logdet = 0.0;
    for (int64_t t = 0; t < d; ++t) {
      const double s = state.sigma(j, t);
      if (!(s >= kVarianceFloor))
        throw ContractError("gmm_log_density: variance below floor at component " +
                            std::to_string(j));
      logdet += std::log(s);
    }
    for (int64_t i = 0; i < n; ++i) {
      double quad = 0.0;
      for (int64_t t = 0; t < d; ++t) {
        const double r = x(i, t) - state.mu(j, t);
        quad += r * r / state.sigma(j, t);
      }
      const double v = -0.5 * (static_cast<double>(d) * log2pi + logdet + quad);
      if (!std::isfinite(v))
        throw ContractError("gmm_log_density: non-finite logit at point " + std::to_string(i) +
                            ", component " + std::to_string(j));
      out(i, j) = v;
    }
  }
  return out;
}

Responsibilities gmm_e_step(const Mat& x, const GmmState& state) {
  for (double v : x.d)
    if (!std::isfinite(v)) throw ContractError("gmm_e_step: non-finite input feature");
  const int64_t n = x.rows, k = state.k;
  Mat logits = gmm_log_density(x, state);
  Responsibilities r;
  r.n = n;
  r.k = k;
  r.gamma = Mat(n, k);
  for (int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < k; ++j) {
      logits(i, j) += std::log(state.pi[static_cast<size_t>(j)]);
      mx = std::max(mx, logits(i, j));
    }
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      r.gamma(i, j) = std::exp(logits(i, j) - mx);
      denom += r.gamma(i, j);
    }
    for (int64_t j = 0; j < k; ++j) r.gamma(i, j) /= denom;
  }
  return r;
}

MStepResult gmm_m_step(const Mat& x, const Responsibilities& resp, const GmmState& prev) {
  const int64_t n = x.rows, k = resp.k, d = x.cols;
  MStepResult out;
  out.state = prev;
  out.degenerate.assign(static_cast<size_t>(k), false);
  for (int64_t j = 0; j < k; ++j) {
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) total += resp.gamma(i, j);
    out.state.pi[static_cast<size_t>(j)] = total / static_cast<double>(n);
    if (total < kDegenerateWeight) {
      out.degenerate[static_cast<size_t>(j)] = true;
      continue;
    }
    for (int64_t t = 0; t < d; ++t) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) acc += resp.gamma(i, j) * x(i, t);
      out.state.mu(j, t) = acc / total;
    }
    for (int64_t t = 0; t < d; ++t) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double rdev = x(i, t) - out.state.mu(j, t);
        acc += resp.gamma(i, j) * rdev * rdev;
      }
      out.state.sigma(j, t) = std::max(acc / total, kVarianceFloor);
    }
  }
  return out;
}

double gmm_log_likelihood(const Mat& x, const GmmState& state) {
  Mat logits = gmm_log_density(x, state);
  double ll = 0.0;
  for (int64_t i = 0; i < x.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < state.k; ++j) {
      logits(i, j) += std::log(state.pi[static_cast<size_t>(j)]);
      mx = std::max(mx, logits(i, j));
    }
    double acc = 0.0;
    for (int64_t j = 0; j < state.k; ++j) acc += std::exp(logits(i, j) - mx);
    ll += mx + std::log(acc);
  }
  return ll;
}

GmmFitResult gmm_fit(const Mat& x, const GmmState& init, int64_t iterations) {
  if (iterations < 1) throw ContractError("gmm_fit: iterations must be >= 1");
  GmmFitResult out;
  out.state = init;
  out.degenerate.assign(static_cast<size_t>(init.k), false);
  out.loglik.push_back(gmm_log_likelihood(x, out.state));
  for (int64_t t = 0; t < iterations; ++t) {
    out.resp = gmm_e_step(x, out.state);
    MStepResult m = gmm_m_step(x, out.resp, out.state);
    out.state = std::move(m.state);
    for (int64_t j = 0; j < init.k; ++j)
      if (m.degenerate[static_cast<size_t>(j)]) out.degenerate[static_cast<size_t>(j)] = true;
    out.loglik.push_back(gmm_log_likelihood(x, out.state));
  }
  return out;
}

SoftKmeansResult soft_kmeans_step(const Mat& x, const Mat& centers, double beta) {
  if (beta <= 0.0) throw ContractError("soft_kmeans_step: beta must be positive");
  if (x.cols != centers.cols)
    throw ContractError("soft_kmeans_step: dim mismatch " + std::to_string(x.cols) + " vs " +
                        std::to_string(centers.cols));
  const int64_t n = x.rows, k = centers.rows, d = x.cols;
  SoftKmeansResult out;
  out.assignments = Mat(n, k);
  out.centers = centers;
  out.empty.assign(static_cast<size_t>(k), false);
  for (int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < k; ++j) {
      double dist2 = 0.0;
      for (int64_t t = 0; t < d; ++t) {
        const double r = x(i, t) - centers(j, t);
        dist2 += r * r;
      }
      out.assignments(i, j) = -beta * dist2;
      mx = std::max(mx, out.assignments(i, j));
    }
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      out.assignments(i, j) = std::exp(out.assignments(i, j) - mx);
      denom += out.assignments(i, j);
    }
    for (int64_t j = 0; j < k; ++j) out.assignments(i, j) /= denom;
  }
  // Column-renormalized weighted means, Slot Attention style.
  for (int64_t j = 0; j < k; ++j) {
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) total += out.assignments(i, j);
    if (total < kDegenerateWeight) {
      out.empty[static_cast<size_t>(j)] = true;
      continue;
    }
    for (int64_t t = 0; t < d; ++t) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) acc += out.assignments(i, j) * x(i, t);
      out.centers(j, t) = acc / total;
    }
  }
  return out;
}

std::vector<double> gmm_sample(const GmmState& state, int64_t component, Rng& rng) {
  if (component < 0 || component >= state.k)
    throw ContractError("gmm_sample: component " + std::to_string(component) + " out of range");
  std::vector<double> out(static_cast<size_t>(state.dim));
  for (int64_t t = 0; t < state.dim; ++t)
    out[static_cast<size_t>(t)] =
        rng.gaussian(state.mu(component, t), std::sqrt(state.sigma(component, t)));
  return out;
}

Mat farthest_point_init(const Mat& x, int64_t k, Rng& rng) {
  if (x.rows < k) throw ContractError("farthest_point_init: need at least k rows");
  std::vector<int64_t> chosen;
  chosen.push_back(rng.uniform_int(x.rows));
  std::vector<double> best(static_cast<size_t>(x.rows),
                           std::numeric_limits<double>::infinity());
  while (static_cast<int64_t>(chosen.size()) < k) {
    const int64_t last = chosen.back();
    int64_t arg = -1;
    double far = -1.0;
    for (int64_t i = 0; i < x.rows; ++i) {
      double dist2 = 0.0;
      for (int64_t t = 0; t < x.cols; ++t) {
        const double r = x(i, t) - x(last, t);
        dist2 += r * r;
      }
      best[static_cast<size_t>(i)] = std::min(best[static_cast<size_t>(i)], dist2);
      if (best[static_cast<size_t>(i)] > far) {
        far = best[static_cast<size_t>(i)];
        arg = i;
      }
    }
    chosen.push_back(arg);
  }
  Mat out(k, x.cols);
  for (int64_t j = 0; j < k; ++j)
    for (int64_t t = 0; t < x.cols; ++t) out(j, t) = x(chosen[static_cast<size_t>(j)], t);
  return out;
}

}  // namespace slotmix
