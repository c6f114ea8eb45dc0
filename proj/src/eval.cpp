#include "slotmix/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace slotmix {

std::vector<double> PropertyVector::flatten() const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(flat_dim()));
  out.push_back(x);
  out.push_back(y);
  out.push_back(size);
  out.insert(out.end(), shape.begin(), shape.end());
  out.insert(out.end(), color.begin(), color.end());
  out.push_back(presence);
  return out;
}

PropertyVector PropertyVector::from_flat(const std::vector<double>& v, int64_t shapes,
                                         int64_t colors) {
  if (static_cast<int64_t>(v.size()) != 3 + shapes + colors + 1)
    throw ContractError("PropertyVector::from_flat: bad length " + std::to_string(v.size()));
  PropertyVector p;
  p.x = v[0];
  p.y = v[1];
  p.size = v[2];
  p.shape.assign(v.begin() + 3, v.begin() + 3 + shapes);
  p.color.assign(v.begin() + 3 + shapes, v.begin() + 3 + shapes + colors);
  p.presence = v.back();
  return p;
}

PropertyVector PropertyVector::padding(int64_t shapes, int64_t colors) {
  PropertyVector p;
  p.shape.assign(static_cast<size_t>(shapes), 0.0);
  p.color.assign(static_cast<size_t>(colors), 0.0);
  return p;
}

namespace {
int64_t argmax(const std::vector<double>& v) {
  int64_t best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
  return best;
}
}  // namespace

int64_t PropertyVector::shape_id() const { return argmax(shape); }
int64_t PropertyVector::color_id() const { return argmax(color); }

// Potentials-based assignment solver; exact for exactly representable costs.
std::vector<int64_t> hungarian(const Mat& cost) {
  if (cost.rows != cost.cols)
    throw ContractError("hungarian: cost matrix must be square, got " +
                        std::to_string(cost.rows) + "x" + std::to_string(cost.cols));
  for (double v : cost.d)
    if (!std::isfinite(v)) throw ContractError("hungarian: non-finite cost entry");
  const int64_t n = cost.rows;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(n + 1), 0.0);
  std::vector<int64_t> p(static_cast<size_t>(n + 1), 0), way(static_cast<size_t>(n + 1), 0);
  for (int64_t i = 1; i <= n; ++i) {
    p[0] = i;
    int64_t j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n + 1), inf);
    std::vector<char> used(static_cast<size_t>(n + 1), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int64_t i0 = p[static_cast<size_t>(j0)];
      int64_t j1 = 0;
      double delta = inf;
      for (int64_t j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int64_t j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int64_t j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int64_t> ans(static_cast<size_t>(n), -1);
  for (int64_t j = 1; j <= n; ++j)
    if (p[static_cast<size_t>(j)] > 0) ans[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
  return ans;
}

double matching_cost(const Mat& cost, const std::vector<int64_t>& assign) {
  double total = 0.0;
  for (int64_t i = 0; i < cost.rows; ++i) total += cost(i, assign[static_cast<size_t>(i)]);
  return total;
}

double huber(const std::vector<double>& pred, const std::vector<double>& target, double delta) {
  if (pred.size() != target.size())
    throw ContractError("huber: length mismatch " + std::to_string(pred.size()) + " vs " +
                        std::to_string(target.size()));
  if (delta <= 0.0) throw ContractError("huber: delta must be positive");
  double total = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - target[i];
    const double ar = std::abs(r);
    total += ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
  }
  return total;
}

SetLossResult set_loss(const Tensor& preds, const Mat& targets, double delta) {
  if (preds.rank() != 2 || preds.dim(0) != targets.rows || preds.dim(1) != targets.cols)
    throw ContractError("set_loss: preds " + shape_str(preds.shape()) + " vs targets " +
                        std::to_string(targets.rows) + "x" + std::to_string(targets.cols));
  const int64_t k = targets.rows, p = targets.cols;
  Mat cost(k, k);
  for (int64_t i = 0; i < k; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      double c = 0.0;
      for (int64_t t = 0; t < p; ++t) {
        const double r = preds.at(i, t) - targets(j, t);
        const double ar = std::abs(r);
        c += ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
      }
      cost(i, j) = c;
    }
  }
  SetLossResult out;
  out.matching = hungarian(cost);
  Mat perm(k, p);
  for (int64_t i = 0; i < k; ++i)
    for (int64_t t = 0; t < p; ++t) perm(i, t) = targets(out.matching[static_cast<size_t>(i)], t);
  Tensor target_t = Tensor::from({k, p}, std::move(perm.d));
  out.loss = scale(sum(huber_elem(preds - target_t, delta)), 1.0 / static_cast<double>(k));
  return out;
}

double average_precision(const std::vector<ScenePredictions>& scenes, double threshold,
                         double size_tol) {
  if (!(threshold > 0.0)) throw ContractError("average_precision: threshold must be positive");
  struct Entry {
    double conf;
    int64_t scene, idx;
  };
  std::vector<Entry> pool;
  int64_t total_gt = 0;
  for (size_t s = 0; s < scenes.size(); ++s) {
    total_gt += static_cast<int64_t>(scenes[s].targets.size());
    for (size_t i = 0; i < scenes[s].preds.size(); ++i)
      pool.push_back({scenes[s].preds[i].presence, static_cast<int64_t>(s),
                      static_cast<int64_t>(i)});
  }
  if (total_gt == 0)
    throw ContractError("average_precision: no ground-truth objects (recall undefined)");
  std::sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.scene != b.scene) return a.scene < b.scene;
    return a.idx < b.idx;
  });
  std::vector<std::vector<char>> taken(scenes.size());
  for (size_t s = 0; s < scenes.size(); ++s) taken[s].assign(scenes[s].targets.size(), 0);

  std::vector<double> precision, recall;
  int64_t tp = 0, fp = 0;
  for (const Entry& e : pool) {
    const PropertyVector& pr = scenes[static_cast<size_t>(e.scene)].preds[static_cast<size_t>(e.idx)];
    const auto& targets = scenes[static_cast<size_t>(e.scene)].targets;
    int64_t best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < targets.size(); ++j) {
      if (taken[static_cast<size_t>(e.scene)][j]) continue;
      const PropertyVector& gt = targets[j];
      if (pr.shape_id() != gt.shape_id() || pr.color_id() != gt.color_id()) continue;
      if (std::abs(pr.size - gt.size) > size_tol) continue;
      const double dx = pr.x - gt.x, dy = pr.y - gt.y;
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (std::isfinite(threshold) && dist > threshold) continue;
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<int64_t>(j);
      }
    }
    if (best >= 0) {
      taken[static_cast<size_t>(e.scene)][static_cast<size_t>(best)] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  // Area under the interpolated precision envelope.
  double ap = 0.0;
  double pmax = 0.0;
  double prev_r = std::numeric_limits<double>::quiet_NaN();
  for (size_t i = precision.size(); i-- > 0;) {
    pmax = std::max(pmax, precision[i]);
    const double r_lo = i == 0 ? 0.0 : recall[i - 1];
    if (recall[i] > r_lo) ap += (recall[i] - r_lo) * pmax;
    (void)prev_r;
  }
  return ap;
}

double fg_ari(const std::vector<int>& true_labels, const std::vector<int>& pred_assign,
              bool exclude_background) {
  if (true_labels.size() != pred_assign.size())
    throw ContractError("fg_ari: label vectors differ in length");
  std::vector<int> t, q;
  for (size_t i = 0; i < true_labels.size(); ++i) {
    if (exclude_background && true_labels[i] == 0) continue;
    t.push_back(true_labels[i]);
    q.push_back(pred_assign[i]);
  }
  const int64_t n = static_cast<int64_t>(t.size());
  if (n < 2) throw ContractError("fg_ari: fewer than 2 foreground points");

  std::map<int, int64_t> tmap, qmap;
  for (int v : t) tmap.emplace(v, static_cast<int64_t>(tmap.size()));
  for (int v : q) qmap.emplace(v, static_cast<int64_t>(qmap.size()));
  const int64_t rt = static_cast<int64_t>(tmap.size());
  const int64_t rq = static_cast<int64_t>(qmap.size());
  Mat cont(rt, rq);
  for (size_t i = 0; i < t.size(); ++i) cont(tmap[t[i]], qmap[q[i]]) += 1.0;

  auto comb2 = [](double m) { return m * (m - 1.0) / 2.0; };
  double sum_ij = 0.0;
  for (double c : cont.d) sum_ij += comb2(c);
  double sum_a = 0.0;
  for (int64_t i = 0; i < rt; ++i) {
    double row = 0.0;
    for (int64_t j = 0; j < rq; ++j) row += cont(i, j);
    sum_a += comb2(row);
  }
  double sum_b = 0.0;
  for (int64_t j = 0; j < rq; ++j) {
    double col = 0.0;
    for (int64_t i = 0; i < rt; ++i) col += cont(i, j);
    sum_b += comb2(col);
  }
  const double expected = sum_a * sum_b / comb2(static_cast<double>(n));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial
  return (sum_ij - expected) / (max_index - expected);
}

}  // namespace slotmix
