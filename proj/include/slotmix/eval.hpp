#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "slotmix/matrix.hpp"
#include "slotmix/tensor.hpp"

namespace slotmix {

// Object property target/prediction. Flattened layout for losses:
// [x, y, size, shape one-hot (S), color one-hot (C), presence].
struct PropertyVector {
  double x = 0.0;
  double y = 0.0;
  double size = 0.0;
  std::vector<double> shape;  // S entries
  std::vector<double> color;  // C entries
  double presence = 0.0;

  int64_t flat_dim() const { return 3 + static_cast<int64_t>(shape.size() + color.size()) + 1; }
  std::vector<double> flatten() const;
  static PropertyVector from_flat(const std::vector<double>& v, int64_t shapes, int64_t colors);
  static PropertyVector padding(int64_t shapes, int64_t colors);

  int64_t shape_id() const;  // argmax
  int64_t color_id() const;
};

// Minimum-cost perfect matching on a square cost matrix, O(K^3).
// Returns assignment[row] = column.
std::vector<int64_t> hungarian(const Mat& cost);
double matching_cost(const Mat& cost, const std::vector<int64_t>& assign);

// Coordinate-wise Huber, summed: 0.5 r^2 inside |r| <= delta, linear outside.
double huber(const std::vector<double>& pred, const std::vector<double>& target, double delta);

struct SetLossResult {
  Tensor loss;                    // scalar, matched cost / K
  std::vector<int64_t> matching;  // pred row -> target row
};

// preds: K x P decoded predictions (graph); targets: K x P matrix already
// padded with presence-0 rows. Gradients flow through prediction values but
// not the discrete matching.
SetLossResult set_loss(const Tensor& preds, const Mat& targets, double delta = 1.0);

// One scene's decoded predictions / ground truth for AP pooling.
struct ScenePredictions {
  std::vector<PropertyVector> preds;    // K entries with presence confidences
  std::vector<PropertyVector> targets;  // true objects only (no padding)
};

// Detection-style average precision at a coordinate distance threshold.
// A prediction is a true positive when its scene still has an unmatched target
// with equal argmax shape/color, |size delta| <= size_tol and coordinate
// distance <= threshold (infinity skips the coordinate test). Predictions are
// consumed in descending presence order; AP is the area under the
// interpolated precision-recall curve.
double average_precision(const std::vector<ScenePredictions>& scenes, double threshold,
                         double size_tol = 0.25);

// Adjusted Rand Index restricted to foreground points (true label != 0) when
// exclude_background is set.
double fg_ari(const std::vector<int>& true_labels, const std::vector<int>& pred_assign,
              bool exclude_background = true);

}  // namespace slotmix
