#pragma once

#include <cstdint>
#include <vector>

namespace slotmix {

// Plain row-major matrix for the non-differentiable paths (oracles, scene
// data, metric inputs).
struct Mat {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int64_t r, int64_t c, double fill = 0.0)
      : rows(r), cols(c), d(static_cast<size_t>(r * c), fill) {}
  Mat(int64_t r, int64_t c, std::vector<double> values)
      : rows(r), cols(c), d(std::move(values)) {}

  double& operator()(int64_t r, int64_t c) { return d[static_cast<size_t>(r * cols + c)]; }
  double operator()(int64_t r, int64_t c) const { return d[static_cast<size_t>(r * cols + c)]; }
  const double* row(int64_t r) const { return d.data() + r * cols; }
  double* row(int64_t r) { return d.data() + r * cols; }
};

}  // namespace slotmix
