#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slotmix/rng.hpp"
#include "slotmix/tensor.hpp"

namespace slotmix {

// Named trainable tensors plus Adam moment buffers.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Shape shape, std::vector<double> init);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return params_.size(); }
  int64_t total_scalars() const;
  int64_t step_count() const { return step_; }

  // Bias-corrected Adam. Requires one gradient per parameter.
  void adam_step(const std::map<std::string, std::vector<double>>& grads, double lr,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Flat binary checkpoint: magic "SLOTMIX1", u32 version, then per-parameter
  // records (u32 name length, name, u32 rank, u64 dims, little-endian f64s).
  void save(const std::string& path) const;
  std::vector<uint8_t> serialize() const;
  // Strict load: the file must cover exactly this store's names and shapes.
  // Resets optimizer state.
  void load(const std::string& path);
  void deserialize(const std::vector<uint8_t>& bytes);

 private:
  struct Entry {
    Tensor t;
    std::vector<double> m, v;
  };
  std::map<std::string, Entry> params_;
  int64_t step_ = 0;
};

using GradByName = std::map<std::string, std::vector<double>>;

// Collects gradients for every store parameter from a backward pass,
// zero-filling parameters the graph did not reach.
GradByName collect_grads(const ParameterStore& store, const GradMap& gm);
void accumulate_grads(GradByName& into, const GradByName& from);
void scale_grads(GradByName& g, double c);

// Normalization over the last axis: zero mean, unit variance (eps inside the
// square root), then affine gain/bias of that axis' width.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

class Linear {
 public:
  Linear() = default;
  // Uniform +-1/sqrt(fan_in) init for weights and bias.
  Linear(ParameterStore& store, const std::string& prefix, int64_t in, int64_t out,
         Rng& rng, bool bias = true);
  Tensor operator()(const Tensor& x) const;  // x @ W (+ b)

 private:
  ParameterStore* store_ = nullptr;
  std::string w_, b_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& prefix, int64_t dim);
  Tensor operator()(const Tensor& x) const;

 private:
  ParameterStore* store_ = nullptr;
  std::string gain_, bias_;
};

// Two linear layers with a ReLU between.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& prefix, int64_t in, int64_t hidden,
      int64_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;

 private:
  Linear l1_, l2_;
};

// GRU cell applied independently per row. Gate convention: update gate
// multiplies the previous hidden state, so zero weights give 0.5 * hidden.
class GruCell {
 public:
  GruCell() = default;
  // Uniform +-1/sqrt(hidden) init for all weights and biases.
  GruCell(ParameterStore& store, const std::string& prefix, int64_t input,
          int64_t hidden, Rng& rng);
  Tensor operator()(const Tensor& input, const Tensor& hidden) const;

 private:
  ParameterStore* store_ = nullptr;
  std::string p_;  // parameter name prefix
  int64_t in_ = 0, hid_ = 0;
};

struct LrSchedule {
  double max_lr = 4e-4;
  double warmup_frac = 0.1;
  int64_t total_steps = 1;
  double div_factor = 25.0;    // initial lr = max / div_factor
  double final_div = 1e4;      // final lr = max / final_div
};

// Cosine ramp to max_lr at the end of warmup, cosine decay after.
double onecycle_lr(int64_t t, const LrSchedule& sched);

// Normalizes each column to sum 1 over rows; a column whose sum falls below
// `floor` gets uniform 1/rows weights instead and is flagged. Gradients flow
// through the normally scaled columns only.
std::pair<Tensor, std::vector<bool>> normalize_columns(const Tensor& a,
                                                       double floor = 1e-12);

// ---- finite-difference gradient checking ----

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  std::string worst;  // "param[i]" of the worst coordinate
  // name -> max rel err over that parameter's coordinates
  std::map<std::string, double> per_param;
};

double grad_rel_err(double analytic, double numeric);

// Central finite differences over every coordinate of the named parameters
// (all parameters when names is empty). loss_fn must rebuild the graph from
// the store's current values.
GradCheckReport finite_diff_check(ParameterStore& store,
                                  const std::function<Tensor()>& loss_fn,
                                  const std::vector<std::string>& names = {},
                                  double h = 1e-5, double tol = 1e-4);

}  // namespace slotmix
