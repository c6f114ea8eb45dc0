#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace slotmix {

using Shape = std::vector<int64_t>;

// Thrown when an operation's preconditions are violated (shape mismatch,
// non-finite inputs, out-of-range arguments). The message names the op.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

class GradMap;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates parent gradients given this node's gradient. Null for leaves
  // and untracked nodes.
  std::function<void(const std::vector<double>& gout, GradMap& gm)> backward;
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// Gradients produced by a backward pass, keyed by graph node. Local to the
// pass, so parameter nodes can be shared across concurrently built graphs.
class GradMap {
 public:
  std::vector<double>& buf(const detail::Node* n);
  const std::vector<double>* find(const detail::Node* n) const;

 private:
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

// Immutable dense f64 tensor handle, row-major, with optional reverse-mode
// gradient tracking. Copies are cheap (shared node).
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  static Tensor eye(int64_t n);
  // Grad-tracked leaf (a parameter).
  static Tensor leaf(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t dim(int64_t i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }
  const std::vector<double>& values() const { return node_->values; }
  double value() const;           // requires numel() == 1
  double at(int64_t i) const { return node_->values[static_cast<size_t>(i)]; }
  double at(int64_t r, int64_t c) const;  // rank-2 accessor

  bool requires_grad() const { return node_->requires_grad; }
  Tensor detach() const;

  // In-place value replacement for leaf tensors only (optimizer updates,
  // test-time weight surgery). Throws if this tensor has a recorded history.
  std::vector<double>& mutable_values();

  const detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;

  friend Tensor custom_op(Shape, std::vector<double>, std::vector<Tensor>,
                          std::function<void(const std::vector<double>&, GradMap&)>);
};

// Records an op with caller-supplied forward values and backward rule. The
// backward callback receives the output gradient and accumulates into
// GradMap::buf(input.node()) for each grad-requiring input.
Tensor custom_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                 std::function<void(const std::vector<double>&, GradMap&)> backward_fn);

// Disables graph recording while alive (cheap eval-only forwards).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// ---- op vocabulary ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);
// Elementwise Huber of a residual: 0.5*r^2 if |r| <= delta else delta*(|r| - delta/2).
Tensor huber_elem(const Tensor& r, double delta);
Tensor scale(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);                                   // all elements -> scalar
Tensor sum(const Tensor& a, int64_t axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int64_t axis, bool keepdim = false);
Tensor softmax(const Tensor& a, int64_t axis);

Tensor concat(std::span<const Tensor> parts, int64_t axis);
Tensor concat(std::initializer_list<Tensor> parts, int64_t axis);
Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t stop);

// Scalar-valued root only. Returns gradients for every tracked node reached.
GradMap backward(const Tensor& root);

}  // namespace slotmix
