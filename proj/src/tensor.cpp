#include "slotmix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace slotmix {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

namespace {

[[noreturn]] void contract_fail(const std::string& op, const std::string& msg) {
  throw ContractError(op + ": " + msg);
}

thread_local bool g_grad_enabled = true;

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::vector<double>& GradMap::buf(const detail::Node* n) {
  auto it = grads_.find(n);
  if (it == grads_.end()) {
    it = grads_.emplace(n, std::vector<double>(n->values.size(), 0.0)).first;
  }
  return it->second;
}

const std::vector<double>* GradMap::find(const detail::Node* n) const {
  auto it = grads_.find(n);
  return it == grads_.end() ? nullptr : &it->second;
}

// ---- construction ----

Tensor custom_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               std::function<void(const std::vector<double>&, GradMap&)> bw) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  if (g_grad_enabled) {
    bool track = false;
    for (const auto& t : inputs) track = track || t.node_->requires_grad;
    if (track) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (auto& t : inputs) n->parents.push_back(t.node_);
      n->backward = std::move(bw);
    }
  }
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    contract_fail("Tensor::from", "shape " + shape_str(shape) + " does not match " +
                                      std::to_string(values.size()) + " values");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  return from(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  return from(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), v));
}

Tensor Tensor::scalar(double v) { return from(Shape{}, {v}); }

Tensor Tensor::eye(int64_t n) {
  std::vector<double> v(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;
  return from({n, n}, std::move(v));
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::value() const {
  if (numel() != 1) contract_fail("Tensor::value", "tensor has " + std::to_string(numel()) + " elements");
  return node_->values[0];
}

double Tensor::at(int64_t r, int64_t c) const {
  return node_->values[static_cast<size_t>(r * shape()[1] + c)];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->values = node_->values;
  return Tensor(std::move(n));
}

std::vector<double>& Tensor::mutable_values() {
  if (!node_->parents.empty())
    contract_fail("Tensor::mutable_values", "tensor has a recorded history; only leaves are mutable");
  return node_->values;
}

// ---- broadcasting ----

namespace {

struct BcPlan {
  Shape out;
  std::vector<int64_t> dims;          // aligned output dims
  std::vector<int64_t> stride_a, stride_b;  // 0 on broadcast axes
};

BcPlan broadcast_plan(const std::string& op, const Shape& a, const Shape& b) {
  const size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  BcPlan p;
  p.dims.resize(r);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  // Row-major strides of each operand, aligned from the trailing axis.
  std::vector<int64_t> full_sa(ra), full_sb(rb);
  int64_t acc = 1;
  for (size_t i = ra; i-- > 0;) {
    full_sa[i] = acc;
    acc *= a[i];
  }
  acc = 1;
  for (size_t i = rb; i-- > 0;) {
    full_sb[i] = acc;
    acc *= b[i];
  }
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    const int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1)
      contract_fail(op, "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    p.dims[i] = std::max(da, db);
    if (da != 1) p.stride_a[i] = full_sa[i - (r - ra)];
    if (db != 1) p.stride_b[i] = full_sb[i - (r - rb)];
  }
  p.out.assign(p.dims.begin(), p.dims.end());
  if (a.empty() && b.empty()) p.out.clear();
  return p;
}

// Applies f over the broadcast iteration space.
template <class F>
void bc_for_each(const BcPlan& p, F&& f) {
  const size_t r = p.dims.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(r, 0);
  int64_t oa = 0, ob = 0;
  const int64_t total = shape_numel(p.out);
  for (int64_t lin = 0; lin < total; ++lin) {
    f(lin, oa, ob);
    for (size_t i = r; i-- > 0;) {
      ++idx[i];
      oa += p.stride_a[i];
      ob += p.stride_b[i];
      if (idx[i] < p.dims[i]) break;
      oa -= p.stride_a[i] * p.dims[i];
      ob -= p.stride_b[i] * p.dims[i];
      idx[i] = 0;
    }
  }
}

// Sums `g` (laid out as gshape) down to `target` shape for broadcast backward.
std::vector<double> reduce_to(const std::vector<double>& g, const Shape& gshape,
                              const Shape& target) {
  if (gshape == target) return g;
  std::vector<double> out(static_cast<size_t>(shape_numel(target)), 0.0);
  BcPlan p = broadcast_plan("reduce_to", gshape, target);
  bc_for_each(p, [&](int64_t lin, int64_t, int64_t ob) {
    (void)lin;
    out[static_cast<size_t>(ob)] += g[static_cast<size_t>(lin)];
  });
  return out;
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const std::string& name, BinOp op, const Tensor& a, const Tensor& b) {
  const auto& av = a.values();
  const auto& bv = b.values();
  // Fast path: identical shapes.
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    switch (op) {
      case BinOp::Add: for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i]; break;
      case BinOp::Sub: for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i]; break;
      case BinOp::Mul: for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i]; break;
      case BinOp::Div: for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i]; break;
    }
    auto pa = a.node();
    auto pb = b.node();
    return custom_op(a.shape(), std::move(out), {a, b},
                   [op, a, b, pa, pb](const std::vector<double>& g, GradMap& gm) {
                     const auto& av2 = a.values();
                     const auto& bv2 = b.values();
                     if (a.requires_grad()) {
                       auto& ga = gm.buf(pa);
                       switch (op) {
                         case BinOp::Add:
                         case BinOp::Sub:
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           break;
                         case BinOp::Mul:
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                           break;
                         case BinOp::Div:
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv2[i];
                           break;
                       }
                     }
                     if (b.requires_grad()) {
                       auto& gb = gm.buf(pb);
                       switch (op) {
                         case BinOp::Add:
                           for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                           break;
                         case BinOp::Sub:
                           for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                           break;
                         case BinOp::Mul:
                           for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
                           break;
                         case BinOp::Div:
                           for (size_t i = 0; i < g.size(); ++i)
                             gb[i] -= g[i] * av2[i] / (bv2[i] * bv2[i]);
                           break;
                       }
                     }
                   });
  }
  // Broadcast path.
  BcPlan p = broadcast_plan(name, a.shape(), b.shape());
  std::vector<double> out(static_cast<size_t>(shape_numel(p.out)));
  bc_for_each(p, [&](int64_t lin, int64_t oa, int64_t ob) {
    const double x = av[static_cast<size_t>(oa)];
    const double y = bv[static_cast<size_t>(ob)];
    switch (op) {
      case BinOp::Add: out[static_cast<size_t>(lin)] = x + y; break;
      case BinOp::Sub: out[static_cast<size_t>(lin)] = x - y; break;
      case BinOp::Mul: out[static_cast<size_t>(lin)] = x * y; break;
      case BinOp::Div: out[static_cast<size_t>(lin)] = x / y; break;
    }
  });
  auto pa = a.node();
  auto pb = b.node();
  Shape out_shape = p.out;
  return custom_op(std::move(out_shape), std::move(out), {a, b},
                 [op, a, b, pa, pb, p](const std::vector<double>& g, GradMap& gm) {
                   const auto& av2 = a.values();
                   const auto& bv2 = b.values();
                   if (a.requires_grad()) {
                     std::vector<double> gfull(g.size());
                     bc_for_each(p, [&](int64_t lin, int64_t oa, int64_t ob) {
                       double v = g[static_cast<size_t>(lin)];
                       switch (op) {
                         case BinOp::Add:
                         case BinOp::Sub: break;
                         case BinOp::Mul: v *= bv2[static_cast<size_t>(ob)]; break;
                         case BinOp::Div: v /= bv2[static_cast<size_t>(ob)]; break;
                       }
                       (void)oa;
                       gfull[static_cast<size_t>(lin)] = v;
                     });
                     auto red = reduce_to(gfull, p.out, a.shape());
                     auto& ga = gm.buf(pa);
                     for (size_t i = 0; i < red.size(); ++i) ga[i] += red[i];
                   }
                   if (b.requires_grad()) {
                     std::vector<double> gfull(g.size());
                     bc_for_each(p, [&](int64_t lin, int64_t oa, int64_t ob) {
                       double v = g[static_cast<size_t>(lin)];
                       switch (op) {
                         case BinOp::Add: break;
                         case BinOp::Sub: v = -v; break;
                         case BinOp::Mul: v *= av2[static_cast<size_t>(oa)]; break;
                         case BinOp::Div: {
                           const double bb = bv2[static_cast<size_t>(ob)];
                           v = -v * av2[static_cast<size_t>(oa)] / (bb * bb);
                           break;
                         }
                       }
                       gfull[static_cast<size_t>(lin)] = v;
                     });
                     auto red = reduce_to(gfull, p.out, b.shape());
                     auto& gb = gm.buf(pb);
                     for (size_t i = 0; i < red.size(); ++i) gb[i] += red[i];
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinOp::Mul, a, b); }
Tensor divide(const Tensor& a, const Tensor& b) { return binary("div", BinOp::Div, a, b); }

// ---- unary ops ----

namespace {

// dydx(x, y) computes the local derivative from saved input/output values.
Tensor unary(const Tensor& a, std::vector<double> out,
             std::function<double(double x, double y)> dydx) {
  auto pa = a.node();
  std::vector<double> yv = out;  // saved for backward
  return custom_op(a.shape(), std::move(out), {a},
                 [a, pa, yv = std::move(yv), dydx = std::move(dydx)](
                     const std::vector<double>& g, GradMap& gm) {
                   if (!a.requires_grad()) return;
                   auto& ga = gm.buf(pa);
                   const auto& xv = a.values();
                   for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(xv[i], yv[i]);
                 });
}

}  // namespace

Tensor neg(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = -a.values()[i];
  return unary(a, std::move(out), [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * a.values()[i];
  return unary(a, std::move(out), [c](double, double) { return c; });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
  return unary(a, std::move(out), [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.values()[i]);
  return unary(a, std::move(out), [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.values()[i]);
  return unary(a, std::move(out), [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * a.values()[i];
  return unary(a, std::move(out), [](double x, double) { return 2.0 * x; });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  return unary(a, std::move(out), [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
  return unary(a, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
  return unary(a, std::move(out), [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = x > 30.0 ? x : std::log1p(std::exp(x));
  }
  return unary(a, std::move(out),
               [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor clamp_min(const Tensor& a, double lo) {
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.values()[i], lo);
  return unary(a, std::move(out),
               [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Tensor huber_elem(const Tensor& r, double delta) {
  if (delta <= 0.0) contract_fail("huber_elem", "delta must be positive");
  std::vector<double> out(r.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = r.values()[i];
    const double ax = std::abs(x);
    out[i] = ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
  }
  return unary(r, std::move(out), [delta](double x, double) {
    if (std::abs(x) <= delta) return x;
    return x > 0.0 ? delta : -delta;
  });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    contract_fail("matmul",
                  "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* brow = bv + p * n;
      double* orow = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  auto pa = a.node();
  auto pb = b.node();
  return custom_op({m, n}, std::move(out), {a, b},
                 [a, b, pa, pb, m, k, n](const std::vector<double>& g, GradMap& gm) {
                   const double* av2 = a.values().data();
                   const double* bv2 = b.values().data();
                   if (a.requires_grad()) {
                     auto& ga = gm.buf(pa);  // dA = g @ B^T
                     for (int64_t i = 0; i < m; ++i)
                       for (int64_t j = 0; j < n; ++j) {
                         const double gv = g[static_cast<size_t>(i * n + j)];
                         if (gv == 0.0) continue;
                         for (int64_t p = 0; p < k; ++p)
                           ga[static_cast<size_t>(i * k + p)] += gv * bv2[p * n + j];
                       }
                   }
                   if (b.requires_grad()) {
                     auto& gb = gm.buf(pb);  // dB = A^T @ g
                     for (int64_t i = 0; i < m; ++i)
                       for (int64_t p = 0; p < k; ++p) {
                         const double x = av2[i * k + p];
                         if (x == 0.0) continue;
                         const double* grow = g.data() + i * n;
                         double* brow = gb.data() + p * n;
                         for (int64_t j = 0; j < n; ++j) brow[j] += x * grow[j];
                       }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) contract_fail("transpose", "expects rank 2, got " + shape_str(a.shape()));
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out[static_cast<size_t>(j * m + i)] = a.values()[static_cast<size_t>(i * n + j)];
  auto pa = a.node();
  return custom_op({n, m}, std::move(out), {a},
                 [a, pa, m, n](const std::vector<double>& g, GradMap& gm) {
                   if (!a.requires_grad()) return;
                   auto& ga = gm.buf(pa);
                   for (int64_t i = 0; i < m; ++i)
                     for (int64_t j = 0; j < n; ++j)
                       ga[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j * m + i)];
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    contract_fail("reshape", "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  auto pa = a.node();
  std::vector<double> out = a.values();
  return custom_op(std::move(shape), std::move(out), {a},
                 [a, pa](const std::vector<double>& g, GradMap& gm) {
                   if (!a.requires_grad()) return;
                   auto& ga = gm.buf(pa);
                   for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                 });
}

// ---- reductions, softmax ----

namespace {

struct AxisPlan {
  int64_t outer, n, inner;
};

AxisPlan axis_plan(const std::string& op, const Shape& s, int64_t axis) {
  if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
    contract_fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisPlan p{1, s[static_cast<size_t>(axis)], 1};
  for (int64_t i = 0; i < axis; ++i) p.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) p.inner *= s[i];
  return p;
}

Shape reduced_shape(const Shape& s, int64_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[static_cast<size_t>(axis)] = 1;
  } else {
    out.erase(out.begin() + axis);
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  auto pa = a.node();
  return custom_op(Shape{}, {acc}, {a}, [a, pa](const std::vector<double>& g, GradMap& gm) {
    if (!a.requires_grad()) return;
    auto& ga = gm.buf(pa);
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum(const Tensor& a, int64_t axis, bool keepdim) {
  AxisPlan p = axis_plan("sum", a.shape(), axis);
  std::vector<double> out(static_cast<size_t>(p.outer * p.inner), 0.0);
  const auto& av = a.values();
  for (int64_t o = 0; o < p.outer; ++o)
    for (int64_t kk = 0; kk < p.n; ++kk)
      for (int64_t i = 0; i < p.inner; ++i)
        out[static_cast<size_t>(o * p.inner + i)] +=
            av[static_cast<size_t>((o * p.n + kk) * p.inner + i)];
  auto pa = a.node();
  return custom_op(reduced_shape(a.shape(), axis, keepdim), std::move(out), {a},
                 [a, pa, p](const std::vector<double>& g, GradMap& gm) {
                   if (!a.requires_grad()) return;
                   auto& ga = gm.buf(pa);
                   for (int64_t o = 0; o < p.outer; ++o)
                     for (int64_t kk = 0; kk < p.n; ++kk)
                       for (int64_t i = 0; i < p.inner; ++i)
                         ga[static_cast<size_t>((o * p.n + kk) * p.inner + i)] +=
                             g[static_cast<size_t>(o * p.inner + i)];
                 });
}

Tensor mean(const Tensor& a, int64_t axis, bool keepdim) {
  AxisPlan p = axis_plan("mean", a.shape(), axis);
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(p.n));
}

Tensor softmax(const Tensor& a, int64_t axis) {
  AxisPlan p = axis_plan("softmax", a.shape(), axis);
  std::vector<double> out(a.values().size());
  const auto& av = a.values();
  for (int64_t o = 0; o < p.outer; ++o) {
    for (int64_t i = 0; i < p.inner; ++i) {
      double mx = -HUGE_VAL;
      for (int64_t kk = 0; kk < p.n; ++kk)
        mx = std::max(mx, av[static_cast<size_t>((o * p.n + kk) * p.inner + i)]);
      double denom = 0.0;
      for (int64_t kk = 0; kk < p.n; ++kk) {
        const size_t idx = static_cast<size_t>((o * p.n + kk) * p.inner + i);
        out[idx] = std::exp(av[idx] - mx);
        denom += out[idx];
      }
      for (int64_t kk = 0; kk < p.n; ++kk)
        out[static_cast<size_t>((o * p.n + kk) * p.inner + i)] /= denom;
    }
  }
  auto pa = a.node();
  std::vector<double> yv = out;
  return custom_op(a.shape(), std::move(out), {a},
                 [a, pa, p, yv = std::move(yv)](const std::vector<double>& g, GradMap& gm) {
                   if (!a.requires_grad()) return;
                   auto& ga = gm.buf(pa);
                   for (int64_t o = 0; o < p.outer; ++o)
                     for (int64_t i = 0; i < p.inner; ++i) {
                       double dot = 0.0;
                       for (int64_t kk = 0; kk < p.n; ++kk) {
                         const size_t idx = static_cast<size_t>((o * p.n + kk) * p.inner + i);
                         dot += g[idx] * yv[idx];
                       }
                       for (int64_t kk = 0; kk < p.n; ++kk) {
                         const size_t idx = static_cast<size_t>((o * p.n + kk) * p.inner + i);
                         ga[idx] += yv[idx] * (g[idx] - dot);
                       }
                     }
                 });
}

// ---- concat / slice ----

Tensor concat(std::span<const Tensor> parts, int64_t axis) {
  if (parts.empty()) contract_fail("concat", "no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int64_t>(s0.size()))
    contract_fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  int64_t axis_total = 0;
  for (const auto& t : parts) {
    if (t.rank() != parts[0].rank())
      contract_fail("concat", "rank mismatch " + shape_str(t.shape()) + " vs " + shape_str(s0));
    for (int64_t d = 0; d < t.rank(); ++d)
      if (d != axis && t.dim(d) != s0[static_cast<size_t>(d)])
        contract_fail("concat", "shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(s0));
    axis_total += t.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[static_cast<size_t>(axis)] = axis_total;
  AxisPlan p = axis_plan("concat", out_shape, axis);
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  std::vector<int64_t> offsets;  // start of each part along axis
  int64_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const int64_t tn = t.dim(axis);
    const auto& tv = t.values();
    for (int64_t o = 0; o < p.outer; ++o)
      for (int64_t kk = 0; kk < tn; ++kk)
        for (int64_t i = 0; i < p.inner; ++i)
          out[static_cast<size_t>((o * p.n + off + kk) * p.inner + i)] =
              tv[static_cast<size_t>((o * tn + kk) * p.inner + i)];
    off += tn;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<const detail::Node*> pnodes;
  for (const auto& t : inputs) pnodes.push_back(t.node());
  return custom_op(std::move(out_shape), std::move(out), inputs,
                 [inputs, pnodes, offsets, p, axis](const std::vector<double>& g, GradMap& gm) {
                   for (size_t q = 0; q < inputs.size(); ++q) {
                     if (!inputs[q].requires_grad()) continue;
                     auto& gq = gm.buf(pnodes[q]);
                     const int64_t tn = inputs[q].dim(axis);
                     const int64_t off2 = offsets[q];
                     for (int64_t o = 0; o < p.outer; ++o)
                       for (int64_t kk = 0; kk < tn; ++kk)
                         for (int64_t i = 0; i < p.inner; ++i)
                           gq[static_cast<size_t>((o * tn + kk) * p.inner + i)] +=
                               g[static_cast<size_t>((o * p.n + off2 + kk) * p.inner + i)];
                   }
                 });
}

Tensor concat(std::initializer_list<Tensor> parts, int64_t axis) {
  std::vector<Tensor> v(parts);
  return concat(std::span<const Tensor>(v), axis);
}

Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t stop) {
  AxisPlan p = axis_plan("slice", a.shape(), axis);
  if (start < 0 || stop > p.n || start >= stop)
    contract_fail("slice", "range [" + std::to_string(start) + "," + std::to_string(stop) +
                               ") invalid for axis of size " + std::to_string(p.n));
  const int64_t tn = stop - start;
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = tn;
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  const auto& av = a.values();
  for (int64_t o = 0; o < p.outer; ++o)
    for (int64_t kk = 0; kk < tn; ++kk)
      for (int64_t i = 0; i < p.inner; ++i)
        out[static_cast<size_t>((o * tn + kk) * p.inner + i)] =
            av[static_cast<size_t>((o * p.n + start + kk) * p.inner + i)];
  auto pa = a.node();
  return custom_op(std::move(out_shape), std::move(out), {a},
                 [a, pa, p, start, tn](const std::vector<double>& g, GradMap& gm) {
                   if (!a.requires_grad()) return;
                   auto& ga = gm.buf(pa);
                   for (int64_t o = 0; o < p.outer; ++o)
                     for (int64_t kk = 0; kk < tn; ++kk)
                       for (int64_t i = 0; i < p.inner; ++i)
                         ga[static_cast<size_t>((o * p.n + start + kk) * p.inner + i)] +=
                             g[static_cast<size_t>((o * tn + kk) * p.inner + i)];
                 });
}

// ---- backward ----

GradMap backward(const Tensor& root) {
  if (root.numel() != 1)
    throw ContractError("backward: root must be scalar, got " + shape_str(root.shape()));
  GradMap gm;
  if (!root.requires_grad()) return gm;

  // Post-order DFS over grad-requiring parents.
  std::vector<const detail::Node*> order;
  std::unordered_map<const detail::Node*, bool> state;  // false=open, true=done
  std::vector<const detail::Node*> stack{root.node()};
  while (!stack.empty()) {
    const detail::Node* n = stack.back();
    auto it = state.find(n);
    if (it == state.end()) {
      state[n] = false;
      for (const auto& par : n->parents)
        if (par->requires_grad && !state.count(par.get())) stack.push_back(par.get());
    } else if (!it->second) {
      bool ready = true;
      for (const auto& par : n->parents)
        if (par->requires_grad && !state.count(par.get())) {
          stack.push_back(par.get());
          ready = false;
        }
      if (ready) {
        it->second = true;
        order.push_back(n);
        stack.pop_back();
      }
    } else {
      stack.pop_back();
    }
  }

  gm.buf(root.node())[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const detail::Node* n = *it;
    if (!n->backward) continue;
    const std::vector<double>* g = gm.find(n);
    if (!g) continue;
    n->backward(*g, gm);
  }
  return gm;
}

}  // namespace slotmix
