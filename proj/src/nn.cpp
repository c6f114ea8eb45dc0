#include "slotmix/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace slotmix {

// ---- ParameterStore ----

Tensor& ParameterStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  if (params_.count(name)) throw ContractError("ParameterStore::add: duplicate name " + name);
  Entry e;
  e.t = Tensor::leaf(std::move(shape), std::move(init));
  e.m.assign(e.t.values().size(), 0.0);
  e.v.assign(e.t.values().size(), 0.0);
  auto [it, ok] = params_.emplace(name, std::move(e));
  (void)ok;
  return it->second.t;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("ParameterStore::at: unknown parameter " + name);
  return it->second.t;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("ParameterStore::at: unknown parameter " + name);
  return it->second.t;
}

bool ParameterStore::contains(const std::string& name) const { return params_.count(name) > 0; }

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

int64_t ParameterStore::total_scalars() const {
  int64_t n = 0;
  for (const auto& [k, e] : params_) n += e.t.numel();
  return n;
}

void ParameterStore::adam_step(const GradByName& grads, double lr, double beta1,
                               double beta2, double eps) {
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (auto& [name, e] : params_) {
    auto it = grads.find(name);
    if (it == grads.end())
      throw ContractError("adam_step: missing gradient for parameter " + name);
    const auto& g = it->second;
    auto& p = e.t.mutable_values();
    if (g.size() != p.size())
      throw ContractError("adam_step: gradient size mismatch for " + name);
    for (size_t i = 0; i < p.size(); ++i) {
      e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g[i];
      e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

constexpr char kMagic[8] = {'S', 'L', 'O', 'T', 'M', 'I', 'X', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<uint8_t>& out, double d) { put_u64(out, std::bit_cast<uint64_t>(d)); }

struct Cursor {
  const std::vector<uint8_t>* b;
  size_t pos = 0;
  [[noreturn]] void fail(const std::string& what) const {
    throw ContractError("checkpoint parse error at byte " + std::to_string(pos) + ": " + what);
  }
  void need(size_t n) const {
    if (pos + n > b->size()) fail("truncated (need " + std::to_string(n) + " bytes)");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>((*b)[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>((*b)[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b->data() + pos), n);
    pos += n;
    return s;
  }
  bool eof() const { return pos == b->size(); }
};

}  // namespace

std::vector<uint8_t> ParameterStore::serialize() const {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, kVersion);
  for (const auto& [name, e] : params_) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<uint32_t>(e.t.rank()));
    for (int64_t d : e.t.shape()) put_u64(out, static_cast<uint64_t>(d));
    for (double v : e.t.values()) put_f64(out, v);
  }
  return out;
}

void ParameterStore::save(const std::string& path) const {
  auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContractError("ParameterStore::save: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ContractError("ParameterStore::save: write failed for " + path);
}

void ParameterStore::deserialize(const std::vector<uint8_t>& bytes) {
  Cursor c{&bytes};
  std::string magic = c.str(8);
  if (std::memcmp(magic.data(), kMagic, 8) != 0) c.fail("bad magic");
  uint32_t ver = c.u32();
  if (ver != kVersion) c.fail("unsupported version " + std::to_string(ver));
  std::map<std::string, bool> seen;
  for (auto& [k, v] : params_) seen[k] = false;
  while (!c.eof()) {
    const uint32_t name_len = c.u32();
    std::string name = c.str(name_len);
    auto it = params_.find(name);
    if (it == params_.end()) c.fail("unknown parameter " + name);
    if (seen[name]) c.fail("duplicate parameter " + name);
    const uint32_t rank = c.u32();
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(c.u64());
    if (shape != it->second.t.shape())
      c.fail("shape mismatch for " + name + ": file " + shape_str(shape) + " vs store " +
             shape_str(it->second.t.shape()));
    auto& vals = it->second.t.mutable_values();
    for (auto& v : vals) v = c.f64();
    seen[name] = true;
  }
  for (const auto& [k, was] : seen)
    if (!was) throw ContractError("checkpoint missing parameter " + k);
  for (auto& [k, e] : params_) {
    std::fill(e.m.begin(), e.m.end(), 0.0);
    std::fill(e.v.begin(), e.v.end(), 0.0);
  }
  step_ = 0;
}

void ParameterStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContractError("ParameterStore::load: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  deserialize(bytes);
}

GradByName collect_grads(const ParameterStore& store, const GradMap& gm) {
  GradByName out;
  for (const auto& name : store.names()) {
    const Tensor& t = store.at(name);
    const std::vector<double>* g = gm.find(t.node());
    if (g) {
      out[name] = *g;
    } else {
      out[name] = std::vector<double>(t.values().size(), 0.0);
    }
  }
  return out;
}

void accumulate_grads(GradByName& into, const GradByName& from) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      into[name] = g;
    } else {
      for (size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
}

void scale_grads(GradByName& g, double c) {
  for (auto& [name, v] : g)
    for (auto& x : v) x *= c;
}

// ---- layers ----

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) == 0)
    throw ContractError("layer_norm: empty normalization axis for " + shape_str(x.shape()));
  const int64_t d = x.dim(x.rank() - 1);
  if (gain.numel() != d || bias.numel() != d)
    throw ContractError("layer_norm: gain/bias size must equal last axis " + std::to_string(d));
  const int64_t last = x.rank() - 1;
  Tensor mu = mean(x, last, true);
  Tensor xc = x - mu;
  Tensor var = mean(square(xc), last, true);
  Tensor y = xc / sqrt(var + Tensor::scalar(eps));
  return y * gain + bias;
}

Linear::Linear(ParameterStore& store, const std::string& prefix, int64_t in, int64_t out,
               Rng& rng, bool bias)
    : store_(&store), w_(prefix + ".w"), b_(bias ? prefix + ".b" : "") {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(w_, {in, out}, rng.uniform_vec(static_cast<size_t>(in * out), -bound, bound));
  if (bias) store.add(b_, {out}, rng.uniform_vec(static_cast<size_t>(out), -bound, bound));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, store_->at(w_));
  if (!b_.empty()) y = y + store_->at(b_);
  return y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& prefix, int64_t dim)
    : store_(&store), gain_(prefix + ".gain"), bias_(prefix + ".bias") {
  store.add(gain_, {dim}, std::vector<double>(static_cast<size_t>(dim), 1.0));
  store.add(bias_, {dim}, std::vector<double>(static_cast<size_t>(dim), 0.0));
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  return layer_norm(x, store_->at(gain_), store_->at(bias_));
}

Mlp::Mlp(ParameterStore& store, const std::string& prefix, int64_t in, int64_t hidden,
         int64_t out, Rng& rng)
    : l1_(store, prefix + ".l1", in, hidden, rng), l2_(store, prefix + ".l2", hidden, out, rng) {}

Tensor Mlp::operator()(const Tensor& x) const { return l2_(relu(l1_(x))); }

GruCell::GruCell(ParameterStore& store, const std::string& prefix, int64_t input,
                 int64_t hidden, Rng& rng)
    : store_(&store), p_(prefix), in_(input), hid_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto winit = [&](const std::string& n, int64_t r, int64_t c) {
    store.add(p_ + "." + n, {r, c}, rng.uniform_vec(static_cast<size_t>(r * c), -bound, bound));
  };
  auto binit = [&](const std::string& n) {
    store.add(p_ + "." + n, {hidden}, rng.uniform_vec(static_cast<size_t>(hidden), -bound, bound));
  };
  winit("w_ir", input, hidden);
  winit("w_iz", input, hidden);
  winit("w_in", input, hidden);
  winit("w_hr", hidden, hidden);
  winit("w_hz", hidden, hidden);
  winit("w_hn", hidden, hidden);
  binit("b_ir");
  binit("b_iz");
  binit("b_in");
  binit("b_hr");
  binit("b_hz");
  binit("b_hn");
}

Tensor GruCell::operator()(const Tensor& input, const Tensor& hidden) const {
  if (input.shape() != Shape{input.dim(0), in_} || hidden.shape() != Shape{input.dim(0), hid_})
    throw ContractError("gru_cell: input " + shape_str(input.shape()) + " / hidden " +
                        shape_str(hidden.shape()) + " mismatch for cell (" +
                        std::to_string(in_) + "," + std::to_string(hid_) + ")");
  auto& s = *store_;
  Tensor r = sigmoid(matmul(input, s.at(p_ + ".w_ir")) + s.at(p_ + ".b_ir") +
                     matmul(hidden, s.at(p_ + ".w_hr")) + s.at(p_ + ".b_hr"));
  Tensor z = sigmoid(matmul(input, s.at(p_ + ".w_iz")) + s.at(p_ + ".b_iz") +
                     matmul(hidden, s.at(p_ + ".w_hz")) + s.at(p_ + ".b_hz"));
  Tensor n = tanh(matmul(input, s.at(p_ + ".w_in")) + s.at(p_ + ".b_in") +
                  r * (matmul(hidden, s.at(p_ + ".w_hn")) + s.at(p_ + ".b_hn")));
  Tensor one = Tensor::scalar(1.0);
  return (one - z) * n + z * hidden;
}

double onecycle_lr(int64_t t, const LrSchedule& sched) {
  if (t < 0 || t >= sched.total_steps)
    throw ContractError("onecycle_lr: step " + std::to_string(t) + " outside [0," +
                        std::to_string(sched.total_steps) + ")");
  const double init = sched.max_lr / sched.div_factor;
  const double fin = sched.max_lr / sched.final_div;
  const int64_t warm = std::max<int64_t>(1, std::llround(sched.warmup_frac *
                                                         static_cast<double>(sched.total_steps)));
  if (t < warm) {
    const double f = static_cast<double>(t) / static_cast<double>(warm);
    return init + (sched.max_lr - init) * 0.5 * (1.0 - std::cos(M_PI * f));
  }
  const int64_t span = std::max<int64_t>(1, sched.total_steps - 1 - warm);
  const double f = static_cast<double>(t - warm) / static_cast<double>(span);
  return fin + (sched.max_lr - fin) * 0.5 * (1.0 + std::cos(M_PI * f));
}

std::pair<Tensor, std::vector<bool>> normalize_columns(const Tensor& a, double floor) {
  if (a.rank() != 2) throw ContractError("normalize_columns: expects rank 2, got " + shape_str(a.shape()));
  const int64_t rows = a.dim(0), cols = a.dim(1);
  Tensor colsum = sum(a, 0, true);  // 1 x cols
  std::vector<bool> flags(static_cast<size_t>(cols), false);
  bool any = false;
  for (int64_t j = 0; j < cols; ++j) {
    if (colsum.at(j) < floor) {
      flags[static_cast<size_t>(j)] = true;
      any = true;
    }
  }
  Tensor w = a / clamp_min(colsum, floor);
  if (any) {
    std::vector<double> keep(static_cast<size_t>(cols), 1.0);
    std::vector<double> fb(static_cast<size_t>(cols), 0.0);
    for (int64_t j = 0; j < cols; ++j) {
      if (flags[static_cast<size_t>(j)]) {
        keep[static_cast<size_t>(j)] = 0.0;
        fb[static_cast<size_t>(j)] = 1.0 / static_cast<double>(rows);
      }
    }
    w = w * Tensor::from({1, cols}, std::move(keep)) + Tensor::from({1, cols}, std::move(fb));
  }
  return {w, flags};
}

// ---- gradient checking ----

double grad_rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(ParameterStore& store,
                                  const std::function<Tensor()>& loss_fn,
                                  const std::vector<std::string>& names, double h,
                                  double tol) {
  std::vector<std::string> check = names.empty() ? store.names() : names;
  GradMap gm = backward(loss_fn());
  GradCheckReport rep;
  for (const auto& name : check) {
    Tensor& p = store.at(name);
    const std::vector<double>* ag = gm.find(p.node());
    std::vector<double> analytic =
        ag ? *ag : std::vector<double>(p.values().size(), 0.0);
    double worst_here = 0.0;
    auto& vals = p.mutable_values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = loss_fn().value();
      vals[i] = orig - h;
      const double fm = loss_fn().value();
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = grad_rel_err(analytic[i], numeric);
      if (err > worst_here) worst_here = err;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst = name + "[" + std::to_string(i) + "]";
      }
    }
    rep.per_param[name] = worst_here;
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace slotmix
