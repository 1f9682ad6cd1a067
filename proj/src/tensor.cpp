#include "vqd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "vqd/error.hpp"

namespace vqd {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

namespace detail {

struct Node : std::enable_shared_from_this<Node> {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily, only when requires_grad
  bool requires_grad = false;
  std::vector<Tensor> parents;
  BackwardFn backward_fn;
};

}  // namespace detail

using detail::Node;

// ---- Tensor basics ----------------------------------------------------

static std::shared_ptr<Node> new_leaf(Shape shape, std::vector<double> values,
                                      bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " wants " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(new_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

Tensor Tensor::zeros(Shape shape) {
  size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  return Tensor(new_leaf(std::move(shape), std::move(values), true));
}

const Shape& Tensor::shape() const { return node_->shape; }
size_t Tensor::numel() const { return node_->values.size(); }

size_t Tensor::rows() const { return rank() >= 2 ? shape()[0] : 1; }
size_t Tensor::cols() const {
  const Shape& s = shape();
  return s.size() >= 2 ? s[1] : (s.empty() ? 1 : s[0]);
}

std::span<const double> Tensor::values() const& { return node_->values; }
std::span<double> Tensor::values_mut() & { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor " + shape_str(shape()) + " is not scalar");
  }
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const& {
  if (!has_grad()) return {};
  return node_->grad;
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (!requires_grad()) return;
  if (g.size() != numel()) {
    throw DimensionError("accumulate_grad: got " + std::to_string(g.size()) +
                         " values for tensor " + shape_str(shape()));
  }
  if (node_->grad.empty()) node_->grad.assign(numel(), 0.0);
  double* dst = node_->grad.data();
  for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return constant(shape(), std::vector<double>(node_->values.begin(), node_->values.end()));
}

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               BackwardFn backward) {
  bool any_grad = false;
  for (const Tensor& p : parents) any_grad = any_grad || p.requires_grad();
  if (!g_grad_enabled || !any_grad) {
    return Tensor::constant(std::move(shape), std::move(values));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward);
  return Tensor(n);
}

std::span<Tensor> op_parents(const Tensor& t) { return t.node_->parents; }

void Tensor::backward() const {
  if (!defined()) throw ContractError("backward: undefined tensor");
  if (numel() != 1) {
    throw ContractError("backward: loss " + shape_str(shape()) + " is not scalar");
  }
  // Post-order DFS; reversed, every node is handled before its parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next].node_.get();
      ++next;
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  const_cast<Tensor*>(this)->accumulate_grad(std::vector<double>{1.0});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn) continue;
    if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0);
    Tensor out(n->shared_from_this());
    n->backward_fn(out, n->parents);
  }
}

// ---- ops ---------------------------------------------------------------

static void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const size_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (size_t i = 0; i < m; ++i) {
      double* orow = out.data() + i * n;
      const double* arow = av + i * k;
      for (size_t p = 0; p < k; ++p) {
        const double aip = arow[p];
        const double* brow = bv + p * n;
        for (size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  return make_op({m, n}, std::move(out), {a, b},
                 [m, k, n](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   const double* av = ps[0].values().data();
                   const double* bv = ps[1].values().data();
                   if (ps[0].requires_grad()) {
                     // dA = dC . B^T
                     std::vector<double> da(m * k, 0.0);
                     for (size_t i = 0; i < m; ++i) {
                       const double* grow = g + i * n;
                       double* darow = da.data() + i * k;
                       for (size_t p = 0; p < k; ++p) {
                         const double* brow = bv + p * n;
                         double acc = 0.0;
                         for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                         darow[p] = acc;
                       }
                     }
                     ps[0].accumulate_grad(da);
                   }
                   if (ps[1].requires_grad()) {
                     // dB = A^T . dC
                     std::vector<double> db(k * n, 0.0);
                     for (size_t i = 0; i < m; ++i) {
                       const double* arow = av + i * k;
                       const double* grow = g + i * n;
                       for (size_t p = 0; p < k; ++p) {
                         const double aip = arow[p];
                         double* dbrow = db.data() + p * n;
                         for (size_t j = 0; j < n; ++j) dbrow[j] += aip * grow[j];
                       }
                     }
                     ps[1].accumulate_grad(db);
                   }
                 });
}

enum class BinOp { Add, Sub, Mul };

static Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": shapes differ: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  const size_t n = a.numel();
  std::vector<double> out(n);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  switch (op) {
    case BinOp::Add:
      for (size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
      break;
    case BinOp::Sub:
      for (size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
      break;
    case BinOp::Mul:
      for (size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
      break;
  }
  return make_op(a.shape(), std::move(out), {a, b},
                 [op, n](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   switch (op) {
                     case BinOp::Add:
                       ps[0].accumulate_grad(out.grad());
                       ps[1].accumulate_grad(out.grad());
                       break;
                     case BinOp::Sub: {
                       ps[0].accumulate_grad(out.grad());
                       if (ps[1].requires_grad()) {
                         std::vector<double> gb(n);
                         for (size_t i = 0; i < n; ++i) gb[i] = -g[i];
                         ps[1].accumulate_grad(gb);
                       }
                       break;
                     }
                     case BinOp::Mul: {
                       if (ps[0].requires_grad()) {
                         std::vector<double> ga(n);
                         const double* bv = ps[1].values().data();
                         for (size_t i = 0; i < n; ++i) ga[i] = g[i] * bv[i];
                         ps[0].accumulate_grad(ga);
                       }
                       if (ps[1].requires_grad()) {
                         std::vector<double> gb(n);
                         const double* av = ps[0].values().data();
                         for (size_t i = 0; i < n; ++i) gb[i] = g[i] * av[i];
                         ps[1].accumulate_grad(gb);
                       }
                       break;
                     }
                   }
                 });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul, "mul"); }

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_rowvec");
  const size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.numel() != n || bias.rank() > 2) {
    throw DimensionError("add_rowvec: bias " + shape_str(bias.shape()) +
                         " does not match row width of " + shape_str(x.shape()));
  }
  std::vector<double> out(m * n);
  const double* xv = x.values().data();
  const double* bv = bias.values().data();
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return make_op({m, n}, std::move(out), {x, bias},
                 [m, n](const Tensor& out, std::span<Tensor> ps) {
                   ps[0].accumulate_grad(out.grad());
                   if (ps[1].requires_grad()) {
                     const double* g = out.grad().data();
                     std::vector<double> gb(n, 0.0);
                     for (size_t i = 0; i < m; ++i)
                       for (size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                     ps[1].accumulate_grad(gb);
                   }
                 });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_rank2(x, "scale_rows");
  const size_t m = x.shape()[0], n = x.shape()[1];
  if (s.numel() != m || s.rank() > 2) {
    throw DimensionError("scale_rows: scale " + shape_str(s.shape()) +
                         " does not match row count of " + shape_str(x.shape()));
  }
  std::vector<double> out(m * n);
  const double* xv = x.values().data();
  const double* sv = s.values().data();
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * sv[i];
  return make_op({m, n}, std::move(out), {x, s},
                 [m, n](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   if (ps[0].requires_grad()) {
                     const double* sv = ps[1].values().data();
                     std::vector<double> gx(m * n);
                     for (size_t i = 0; i < m; ++i)
                       for (size_t j = 0; j < n; ++j) gx[i * n + j] = g[i * n + j] * sv[i];
                     ps[0].accumulate_grad(gx);
                   }
                   if (ps[1].requires_grad()) {
                     const double* xv = ps[0].values().data();
                     std::vector<double> gs(m, 0.0);
                     for (size_t i = 0; i < m; ++i) {
                       double acc = 0.0;
                       for (size_t j = 0; j < n; ++j) acc += g[i * n + j] * xv[i * n + j];
                       gs[i] = acc;
                     }
                     ps[1].accumulate_grad(gs);
                   }
                 });
}

enum class UnaryOp { Relu, Sigmoid, Tanh };

static double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

static Tensor unary_op(const Tensor& x, UnaryOp op) {
  const size_t n = x.numel();
  std::vector<double> out(n);
  const double* xv = x.values().data();
  switch (op) {
    case UnaryOp::Relu:
      for (size_t i = 0; i < n; ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      break;
    case UnaryOp::Sigmoid:
      for (size_t i = 0; i < n; ++i) out[i] = stable_sigmoid(xv[i]);
      break;
    case UnaryOp::Tanh:
      for (size_t i = 0; i < n; ++i) out[i] = std::tanh(xv[i]);
      break;
  }
  return make_op(x.shape(), std::move(out), {x},
                 [op, n](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   const double* ov = out.values().data();
                   const double* xv = ps[0].values().data();
                   std::vector<double> gx(n);
                   switch (op) {
                     case UnaryOp::Relu:
                       for (size_t i = 0; i < n; ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
                       break;
                     case UnaryOp::Sigmoid:
                       for (size_t i = 0; i < n; ++i) gx[i] = g[i] * ov[i] * (1.0 - ov[i]);
                       break;
                     case UnaryOp::Tanh:
                       for (size_t i = 0; i < n; ++i) gx[i] = g[i] * (1.0 - ov[i] * ov[i]);
                       break;
                   }
                   ps[0].accumulate_grad(gx);
                 });
}

Tensor relu(const Tensor& x) { return unary_op(x, UnaryOp::Relu); }
Tensor sigmoid(const Tensor& x) { return unary_op(x, UnaryOp::Sigmoid); }
Tensor tanh(const Tensor& x) { return unary_op(x, UnaryOp::Tanh); }

static Tensor softmax_impl(const Tensor& x, const Tensor* mask) {
  require_rank2(x, "softmax_rows");
  const size_t m = x.shape()[0], n = x.shape()[1];
  if (mask && mask->shape() != x.shape()) {
    throw DimensionError("softmax_rows_masked: mask " + shape_str(mask->shape()) +
                         " does not match " + shape_str(x.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* xv = x.values().data();
  const double* mv = mask ? mask->values().data() : nullptr;
  for (size_t i = 0; i < m; ++i) {
    const double* row = xv + i * n;
    double mx = -INFINITY;
    for (size_t j = 0; j < n; ++j) {
      if (!mv || mv[i * n + j] != 0.0) mx = std::max(mx, row[j]);
    }
    if (mx == -INFINITY) {
      throw ContractError("softmax_rows_masked: row " + std::to_string(i) +
                          " has no unmasked entries");
    }
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) {
      if (!mv || mv[i * n + j] != 0.0) {
        out[i * n + j] = std::exp(row[j] - mx);
        s += out[i * n + j];
      }
    }
    for (size_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  std::vector<Tensor> parents = {x};
  return make_op({m, n}, std::move(out), std::move(parents),
                 [m, n](const Tensor& out, std::span<Tensor> ps) {
                   // din_j = out_j * (g_j - sum_k g_k out_k); masked weights are
                   // exactly 0 so they contribute and receive nothing.
                   const double* g = out.grad().data();
                   const double* ov = out.values().data();
                   std::vector<double> gx(m * n);
                   for (size_t i = 0; i < m; ++i) {
                     double dot = 0.0;
                     for (size_t j = 0; j < n; ++j) dot += g[i * n + j] * ov[i * n + j];
                     for (size_t j = 0; j < n; ++j)
                       gx[i * n + j] = ov[i * n + j] * (g[i * n + j] - dot);
                   }
                   ps[0].accumulate_grad(gx);
                 });
}

Tensor softmax_rows(const Tensor& x) { return softmax_impl(x, nullptr); }
Tensor softmax_rows_masked(const Tensor& x, const Tensor& mask) {
  return softmax_impl(x, &mask);
}

static Tensor full_reduce(const Tensor& x, bool take_mean) {
  const size_t n = x.numel();
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  if (take_mean) acc /= static_cast<double>(n);
  return make_op({1}, {acc}, {x}, [n, take_mean](const Tensor& out, std::span<Tensor> ps) {
    const double g = out.grad()[0];
    const double each = take_mean ? g / static_cast<double>(n) : g;
    std::vector<double> gx(n, each);
    ps[0].accumulate_grad(gx);
  });
}

Tensor sum(const Tensor& x) { return full_reduce(x, false); }
Tensor mean(const Tensor& x) { return full_reduce(x, true); }

static Tensor axis_reduce(const Tensor& x, size_t axis, bool take_mean, const char* name) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(name) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(x.shape()));
  }
  if (x.rank() == 1) return full_reduce(x, take_mean);
  require_rank2(x, name);
  const size_t m = x.shape()[0], n = x.shape()[1];
  const double* xv = x.values().data();
  if (axis == 0) {
    std::vector<double> out(n, 0.0);
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
    if (take_mean)
      for (double& v : out) v /= static_cast<double>(m);
    return make_op({n}, std::move(out), {x},
                   [m, n, take_mean](const Tensor& out, std::span<Tensor> ps) {
                     const double* g = out.grad().data();
                     const double scale = take_mean ? 1.0 / static_cast<double>(m) : 1.0;
                     std::vector<double> gx(m * n);
                     for (size_t i = 0; i < m; ++i)
                       for (size_t j = 0; j < n; ++j) gx[i * n + j] = g[j] * scale;
                     ps[0].accumulate_grad(gx);
                   });
  }
  std::vector<double> out(m, 0.0);
  for (size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (size_t j = 0; j < n; ++j) acc += xv[i * n + j];
    out[i] = take_mean ? acc / static_cast<double>(n) : acc;
  }
  return make_op({m}, std::move(out), {x},
                 [m, n, take_mean](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   const double scale = take_mean ? 1.0 / static_cast<double>(n) : 1.0;
                   std::vector<double> gx(m * n);
                   for (size_t i = 0; i < m; ++i)
                     for (size_t j = 0; j < n; ++j) gx[i * n + j] = g[i] * scale;
                   ps[0].accumulate_grad(gx);
                 });
}

Tensor sum(const Tensor& x, size_t axis) { return axis_reduce(x, axis, false, "sum"); }
Tensor mean(const Tensor& x, size_t axis) { return axis_reduce(x, axis, true, "mean"); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " has " +
                         std::to_string(x.numel()) + " values, target " + shape_str(shape) +
                         " wants " + std::to_string(shape_numel(shape)));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(std::move(shape), std::move(out), {x},
                 [](const Tensor& out, std::span<Tensor> ps) {
                   ps[0].accumulate_grad(out.grad());
                 });
}

Tensor slice_rows(const Tensor& x, size_t row0, size_t row1) {
  require_rank2(x, "slice_rows");
  const size_t m = x.shape()[0], n = x.shape()[1];
  if (row0 >= row1 || row1 > m) {
    throw DimensionError("slice_rows: range [" + std::to_string(row0) + ", " +
                         std::to_string(row1) + ") invalid for " + shape_str(x.shape()));
  }
  const size_t k = row1 - row0;
  std::vector<double> out(x.values().begin() + row0 * n, x.values().begin() + row1 * n);
  return make_op({k, n}, std::move(out), {x},
                 [row0, k, n, m](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   std::vector<double> gx(m * n, 0.0);
                   std::copy(g, g + k * n, gx.begin() + row0 * n);
                   ps[0].accumulate_grad(gx);
                 });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const size_t n = parts[0].cols();
  size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch: " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op({total, n}, std::move(out), std::move(parents),
                 [n](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   size_t off = 0;
                   for (Tensor& p : ps) {
                     const size_t len = p.numel();
                     p.accumulate_grad(std::span<const double>(g + off, len));
                     off += len;
                   }
                 });
}

Tensor repeat_rows(const Tensor& x, size_t k) {
  require_rank2(x, "repeat_rows");
  if (k == 0) throw ContractError("repeat_rows: k must be >= 1");
  const size_t m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(m * k * n);
  const double* xv = x.values().data();
  for (size_t i = 0; i < m; ++i)
    for (size_t t = 0; t < k; ++t)
      std::copy(xv + i * n, xv + (i + 1) * n, out.begin() + (i * k + t) * n);
  return make_op({m * k, n}, std::move(out), {x},
                 [m, k, n](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   std::vector<double> gx(m * n, 0.0);
                   for (size_t i = 0; i < m; ++i)
                     for (size_t t = 0; t < k; ++t)
                       for (size_t j = 0; j < n; ++j) gx[i * n + j] += g[(i * k + t) * n + j];
                   ps[0].accumulate_grad(gx);
                 });
}

static Tensor segment_reduce(const Tensor& x, size_t k, bool take_mean, const char* name) {
  require_rank2(x, name);
  if (k == 0) throw ContractError(std::string(name) + ": k must be >= 1");
  const size_t mk = x.shape()[0], n = x.shape()[1];
  if (mk % k != 0) {
    throw DimensionError(std::string(name) + ": row count of " + shape_str(x.shape()) +
                         " not divisible by segment size " + std::to_string(k));
  }
  const size_t m = mk / k;
  std::vector<double> out(m * n, 0.0);
  const double* xv = x.values().data();
  for (size_t g = 0; g < m; ++g)
    for (size_t t = 0; t < k; ++t)
      for (size_t j = 0; j < n; ++j) out[g * n + j] += xv[(g * k + t) * n + j];
  if (take_mean)
    for (double& v : out) v /= static_cast<double>(k);
  return make_op({m, n}, std::move(out), {x},
                 [m, k, n, take_mean](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   const double scale = take_mean ? 1.0 / static_cast<double>(k) : 1.0;
                   std::vector<double> gx(m * k * n);
                   for (size_t i = 0; i < m; ++i)
                     for (size_t t = 0; t < k; ++t)
                       for (size_t j = 0; j < n; ++j)
                         gx[(i * k + t) * n + j] = g[i * n + j] * scale;
                   ps[0].accumulate_grad(gx);
                 });
}

Tensor segment_sum(const Tensor& x, size_t k) { return segment_reduce(x, k, false, "segment_sum"); }
Tensor segment_mean(const Tensor& x, size_t k) { return segment_reduce(x, k, true, "segment_mean"); }

Tensor interleave_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("interleave_rows: no inputs");
  const size_t m = parts[0].rows(), n = parts[0].cols(), T = parts.size();
  for (const Tensor& p : parts) {
    if (p.rows() != m || p.cols() != n) {
      throw DimensionError("interleave_rows: shape mismatch: " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
  }
  std::vector<double> out(m * T * n);
  for (size_t t = 0; t < T; ++t) {
    const double* pv = parts[t].values().data();
    for (size_t b = 0; b < m; ++b)
      std::copy(pv + b * n, pv + (b + 1) * n, out.begin() + (b * T + t) * n);
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op({m * T, n}, std::move(out), std::move(parents),
                 [m, n, T](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   for (size_t t = 0; t < T; ++t) {
                     if (!ps[t].requires_grad()) continue;
                     std::vector<double> gp(m * n);
                     for (size_t b = 0; b < m; ++b)
                       std::copy(g + (b * T + t) * n, g + (b * T + t + 1) * n,
                                 gp.begin() + b * n);
                     ps[t].accumulate_grad(gp);
                   }
                 });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "gather_rows");
  const size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  const double* tv = table.values().data();
  for (size_t p = 0; p < ids.size(); ++p) {
    const int id = ids[p];
    if (id < 0 || static_cast<size_t>(id) >= v) {
      throw IndexError("gather_rows: id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(v) + ")");
    }
    std::copy(tv + id * d, tv + (id + 1) * d, out.begin() + p * d);
  }
  std::vector<int> ids_copy(ids.begin(), ids.end());
  return make_op({ids.size(), d}, std::move(out), {table},
                 [ids = std::move(ids_copy), v, d](const Tensor& out, std::span<Tensor> ps) {
                   const double* g = out.grad().data();
                   std::vector<double> gt(v * d, 0.0);
                   for (size_t p = 0; p < ids.size(); ++p) {
                     double* row = gt.data() + static_cast<size_t>(ids[p]) * d;
                     for (size_t j = 0; j < d; ++j) row[j] += g[p * d + j];
                   }
                   ps[0].accumulate_grad(gt);
                 });
}

}  // namespace vqd
