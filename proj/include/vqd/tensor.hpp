#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vqd {

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& shape);
size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

// Dense 64-bit float tensor participating in a define-by-run reverse-mode
// graph. Value-semantic handle: copies share the underlying node.
//
// Grad buffers exist only on nodes that require grad, are zero-initialized on
// first use, and accumulate across backward() calls until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  // Leaf constructors.
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  // Trainable leaf (requires_grad = true).
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  size_t rank() const { return shape().size(); }
  size_t numel() const;
  // [m x n] accessors; rank-1 tensors are treated as a single row.
  size_t rows() const;
  size_t cols() const;

  // Spans alias the node's storage; deleted on rvalues so a temporary's
  // buffer cannot leak into a dangling span.
  std::span<const double> values() const&;
  std::span<const double> values() const&& = delete;
  std::span<double> values_mut() &;  // in-place edits (optimizer updates, test hooks)
  double value_at(size_t i) const { return values()[i]; }
  double item() const;  // numel()==1 only

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const&;
  std::span<const double> grad() const&& = delete;
  void accumulate_grad(std::span<const double> g);
  void zero_grad();

  // Constant copy of the values, cut out of the graph.
  Tensor detach() const;

  // Reverse-mode sweep from a scalar; visits each reachable node once in
  // reverse topological order and accumulates into every requires_grad leaf.
  void backward() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>,
                        std::function<void(const Tensor&, std::span<Tensor>)>);
  friend std::span<Tensor> op_parents(const Tensor&);
};

// Custom-op factory: records parents and a backward closure unless grad mode
// is off or no parent requires grad. The closure reads out.grad() and calls
// parents[i].accumulate_grad(...).
using BackwardFn = std::function<void(const Tensor& out, std::span<Tensor> parents)>;
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               BackwardFn backward);

// Disables graph recording in scope (teacher forwards, evaluation).
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

// ---- ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] . [k x n]

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise

// x [m x n] + bias [n], broadcast over rows. The only implicit broadcast.
Tensor add_rowvec(const Tensor& x, const Tensor& bias);
// Row i of x scaled by s[i]; s is [m] or [m x 1].
Tensor scale_rows(const Tensor& x, const Tensor& s);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// Rows sum to 1; max-subtracted for stability. The masked variant treats
// mask==0 positions as absent (weight exactly 0); mask is a constant.
Tensor softmax_rows(const Tensor& x);
Tensor softmax_rows_masked(const Tensor& x, const Tensor& mask);

Tensor sum(const Tensor& x);   // -> scalar [1]
Tensor mean(const Tensor& x);  // -> scalar [1]
// axis 0 collapses rows -> [n]; axis 1 collapses cols -> [m].
Tensor sum(const Tensor& x, size_t axis);
Tensor mean(const Tensor& x, size_t axis);

Tensor reshape(const Tensor& x, Shape shape);  // same numel

Tensor slice_rows(const Tensor& x, size_t row0, size_t row1);  // [row0, row1)
Tensor concat_rows(std::span<const Tensor> parts);
// Each row repeated k consecutive times: [m x n] -> [m*k x n].
Tensor repeat_rows(const Tensor& x, size_t k);
// Inverse grouping: consecutive blocks of k rows reduced. [m*k x n] -> [m x n].
Tensor segment_sum(const Tensor& x, size_t k);
Tensor segment_mean(const Tensor& x, size_t k);
// Row b of the result is parts[t][b] laid out example-major:
// result[b*T + t] = parts[t].row(b), parts all [m x n].
Tensor interleave_rows(std::span<const Tensor> parts);
// Row gather with scatter-add backward into touched rows only.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace vqd
