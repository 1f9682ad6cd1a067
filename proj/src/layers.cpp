#include "vqd/layers.hpp"

#include <cmath>

#include "vqd/error.hpp"

namespace vqd {

static Tensor init_uniform(Shape shape, size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::param(std::move(shape), std::move(v));
}

// ---- LinearLayer -------------------------------------------------------

LinearLayer::LinearLayer(size_t in, size_t out, Rng& rng)
    : weight(init_uniform({in, out}, in, rng)), bias(init_uniform({out}, in, rng)) {}

Tensor LinearLayer::forward(const Tensor& x) const {
  return add_rowvec(matmul(x, weight), bias);
}

void LinearLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

// ---- MlpBlock ------------------------------------------------------------

MlpBlock::MlpBlock(size_t in, size_t hidden, size_t out, Rng& rng)
    : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

Tensor MlpBlock::forward(const Tensor& x) const {
  return fc2.forward(relu(fc1.forward(x)));
}

void MlpBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

// ---- EmbeddingTable --------------------------------------------------------

EmbeddingTable::EmbeddingTable(size_t vocab, size_t d, Rng& rng)
    : vocab_size(vocab), dim(d), rows(init_uniform({vocab, d}, d, rng)) {}

Tensor EmbeddingTable::lookup(std::span<const int> ids) const {
  for (int id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= vocab_size) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) +
                       " out of range [0, " + std::to_string(vocab_size) + ")");
    }
  }
  return gather_rows(rows, ids);
}

void EmbeddingTable::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".rows", rows);
}

// ---- GruLayer --------------------------------------------------------------

GruLayer::GruLayer(size_t in, size_t hidden, Rng& rng)
    : w_z(init_uniform({in, hidden}, in, rng)),
      w_r(init_uniform({in, hidden}, in, rng)),
      w_h(init_uniform({in, hidden}, in, rng)),
      u_z(init_uniform({hidden, hidden}, hidden, rng)),
      u_r(init_uniform({hidden, hidden}, hidden, rng)),
      u_h(init_uniform({hidden, hidden}, hidden, rng)),
      b_z(init_uniform({hidden}, hidden, rng)),
      b_r(init_uniform({hidden}, hidden, rng)),
      b_h(init_uniform({hidden}, hidden, rng)),
      hidden_size(hidden) {}

Tensor GruLayer::step(const Tensor& x_t, const Tensor& h_prev) const {
  Tensor z = sigmoid(add_rowvec(matmul(x_t, w_z) + matmul(h_prev, u_z), b_z));
  Tensor r = sigmoid(add_rowvec(matmul(x_t, w_r) + matmul(h_prev, u_r), b_r));
  Tensor hc = tanh(add_rowvec(matmul(x_t, w_h) + matmul(r * h_prev, u_h), b_h));
  Tensor ones = Tensor::full(z.shape(), 1.0);
  return (ones - z) * h_prev + z * hc;
}

std::pair<Tensor, Tensor> GruLayer::forward(const Tensor& seq) const {
  return forward(seq, Tensor::zeros({1, hidden_size}));
}

std::pair<Tensor, Tensor> GruLayer::forward(const Tensor& seq, const Tensor& h0) const {
  if (seq.rank() != 2 || seq.shape()[0] == 0) {
    throw ContractError("gru_forward: expected a non-empty [T x in] sequence, got " +
                        shape_str(seq.shape()));
  }
  const size_t T = seq.shape()[0];
  Tensor h = h0.rank() == 1 ? reshape(h0, {1, hidden_size}) : h0;
  std::vector<Tensor> states;
  states.reserve(T);
  for (size_t t = 0; t < T; ++t) {
    h = step(slice_rows(seq, t, t + 1), h);
    states.push_back(h);
  }
  return {concat_rows(states), reshape(h, {hidden_size})};
}

void GruLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".w_z", w_z);
  out.emplace_back(prefix + ".w_r", w_r);
  out.emplace_back(prefix + ".w_h", w_h);
  out.emplace_back(prefix + ".u_z", u_z);
  out.emplace_back(prefix + ".u_r", u_r);
  out.emplace_back(prefix + ".u_h", u_h);
  out.emplace_back(prefix + ".b_z", b_z);
  out.emplace_back(prefix + ".b_r", b_r);
  out.emplace_back(prefix + ".b_h", b_h);
}

// ---- TopDownAttention --------------------------------------------------------

TopDownAttention::TopDownAttention(size_t d_key, size_t d_query, size_t d_hidden, Rng& rng)
    : w_key(init_uniform({d_key, d_hidden}, d_key, rng)),
      w_query(init_uniform({d_query, d_hidden}, d_query, rng)),
      score_w(init_uniform({d_hidden}, d_hidden, rng)) {}

std::pair<Tensor, Tensor> TopDownAttention::attend(const Tensor& query, const Tensor& keys,
                                                   const Tensor& values) const {
  if (keys.rank() != 2 || keys.shape()[0] == 0) {
    throw ContractError("attend: need at least one key, got " + shape_str(keys.shape()));
  }
  const size_t K = keys.shape()[0];
  Tensor q = query.rank() == 1 ? reshape(query, {1, query.numel()}) : query;
  auto [context, weights] = attend_batched(q, keys, values, K);
  return {reshape(context, {values.shape()[1]}), reshape(weights, {K})};
}

std::pair<Tensor, Tensor> TopDownAttention::attend_batched(const Tensor& query,
                                                           const Tensor& keys,
                                                           const Tensor& values, size_t group,
                                                           const Tensor* mask) const {
  if (group == 0) throw ContractError("attend: empty key group");
  if (keys.rows() != values.rows() || keys.rows() % group != 0 ||
      keys.rows() / group != query.rows()) {
    throw DimensionError("attend: keys " + shape_str(keys.shape()) + ", values " +
                         shape_str(values.shape()) + ", query " + shape_str(query.shape()) +
                         " inconsistent for group size " + std::to_string(group));
  }
  const size_t B = query.rows();
  Tensor projected = relu(matmul(keys, w_key) + repeat_rows(matmul(query, w_query), group));
  Tensor scores = reshape(matmul(projected, reshape(score_w, {score_w.numel(), 1})), {B, group});
  Tensor weights = mask ? softmax_rows_masked(scores, *mask) : softmax_rows(scores);
  Tensor context = segment_sum(scale_rows(values, reshape(weights, {B * group})), group);
  return {context, weights};
}

void TopDownAttention::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".w_key", w_key);
  out.emplace_back(prefix + ".w_query", w_query);
  out.emplace_back(prefix + ".score_w", score_w);
}

// ---- losses -------------------------------------------------------------

Tensor bce_with_logits(const Tensor& logits, const Tensor& labels) {
  if (logits.shape() != labels.shape()) {
    throw DimensionError("bce_with_logits: shapes differ: " + shape_str(logits.shape()) +
                         " vs " + shape_str(labels.shape()));
  }
  const size_t n = logits.numel();
  const double* zv = logits.values().data();
  const double* yv = labels.values().data();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (yv[i] != 0.0 && yv[i] != 1.0) {
      throw ContractError("bce_with_logits: label " + std::to_string(yv[i]) +
                          " is not binary");
    }
    const double z = zv[i];
    acc += std::max(z, 0.0) - z * yv[i] + std::log1p(std::exp(-std::abs(z)));
  }
  acc /= static_cast<double>(n);
  Tensor y = labels;  // kept alive by the closure; constant wrt the loss
  return make_op({1}, {acc}, {logits}, [y, n](const Tensor& out, std::span<Tensor> ps) {
    const double g = out.grad()[0];
    const double* zv = ps[0].values().data();
    const double* yv = y.values().data();
    std::vector<double> gz(n);
    for (size_t i = 0; i < n; ++i) {
      const double z = zv[i];
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      gz[i] = g * (s - yv[i]) / static_cast<double>(n);
    }
    ps[0].accumulate_grad(gz);
  });
}

Tensor l2_feature_loss(const Tensor& z_teacher, const Tensor& z_student) {
  if (z_teacher.shape() != z_student.shape()) {
    throw DimensionError("l2_feature_loss: shapes differ: " + shape_str(z_teacher.shape()) +
                         " vs " + shape_str(z_student.shape()));
  }
  const size_t n = z_student.numel();
  const double batch = z_student.rank() >= 2 ? static_cast<double>(z_student.shape()[0]) : 1.0;
  const double* tv = z_teacher.values().data();
  const double* sv = z_student.values().data();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = tv[i] - sv[i];
    acc += d * d;
  }
  acc /= batch;
  Tensor teacher = z_teacher.detach();
  return make_op({1}, {acc}, {z_student},
                 [teacher, n, batch](const Tensor& out, std::span<Tensor> ps) {
                   const double g = out.grad()[0];
                   const double* tv = teacher.values().data();
                   const double* sv = ps[0].values().data();
                   std::vector<double> gs(n);
                   for (size_t i = 0; i < n; ++i) gs[i] = g * 2.0 * (sv[i] - tv[i]) / batch;
                   ps[0].accumulate_grad(gs);
                 });
}

}  // namespace vqd
