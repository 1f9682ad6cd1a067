#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vqd/rng.hpp"
#include "vqd/tensor.hpp"

namespace vqd {

using NamedParam = std::pair<std::string, Tensor>;

// All parameters are drawn uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from
// the owning model's seeded generator, in declaration order.

struct LinearLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  LinearLayer() = default;
  LinearLayer(size_t in, size_t out, Rng& rng);

  // x [batch x in] -> x.W + bias
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Two FC layers with one ReLU between; output stays linear (logits/features).
struct MlpBlock {
  LinearLayer fc1;
  LinearLayer fc2;

  MlpBlock() = default;
  MlpBlock(size_t in, size_t hidden, size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct EmbeddingTable {
  size_t vocab_size = 0;
  size_t dim = 0;
  Tensor rows;  // [vocab x dim]

  EmbeddingTable() = default;
  EmbeddingTable(size_t vocab_size, size_t dim, Rng& rng);

  // -> [ids.size() x dim]; backward scatters into touched rows only.
  Tensor lookup(std::span<const int> ids) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Single-layer GRU:
//   z_t = sigmoid(x_t.W_z + h_{t-1}.U_z + b_z)
//   r_t = sigmoid(x_t.W_r + h_{t-1}.U_r + b_r)
//   hc  = tanh(x_t.W_h + (r_t*h_{t-1}).U_h + b_h)
//   h_t = (1 - z_t)*h_{t-1} + z_t*hc
struct GruLayer {
  Tensor w_z, w_r, w_h;  // [in x hidden]
  Tensor u_z, u_r, u_h;  // [hidden x hidden]
  Tensor b_z, b_r, b_h;  // [hidden]
  size_t hidden_size = 0;

  GruLayer() = default;
  GruLayer(size_t in, size_t hidden, Rng& rng);

  // One step over a batch of rows.
  Tensor step(const Tensor& x_t, const Tensor& h_prev) const;

  // Whole sequence, single example. Returns (states [T x hidden], final [hidden]).
  // h0 defaults to zeros; passing one is a test hook.
  std::pair<Tensor, Tensor> forward(const Tensor& seq) const;
  std::pair<Tensor, Tensor> forward(const Tensor& seq, const Tensor& h0) const;

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Additive top-down attention: score_i = w . relu(k_i.W_k + q.W_q), weights
// softmax over keys, context the weighted sum of values.
struct TopDownAttention {
  Tensor w_key;    // [d_k x d_h]
  Tensor w_query;  // [d_q x d_h]
  Tensor score_w;  // [d_h]

  TopDownAttention() = default;
  TopDownAttention(size_t d_key, size_t d_query, size_t d_hidden, Rng& rng);

  // Single query over K keys. query [d_q], keys [K x d_k], values [K x d_v].
  // Returns (context [d_v], weights [K]).
  std::pair<Tensor, Tensor> attend(const Tensor& query, const Tensor& keys,
                                   const Tensor& values) const;

  // Batched: query [B x d_q], keys/values [B*K x d], groups of K consecutive
  // rows per example. mask (optional, constant [B x K]) zeroes pad keys.
  // Returns (context [B x d_v], weights [B x K]).
  std::pair<Tensor, Tensor> attend_batched(const Tensor& query, const Tensor& keys,
                                           const Tensor& values, size_t group,
                                           const Tensor* mask = nullptr) const;

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Mean over batch*N entries of the stable form
// max(z,0) - z*y + log(1 + exp(-|z|)); gradient (sigmoid(z) - y)/(batch*N).
Tensor bce_with_logits(const Tensor& logits, const Tensor& labels);

// Squared Frobenius distance, divided by the batch (row) count when the
// inputs are matrices. The teacher side is a constant: gradient flows only
// into z_student.
Tensor l2_feature_loss(const Tensor& z_teacher, const Tensor& z_student);

}  // namespace vqd
