#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_support.hpp"
#include "vqd/error.hpp"
#include "vqd/layers.hpp"

using namespace vqd;
using namespace vqd::testing;

static void zero_params(std::vector<NamedParam> params) {
  for (auto& [name, t] : params) {
    std::fill(t.values_mut().begin(), t.values_mut().end(), 0.0);
  }
}

TEST_CASE("linear forward: identity, hand oracle, gradient") {
  Rng rng(1);
  LinearLayer eye(2, 2, rng);
  std::vector<double> id = {1.0, 0.0, 0.0, 1.0};
  std::copy(id.begin(), id.end(), eye.weight.values_mut().begin());
  std::fill(eye.bias.values_mut().begin(), eye.bias.values_mut().end(), 0.0);
  Tensor x = Tensor::constant({2, 2}, {3.0, -1.0, 0.5, 2.0});
  Tensor y = eye.forward(x);
  for (size_t i = 0; i < 4; ++i) CHECK(y.values()[i] == x.values()[i]);

  LinearLayer single(2, 1, rng);
  single.weight.values_mut()[0] = 1.0;
  single.weight.values_mut()[1] = 2.0;
  single.bias.values_mut()[0] = 3.0;
  Tensor ones = Tensor::constant({1, 2}, {1.0, 1.0});
  std::vector<double> oracle = matmul_oracle({1.0, 1.0}, {1.0, 2.0}, 1, 2, 1);
  CHECK(single.forward(ones).value_at(0) == oracle[0] + 3.0);
  CHECK(single.forward(ones).value_at(0) == 6.0);

  LinearLayer layer(3, 4, rng);
  Tensor input = random_tensor({2, 3}, rng, false);
  sum(sigmoid(layer.forward(input))).backward();
  auto res = check_gradients({{"w", layer.weight}, {"b", layer.bias}},
                             [&] { return sum(sigmoid(layer.forward(input))).item(); });
  CHECK(res.max_rel_error < 1e-6);

  CHECK_THROWS_AS(layer.forward(Tensor::zeros({2, 5})), DimensionError);
}

TEST_CASE("mlp block: pass-through, zero weights, gradient") {
  Rng rng(2);
  MlpBlock block(2, 2, 2, rng);
  std::vector<double> id = {1.0, 0.0, 0.0, 1.0};
  std::copy(id.begin(), id.end(), block.fc1.weight.values_mut().begin());
  std::copy(id.begin(), id.end(), block.fc2.weight.values_mut().begin());
  std::fill(block.fc1.bias.values_mut().begin(), block.fc1.bias.values_mut().end(), 0.0);
  std::fill(block.fc2.bias.values_mut().begin(), block.fc2.bias.values_mut().end(), 0.0);
  Tensor nonneg = Tensor::constant({1, 2}, {0.5, 2.0});
  Tensor out = block.forward(nonneg);
  CHECK(out.values()[0] == 0.5);
  CHECK(out.values()[1] == 2.0);

  MlpBlock zeroed(3, 4, 10, rng);
  std::vector<NamedParam> zeroed_params;
  zeroed.collect("mlp", zeroed_params);
  zero_params(zeroed_params);
  Tensor rich = random_tensor({2, 3}, rng, false, -5.0, 5.0);
  Tensor zero_out = zeroed.forward(rich);
  for (double v : zero_out.values()) CHECK(v == 0.0);

  MlpBlock block2(3, 5, 2, rng);
  Tensor input = random_tensor({2, 3}, rng, false);
  std::vector<NamedParam> ps;
  block2.collect("mlp", ps);
  sum(vqd::tanh(block2.forward(input))).backward();
  auto res =
      check_gradients(ps, [&] { return sum(vqd::tanh(block2.forward(input))).item(); });
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("embedding lookup: rows, repeats, bounds") {
  Rng rng(3);
  EmbeddingTable table(6, 4, rng);
  std::vector<int> ids = {0};
  Tensor row0 = table.lookup(ids);
  for (size_t j = 0; j < 4; ++j) CHECK(row0.values()[j] == table.rows.values()[j]);

  std::vector<int> repeated = {5, 5};
  Tensor two = table.lookup(repeated);
  for (size_t j = 0; j < 4; ++j) {
    CHECK(two.values()[j] == two.values()[4 + j]);
  }
  sum(two).backward();
  for (size_t j = 0; j < 4; ++j) CHECK(table.rows.grad()[5 * 4 + j] == 2.0);
  for (size_t j = 0; j < 4; ++j) CHECK(table.rows.grad()[j] == 0.0);

  std::vector<int> out_of_range = {6};
  CHECK_THROWS_WITH_AS(table.lookup(out_of_range), doctest::Contains("6"), IndexError);
}

TEST_CASE("gru: zero-weight closed forms") {
  Rng rng(4);
  GruLayer gru(3, 2, rng);
  std::vector<NamedParam> ps;
  gru.collect("gru", ps);
  zero_params(ps);

  Tensor seq = Tensor::constant({2, 3}, {1.0, -1.0, 0.5, 2.0, 0.0, -0.5});
  auto [states, final_state] = gru.forward(seq);
  for (double v : states.values()) CHECK(v == 0.0);
  for (double v : final_state.values()) CHECK(v == 0.0);

  // h0 forced to one: z = sigmoid(0) = 0.5, candidate h = tanh(0) = 0,
  // h1 = (1-z)*1 + z*0 = 0.5.
  auto [states1, final1] = gru.forward(slice_rows(seq, 0, 1), Tensor::full({1, 2}, 1.0));
  CHECK(final1.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(final1.values()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("gru: gradient through three timesteps") {
  Rng rng(5);
  GruLayer gru(3, 4, rng);
  Tensor seq = random_tensor({3, 3}, rng);
  std::vector<NamedParam> ps;
  gru.collect("gru", ps);
  ps.emplace_back("seq", seq);
  auto loss_fn = [&] {
    auto [states, final_state] = gru.forward(seq);
    return (sum(states) + sum(mul(final_state, final_state))).item();
  };
  {
    auto [states, final_state] = gru.forward(seq);
    (sum(states) + sum(mul(final_state, final_state))).backward();
  }
  auto res = check_gradients(ps, loss_fn);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("gru: prefix property") {
  Rng rng(6);
  GruLayer gru(2, 3, rng);
  Tensor seq = random_tensor({5, 2}, rng, false);
  auto [full_states, full_final] = gru.forward(seq);
  for (size_t t = 1; t <= 5; ++t) {
    auto [prefix_states, prefix_final] = gru.forward(slice_rows(seq, 0, t));
    for (size_t i = 0; i < t * 3; ++i) {
      CHECK(prefix_states.values()[i] ==
            doctest::Approx(full_states.values()[i]).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(gru.forward(Tensor::zeros({0, 2})), ContractError);
}

TEST_CASE("attention: singleton, symmetry, gradient, weight sum") {
  Rng rng(7);
  TopDownAttention att(3, 3, 4, rng);

  Tensor query = random_tensor({3}, rng, false);
  Tensor one_key = random_tensor({1, 3}, rng, false);
  Tensor one_value = Tensor::constant({1, 3}, {7.0, -2.0, 0.5});
  auto [context, weights] = att.attend(query, one_key, one_value);
  CHECK(weights.values()[0] == 1.0);
  for (size_t j = 0; j < 3; ++j) CHECK(context.values()[j] == one_value.values()[j]);

  // Identical keys spread the weight uniformly.
  std::vector<double> same_row = {0.3, -0.6, 0.9};
  std::vector<double> tiled;
  for (int i = 0; i < 4; ++i) tiled.insert(tiled.end(), same_row.begin(), same_row.end());
  Tensor keys = Tensor::constant({4, 3}, tiled);
  Tensor values = random_tensor({4, 3}, rng, false);
  auto [ctx2, w2] = att.attend(query, keys, values);
  for (size_t i = 0; i < 4; ++i) CHECK(w2.values()[i] == doctest::Approx(0.25).epsilon(1e-12));

  // Gradient wrt the query and the attention parameters.
  Tensor q_param = random_tensor({1, 3}, rng);
  Tensor ks = random_tensor({5, 3}, rng, false);
  Tensor vs = random_tensor({5, 3}, rng, false);
  auto loss_fn = [&] { return sum(att.attend_batched(q_param, ks, vs, 5).first).item(); };
  sum(att.attend_batched(q_param, ks, vs, 5).first).backward();
  std::vector<NamedParam> ps = {{"q", q_param}};
  att.collect("att", ps);
  auto res = check_gradients(ps, loss_fn);
  CHECK(res.max_rel_error < 1e-6);

  // Weights sum to one for every K.
  for (size_t k : {1ul, 2ul, 3ul, 7ul, 12ul}) {
    Tensor kk = random_tensor({k, 3}, rng, false);
    Tensor vv = random_tensor({k, 3}, rng, false);
    auto [c, w] = att.attend(random_tensor({3}, rng, false), kk, vv);
    double s = 0.0;
    for (double x : w.values()) s += x;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }

  CHECK_THROWS_AS(att.attend(query, Tensor::zeros({0, 3}), Tensor::zeros({0, 3})),
                  ContractError);
}

TEST_CASE("bce with logits: closed forms, stability, gradient") {
  Tensor z0 = Tensor::constant({1, 1}, {0.0});
  Tensor y1 = Tensor::constant({1, 1}, {1.0});
  CHECK(bce_with_logits(z0, y1).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor z30 = Tensor::constant({1, 1}, {30.0});
  CHECK(bce_with_logits(z30, y1).item() < 1e-12);
  Tensor zneg = Tensor::constant({1, 1}, {-745.0});
  CHECK(std::isfinite(bce_with_logits(zneg, Tensor::constant({1, 1}, {0.0})).item()));

  Rng rng(8);
  Tensor logits = random_tensor({3, 4}, rng, true, -4.0, 4.0);
  std::vector<double> label_bits(12);
  for (double& b : label_bits) b = rng.bernoulli(0.5) ? 1.0 : 0.0;
  Tensor labels = Tensor::constant({3, 4}, label_bits);
  bce_with_logits(logits, labels).backward();
  for (size_t i = 0; i < 12; ++i) {
    const double z = logits.values()[i];
    const double s = 1.0 / (1.0 + std::exp(-z));
    CHECK(logits.grad()[i] == doctest::Approx((s - label_bits[i]) / 12.0).epsilon(1e-10));
  }
  auto res = check_gradients({{"z", logits}},
                             [&] { return bce_with_logits(logits, labels).item(); });
  CHECK(res.max_rel_error < 1e-6);

  CHECK_THROWS_AS(bce_with_logits(Tensor::zeros({1, 2}), Tensor::zeros({2, 1})),
                  DimensionError);
  CHECK_THROWS_AS(bce_with_logits(z0, Tensor::constant({1, 1}, {0.5})), ContractError);
}

TEST_CASE("bce symmetry and nonnegativity") {
  for (uint64_t seed : {1, 2, 3, 4, 5}) {
    Rng rng(seed);
    std::vector<double> zv(8), yv(8), flipped(8);
    for (size_t i = 0; i < 8; ++i) {
      zv[i] = rng.uniform(-6.0, 6.0);
      yv[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
      flipped[i] = 1.0 - yv[i];
    }
    std::vector<double> neg(zv);
    for (double& v : neg) v = -v;
    Tensor z = Tensor::constant({2, 4}, zv);
    Tensor y = Tensor::constant({2, 4}, yv);
    const double a = bce_with_logits(z, y).item();
    const double b =
        bce_with_logits(Tensor::constant({2, 4}, neg), Tensor::constant({2, 4}, flipped))
            .item();
    CHECK(a >= 0.0);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("l2 feature loss: values and one-sided gradient") {
  Tensor same = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(l2_feature_loss(same, same).item() == 0.0);

  Tensor t = Tensor::constant({2}, {1.0, 2.0});
  Tensor s = Tensor::constant({2}, {0.0, 0.0});
  CHECK(l2_feature_loss(t, s).item() == 5.0);

  Rng rng(9);
  Tensor teacher = random_tensor({4, 3}, rng, true);  // grad-bearing on purpose
  Tensor student = random_tensor({4, 3}, rng, true);
  l2_feature_loss(teacher, student).backward();
  CHECK_FALSE(teacher.has_grad());
  REQUIRE(student.has_grad());
  for (size_t i = 0; i < 12; ++i) {
    const double expected = 2.0 * (student.values()[i] - teacher.values()[i]) / 4.0;
    CHECK(student.grad()[i] == doctest::Approx(expected).epsilon(1e-12));
  }
  auto res = check_gradients({{"s", student}},
                             [&] { return l2_feature_loss(teacher, student).item(); });
  CHECK(res.max_rel_error < 1e-6);

  // Symmetric in value, asymmetric in gradient flow.
  CHECK(l2_feature_loss(teacher, student).item() ==
        doctest::Approx(l2_feature_loss(student.detach(), teacher.detach()).item())
            .epsilon(1e-12));

  CHECK_THROWS_AS(l2_feature_loss(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})),
                  DimensionError);
}

TEST_CASE("initialization is uniform within the fan-in bound and seeded") {
  Rng rng_a(123);
  LinearLayer a(16, 8, rng_a);
  Rng rng_b(123);
  LinearLayer b(16, 8, rng_b);
  CHECK(std::equal(a.weight.values().begin(), a.weight.values().end(),
                   b.weight.values().begin()));
  const double bound = 1.0 / std::sqrt(16.0);
  for (double v : a.weight.values()) {
    CHECK(v >= -bound);
    CHECK(v <= bound);
  }
}
