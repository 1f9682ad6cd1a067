#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "test_support.hpp"
#include "vqd/data.hpp"
#include "vqd/error.hpp"
#include "vqd/layers.hpp"

using namespace vqd;
using namespace vqd::testing;

namespace {

DatasetManifest tiny_manifest() {
  DatasetManifest m;
  m.n_regions = 2;
  m.d_img = 3;
  m.question_vocab = 20;
  m.answer_vocab = 15;
  m.class_names = kClassCodes;
  m.n_examples = {{"train", 2}};
  return m;
}

std::string valid_record_line(const std::string& id) {
  return "{\"id\": \"" + id +
         "\", \"image_features\": [[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]], "
         "\"question_tokens\": [1, 5, 3], "
         "\"answer_ids\": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9], "
         "\"labels\": [1, 0, 1, 0, 0, 0, 1, 0, 0, 1]}";
}

}  // namespace

TEST_CASE("load_records: empty file, malformed lines, schema violations") {
  TempDir dir("data");
  DatasetManifest m = tiny_manifest();

  {
    std::ofstream(dir.path() / "empty.jsonl");
    auto examples = load_records(dir.path() / "empty.jsonl", m);
    CHECK(examples.empty());
  }

  {
    std::ofstream out(dir.path() / "ok.jsonl");
    out << valid_record_line("a") << "\n" << valid_record_line("b") << "\n";
  }
  auto examples = load_records(dir.path() / "ok.jsonl", m);
  REQUIRE(examples.size() == 2);
  CHECK(examples[0].id == "a");
  CHECK(examples[0].question_tokens == std::vector<int>{1, 5, 3});
  CHECK(examples[0].labels[0] == 1);
  CHECK(examples[0].image_features[3] == 1.0);

  {
    std::ofstream out(dir.path() / "broken.jsonl");
    out << valid_record_line("a") << "\n" << "{not json\n";
  }
  CHECK_THROWS_WITH_AS(load_records(dir.path() / "broken.jsonl", m),
                       doctest::Contains("line 2"), SchemaError);

  {
    std::ofstream out(dir.path() / "nine.jsonl");
    out << "{\"id\": \"x\", \"image_features\": [[0,0,0],[0,0,0]], "
           "\"question_tokens\": [1], \"answer_ids\": [0,1,2,3,4,5,6,7,8], "
           "\"labels\": [0,0,0,0,0,0,0,0,0,0]}\n";
  }
  CHECK_THROWS_WITH_AS(load_records(dir.path() / "nine.jsonl", m),
                       doctest::Contains("answer_ids: expected 10"), SchemaError);

  {
    std::ofstream out(dir.path() / "dims.jsonl");
    out << "{\"id\": \"x\", \"image_features\": [[0,0],[0,0]], "
           "\"question_tokens\": [1], \"answer_ids\": [0,1,2,3,4,5,6,7,8,9], "
           "\"labels\": [0,0,0,0,0,0,0,0,0,0]}\n";
  }
  CHECK_THROWS_WITH_AS(load_records(dir.path() / "dims.jsonl", m),
                       doctest::Contains("image_features"), SchemaError);

  {
    std::ofstream out(dir.path() / "labels.jsonl");
    out << "{\"id\": \"x\", \"image_features\": [[0,0,0],[0,0,0]], "
           "\"question_tokens\": [1], \"answer_ids\": [0,1,2,3,4,5,6,7,8,9], "
           "\"labels\": [0,0,0]}\n";
  }
  CHECK_THROWS_WITH_AS(load_records(dir.path() / "labels.jsonl", m),
                       doctest::Contains("labels"), SchemaError);
}

TEST_CASE("records round-trip through write and load") {
  GeneratorProfile profile = GeneratorProfile::answer_dominant();
  auto examples = generate_synthetic(profile, 50, 99, "train");
  DatasetManifest manifest = synthetic_manifest(profile, {{"train", 50}}, 99);

  TempDir dir("roundtrip");
  write_records(dir.path() / "train.jsonl", examples, manifest);
  auto loaded = load_records(dir.path() / "train.jsonl", manifest);
  REQUIRE(loaded.size() == examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    CHECK(loaded[i].id == examples[i].id);
    CHECK(loaded[i].question_tokens == examples[i].question_tokens);
    CHECK(loaded[i].answer_ids == examples[i].answer_ids);
    CHECK(loaded[i].labels == examples[i].labels);
    REQUIRE(loaded[i].image_features.size() == examples[i].image_features.size());
    for (size_t j = 0; j < examples[i].image_features.size(); ++j) {
      CHECK(loaded[i].image_features[j] == examples[i].image_features[j]);
    }
  }

  write_manifest(dir.path() / "manifest.json", manifest);
  DatasetManifest m2 = load_manifest(dir.path() / "manifest.json");
  CHECK(m2.n_regions == manifest.n_regions);
  CHECK(m2.d_img == manifest.d_img);
  CHECK(m2.question_vocab == manifest.question_vocab);
  CHECK(m2.n_examples.at("train") == 50);
  REQUIRE(m2.profile.has_value());
  CHECK(m2.profile->name == "answer-dominant");
  CHECK(m2.seed == 99);
}

TEST_CASE("manifest with wrong class names is rejected") {
  TempDir dir("manifest");
  std::ofstream out(dir.path() / "bad.json");
  out << R"({"r": 2, "d_img": 3, "question_vocab": 20, "answer_vocab": 15,
             "class_names": ["AAA","IVE","INV","DFF","AMB","SBJ","SYN","GRN","SPM","OTH"],
             "n_examples": {}})";
  out.close();
  CHECK_THROWS_WITH_AS(load_manifest(dir.path() / "bad.json"), doctest::Contains("AAA"),
                       SchemaError);
}

TEST_CASE("generator is deterministic and split-sensitive") {
  GeneratorProfile profile = GeneratorProfile::answer_dominant();
  auto a = generate_synthetic(profile, 30, 7, "train");
  auto b = generate_synthetic(profile, 30, 7, "train");
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].question_tokens == b[i].question_tokens);
    CHECK(a[i].answer_ids == b[i].answer_ids);
    CHECK(a[i].labels == b[i].labels);
    CHECK(std::equal(a[i].image_features.begin(), a[i].image_features.end(),
                     b[i].image_features.begin()));
  }
  auto c = generate_synthetic(profile, 30, 7, "val");
  bool any_diff = false;
  for (size_t i = 0; i < a.size() && !any_diff; ++i) {
    any_diff = a[i].answer_ids != c[i].answer_ids || a[i].labels != c[i].labels;
  }
  CHECK(any_diff);
}

TEST_CASE("pure answer signal: pool lookup classifier reaches AP 1.0") {
  GeneratorProfile profile = GeneratorProfile::answer_dominant();
  profile.answer_signal = 1.0;
  profile.noise = 0.0;
  auto examples = generate_synthetic(profile, 400, 31, "train");
  SyntheticPools pools = synthetic_pools();

  for (size_t c = 0; c < kNumClasses; ++c) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const VqdExample& ex : examples) {
      const size_t lo = pools.answer_class_base(c);
      const size_t hi = lo + pools.answer_pool_size;
      bool hit = false;
      for (int a : ex.answer_ids) {
        hit = hit || (static_cast<size_t>(a) >= lo && static_cast<size_t>(a) < hi);
      }
      scores.push_back(hit ? 1.0 : 0.0);
      labels.push_back(ex.labels[c]);
    }
    size_t positives = static_cast<size_t>(std::count(labels.begin(), labels.end(), 1));
    if (positives == 0) continue;
    auto ap = average_precision_oracle(scores, labels);
    REQUIRE(ap.has_value());
    CHECK(*ap == 1.0);
  }
}

TEST_CASE("zero priors produce valid all-negative records") {
  GeneratorProfile profile = GeneratorProfile::answer_dominant();
  profile.class_priors.fill(0.0);
  auto examples = generate_synthetic(profile, 25, 5, "train");
  DatasetManifest manifest = synthetic_manifest(profile, {{"train", 25}}, 5);
  for (const VqdExample& ex : examples) {
    for (int y : ex.labels) CHECK(y == 0);
  }
  TempDir dir("negatives");
  write_records(dir.path() / "train.jsonl", examples, manifest);
  CHECK(load_records(dir.path() / "train.jsonl", manifest).size() == 25);
}

TEST_CASE("generator marginals converge to priors within 3 sigma") {
  GeneratorProfile profile = GeneratorProfile::answer_dominant();
  const size_t n = 10000;
  auto examples = generate_synthetic(profile, n, 1234, "train");
  for (size_t c = 0; c < kNumClasses; ++c) {
    size_t count = 0;
    for (const VqdExample& ex : examples) count += ex.labels[c];
    const double p = profile.class_priors[c];
    const double sigma = std::sqrt(p * (1.0 - p) * static_cast<double>(n));
    CHECK(std::abs(static_cast<double>(count) - p * n) <= 3.0 * sigma + 1e-9);
  }
}

TEST_CASE("batching: coverage, determinism, padding mask") {
  GeneratorProfile profile = GeneratorProfile::answer_dominant();
  auto examples = generate_synthetic(profile, 23, 3, "train");
  DatasetManifest manifest = synthetic_manifest(profile, {{"train", 23}}, 3);

  auto batches = batches_shuffled(examples, manifest, 100, 5, 0);
  REQUIRE(batches.size() == 1);
  CHECK(batches[0].size == 23);

  auto small = batches_shuffled(examples, manifest, 4, 5, 0);
  std::multiset<std::string> seen;
  for (const Batch& b : small) {
    for (const std::string& id : b.ids) seen.insert(id);
    for (double y : b.labels.values()) CHECK((y == 0.0 || y == 1.0));
  }
  CHECK(seen.size() == 23);
  std::multiset<std::string> expected;
  for (const auto& ex : examples) expected.insert(ex.id);
  CHECK(seen == expected);

  CHECK(epoch_order(23, 5, 0) == epoch_order(23, 5, 0));
  CHECK(epoch_order(23, 5, 0) != epoch_order(23, 5, 1));
  CHECK(epoch_order(23, 5, 1) != epoch_order(23, 6, 1));
}

TEST_CASE("padded batch reproduces unpadded per-example GRU final states") {
  GeneratorProfile profile = GeneratorProfile::answer_dominant();
  auto examples = generate_synthetic(profile, 6, 17, "train");
  DatasetManifest manifest = synthetic_manifest(profile, {{"train", 6}}, 17);
  Batch batch = batches_sequential(examples, manifest, 6)[0];
  REQUIRE(batch.max_len > 1);

  Rng rng(71);
  EmbeddingTable embed(manifest.question_vocab, 5, rng);
  GruLayer gru(5, 4, rng);

  // Batched masked sweep, exactly as the models run it.
  Tensor h = Tensor::zeros({batch.size, 4});
  for (size_t t = 0; t < batch.max_len; ++t) {
    Tensor x_t = embed.lookup(batch.token_column(t));
    Tensor h_next = gru.step(x_t, h);
    h = h + scale_rows(h_next - h, batch.step_mask(t));
  }

  // Unbatched recomputation per example.
  for (size_t b = 0; b < batch.size; ++b) {
    const auto& tokens = examples[b].question_tokens;
    Tensor seq = embed.lookup(tokens);
    auto [states, final_state] = gru.forward(seq);
    for (size_t j = 0; j < 4; ++j) {
      CHECK(h.values()[b * 4 + j] == doctest::Approx(final_state.values()[j]).epsilon(1e-12));
    }
  }
}
