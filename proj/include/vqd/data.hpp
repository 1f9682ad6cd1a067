#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vqd/tensor.hpp"

namespace vqd {

inline constexpr size_t kNumClasses = 10;
inline constexpr size_t kAnswersPerExample = 10;
inline constexpr int kPadTokenId = 0;  // question ids start at 1

// Answer-difference reason codes, fixed order.
extern const std::array<std::string, kNumClasses> kClassCodes;

struct VqdExample {
  std::string id;
  std::vector<double> image_features;  // n_regions * d_img, region-major
  std::vector<int> question_tokens;    // length >= 1, ids in [1, question_vocab)
  std::array<int, kAnswersPerExample> answer_ids;
  std::array<int, kNumClasses> labels;  // 0/1
};

// Knobs of the synthetic answer-dominant generator. Signals order the
// modalities' informativeness so the teacher quality ordering is learnable.
struct GeneratorProfile {
  std::string name;
  std::array<double, kNumClasses> class_priors{};
  double answer_signal = 0.0;
  double question_signal = 0.0;
  double image_signal = 0.0;
  double noise = 0.0;
  size_t question_vocab = 0;
  size_t answer_vocab = 0;
  size_t t_min = 1, t_max = 1;  // question length range
  size_t n_regions = 0;
  size_t d_img = 0;

  static GeneratorProfile answer_dominant();
  static std::optional<GeneratorProfile> by_name(const std::string& name);
};

struct DatasetManifest {
  size_t n_regions = 0;  // JSON key "r"
  size_t d_img = 0;
  size_t question_vocab = 0;
  size_t answer_vocab = 0;
  std::array<std::string, kNumClasses> class_names;
  std::map<std::string, size_t> n_examples;  // split -> count
  std::optional<GeneratorProfile> profile;
  std::optional<uint64_t> seed;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Line-delimited JSON records; every record is validated against the
// manifest dims. Malformed lines raise SchemaError naming the line number.
std::vector<VqdExample> load_records(const std::filesystem::path& path,
                                     const DatasetManifest& manifest);
std::vector<VqdExample> load_records(const std::vector<std::filesystem::path>& paths,
                                     const DatasetManifest& manifest);
void write_records(const std::filesystem::path& path, std::span<const VqdExample> examples,
                   const DatasetManifest& manifest);

// Token pool layout of the synthetic generator: class c owns a disjoint
// prefix block of each vocabulary (question ids shifted by 1 for the pad id);
// everything above the blocks is background.
struct SyntheticPools {
  size_t answer_pool_size;
  size_t question_pool_size;
  size_t answer_class_base(size_t cls) const { return cls * answer_pool_size; }
  size_t question_class_base(size_t cls) const { return 1 + cls * question_pool_size; }
};
SyntheticPools synthetic_pools();

// Deterministic given (profile, seed, split). Prototype directions depend on
// (profile, seed) only, so different splits share the same feature geometry.
std::vector<VqdExample> generate_synthetic(const GeneratorProfile& profile, size_t n,
                                           uint64_t seed, const std::string& split = "train");
DatasetManifest synthetic_manifest(const GeneratorProfile& profile,
                                   std::map<std::string, size_t> split_sizes, uint64_t seed);

// A padded minibatch. Image features and labels are constant tensors; token
// ids stay integral (embedding lookups happen inside the models).
struct Batch {
  size_t size = 0;
  size_t n_regions = 0;
  size_t d_img = 0;
  size_t max_len = 0;

  Tensor image_features;          // [size*n_regions x d_img]
  std::vector<int> tokens;        // size*max_len, padded with kPadTokenId
  std::vector<size_t> lengths;    // true question lengths
  std::vector<int> answers;       // size*kAnswersPerExample
  Tensor labels;                  // [size x kNumClasses], entries in {0,1}
  std::vector<std::string> ids;

  // 1.0 where t < length, else 0.0; shape [size].
  Tensor step_mask(size_t t) const;
  // 1.0 where t < length, else 0.0; shape [size x max_len].
  Tensor length_mask() const;
  // Column t of the padded token matrix.
  std::vector<int> token_column(size_t t) const;
};

Batch make_batch(std::span<const VqdExample> dataset, std::span<const size_t> indices,
                 const DatasetManifest& manifest);

// Epoch order is drawn from a generator seeded by (seed, epoch); every
// example appears exactly once.
std::vector<Batch> batches_shuffled(std::span<const VqdExample> dataset,
                                    const DatasetManifest& manifest, size_t batch_size,
                                    uint64_t seed, size_t epoch);
std::vector<Batch> batches_sequential(std::span<const VqdExample> dataset,
                                      const DatasetManifest& manifest, size_t batch_size);

std::vector<size_t> epoch_order(size_t n, uint64_t seed, size_t epoch);

}  // namespace vqd
