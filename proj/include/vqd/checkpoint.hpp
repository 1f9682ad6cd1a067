#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vqd/models.hpp"

namespace vqd {

// Binary model snapshot. Parameters are stored sorted by name so that
// save -> load -> save is byte-idempotent. All integers and the row-major
// f64 payloads are little-endian.
struct Checkpoint {
  uint32_t version = 1;
  std::string kind;
  ModelDims dims;
  uint64_t seed = 0;
  uint64_t epochs = 0;
  std::vector<std::pair<std::string, std::vector<double>>> params;  // name-sorted
  std::vector<Shape> param_shapes;                                  // aligned with params
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, uint64_t seed,
                     uint64_t epochs);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the model and overwrites its parameters; names and shapes must
// match the architecture exactly.
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

// Rejects checkpoints whose dims disagree with the dataset manifest.
void check_dims_against_manifest(const ModelDims& dims, const DatasetManifest& manifest);

}  // namespace vqd
