#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vqd/distill.hpp"

namespace vqd {

// Resolved experiment configuration. Defaults follow the reference training
// recipe: Adam lr 1e-2, gamma 0.1, teachers 5 epochs, students 20 epochs with
// one decay step at epoch 10, batch 32.
struct RunConfig {
  // model dims (data dims always come from the manifest and must agree with
  // any values pinned here)
  size_t d_word = 24;
  size_t d_hidden = 64;
  std::optional<size_t> d_img;
  std::optional<size_t> n_regions;
  std::optional<size_t> question_vocab;
  std::optional<size_t> answer_vocab;

  // training
  double learning_rate = 1e-2;
  double gamma = 0.1;
  std::vector<size_t> teacher_step_epochs = {};
  std::vector<size_t> student_step_epochs = {10};
  size_t batch_size = 32;
  size_t teacher_epochs = 5;
  size_t student_epochs = 20;

  // distillation
  DistillConfig distill;

  // data / io
  std::string data_dir;
  std::vector<std::string> train_records;  // defaults to <data_dir>/train.jsonl
  std::vector<std::string> val_records;    // defaults to <data_dir>/val.jsonl
  std::string out_dir;
  uint64_t seed = 0;

  static RunConfig from_json_file(const std::filesystem::path& path);
  void apply_json(const std::string& text, const std::string& origin);
  std::string to_json_string() const;

  std::filesystem::path manifest_path() const;
  std::vector<std::filesystem::path> split_paths(const std::string& split) const;

  // Checks paths exist and pinned dims match the manifest; returns the
  // manifest on success.
  DatasetManifest validate_against_data() const;
  ModelDims model_dims(const DatasetManifest& manifest) const;
};

}  // namespace vqd
