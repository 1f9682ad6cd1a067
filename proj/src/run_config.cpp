#include "vqd/run_config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vqd/error.hpp"

namespace vqd {

using nlohmann::json;

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig cfg;
  cfg.apply_json(buf.str(), path.string());
  return cfg;
}

void RunConfig::apply_json(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + origin + ": " + e.what());
  }
  try {
    if (j.contains("dims")) {
      const json& d = j.at("dims");
      if (d.contains("d_word")) d_word = d.at("d_word").get<size_t>();
      if (d.contains("d_hidden")) d_hidden = d.at("d_hidden").get<size_t>();
      if (d.contains("d_img")) d_img = d.at("d_img").get<size_t>();
      if (d.contains("r")) n_regions = d.at("r").get<size_t>();
      if (d.contains("question_vocab")) question_vocab = d.at("question_vocab").get<size_t>();
      if (d.contains("answer_vocab")) answer_vocab = d.at("answer_vocab").get<size_t>();
    }
    if (j.contains("training")) {
      const json& t = j.at("training");
      if (t.contains("lr")) learning_rate = t.at("lr").get<double>();
      if (t.contains("gamma")) gamma = t.at("gamma").get<double>();
      if (t.contains("teacher_step_epochs")) {
        teacher_step_epochs = t.at("teacher_step_epochs").get<std::vector<size_t>>();
      }
      if (t.contains("student_step_epochs")) {
        student_step_epochs = t.at("student_step_epochs").get<std::vector<size_t>>();
      }
      if (t.contains("batch_size")) batch_size = t.at("batch_size").get<size_t>();
      if (t.contains("teacher_epochs")) teacher_epochs = t.at("teacher_epochs").get<size_t>();
      if (t.contains("student_epochs")) student_epochs = t.at("student_epochs").get<size_t>();
    }
    if (j.contains("distill")) {
      const json& d = j.at("distill");
      if (d.contains("teachers")) {
        distill.teacher_set.clear();
        for (const auto& t : d.at("teachers")) {
          distill.teacher_set.insert(t.get<std::string>());
        }
      }
      if (d.contains("with_intermediate")) {
        distill.with_intermediate = d.at("with_intermediate").get<bool>();
      }
      if (d.contains("lambda_bce")) distill.weights.bce = d.at("lambda_bce").get<double>();
      if (d.contains("lambda_l2")) {
        auto l = d.at("lambda_l2").get<std::vector<double>>();
        if (l.size() != 7) {
          throw ConfigError("config " + origin + ": lambda_l2 must have 7 entries");
        }
        std::copy(l.begin(), l.end(), distill.weights.l2.begin());
      }
      if (d.contains("lambda_answer")) {
        distill.weights.answer_pred = d.at("lambda_answer").get<double>();
      }
    }
    if (j.contains("data_dir")) data_dir = j.at("data_dir").get<std::string>();
    if (j.contains("train_records")) {
      train_records = j.at("train_records").get<std::vector<std::string>>();
    }
    if (j.contains("val_records")) {
      val_records = j.at("val_records").get<std::vector<std::string>>();
    }
    if (j.contains("out_dir")) out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("seed")) seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError("config " + origin + ": " + e.what());
  }
}

std::string RunConfig::to_json_string() const {
  json j;
  j["dims"]["d_word"] = d_word;
  j["dims"]["d_hidden"] = d_hidden;
  if (d_img) j["dims"]["d_img"] = *d_img;
  if (n_regions) j["dims"]["r"] = *n_regions;
  if (question_vocab) j["dims"]["question_vocab"] = *question_vocab;
  if (answer_vocab) j["dims"]["answer_vocab"] = *answer_vocab;
  j["training"]["lr"] = learning_rate;
  j["training"]["gamma"] = gamma;
  j["training"]["teacher_step_epochs"] = teacher_step_epochs;
  j["training"]["student_step_epochs"] = student_step_epochs;
  j["training"]["batch_size"] = batch_size;
  j["training"]["teacher_epochs"] = teacher_epochs;
  j["training"]["student_epochs"] = student_epochs;
  j["distill"]["teachers"] = distill.teacher_set;
  j["distill"]["with_intermediate"] = distill.with_intermediate;
  j["distill"]["lambda_bce"] = distill.weights.bce;
  j["distill"]["lambda_l2"] = distill.weights.l2;
  j["distill"]["lambda_answer"] = distill.weights.answer_pred;
  j["data_dir"] = data_dir;
  j["train_records"] = train_records;
  j["val_records"] = val_records;
  j["out_dir"] = out_dir;
  j["seed"] = seed;
  return j.dump(2);
}

std::filesystem::path RunConfig::manifest_path() const {
  return std::filesystem::path(data_dir) / "manifest.json";
}

std::vector<std::filesystem::path> RunConfig::split_paths(const std::string& split) const {
  const std::vector<std::string>& overrides = split == "train" ? train_records : val_records;
  std::vector<std::filesystem::path> out;
  if (!overrides.empty()) {
    for (const std::string& p : overrides) out.emplace_back(p);
  } else {
    out.push_back(std::filesystem::path(data_dir) / (split + ".jsonl"));
  }
  return out;
}

DatasetManifest RunConfig::validate_against_data() const {
  if (data_dir.empty()) throw ConfigError("config: data_dir is required");
  if (!std::filesystem::exists(manifest_path())) {
    throw ConfigError("config: manifest not found at " + manifest_path().string());
  }
  DatasetManifest manifest = load_manifest(manifest_path());
  auto check = [](const char* name, std::optional<size_t> pinned, size_t actual) {
    if (pinned && *pinned != actual) {
      throw ConfigError("config: dims." + std::string(name) + "=" + std::to_string(*pinned) +
                        " does not match manifest value " + std::to_string(actual));
    }
  };
  check("d_img", d_img, manifest.d_img);
  check("r", n_regions, manifest.n_regions);
  check("question_vocab", question_vocab, manifest.question_vocab);
  check("answer_vocab", answer_vocab, manifest.answer_vocab);
  return manifest;
}

ModelDims RunConfig::model_dims(const DatasetManifest& manifest) const {
  return dims_from_manifest(manifest, d_word, d_hidden);
}

}  // namespace vqd
