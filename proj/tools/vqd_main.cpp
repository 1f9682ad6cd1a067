// vqd: teacher/student training and evaluation for answer-difference
// prediction. Subcommands: gen-data, train-teacher, distill, eval.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vqd/checkpoint.hpp"
#include "vqd/data.hpp"
#include "vqd/distill.hpp"
#include "vqd/error.hpp"
#include "vqd/metrics.hpp"
#include "vqd/models.hpp"
#include "vqd/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct SeedFlag {
  uint64_t value = 0;
  bool from_flag = false;
};

// Precedence: --seed flag > MODAL_DISTILL_SEED env > config file.
uint64_t resolve_seed(const SeedFlag& flag, uint64_t config_seed) {
  if (flag.from_flag) return flag.value;
  if (const char* env = std::getenv("MODAL_DISTILL_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw vqd::ConfigError("MODAL_DISTILL_SEED is not an integer: " + std::string(env));
    }
  }
  return config_seed;
}

void ensure_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw vqd::ConfigError("cannot create output directory " + dir.string());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw vqd::ConfigError("cannot write " + path.string());
  out << text;
}

void echo_config(const vqd::RunConfig& cfg) {
  write_text_file(fs::path(cfg.out_dir) / "config.json", cfg.to_json_string() + "\n");
}

json epoch_log_json(const vqd::EpochLog& log, bool distill_fields) {
  json j;
  j["epoch"] = log.epoch;
  j["lr"] = log.learning_rate;
  j["bce"] = log.losses.bce;
  if (distill_fields) {
    for (size_t i = 0; i < 7; ++i) j["l2" + std::to_string(i + 1)] = log.losses.l2[i];
    j["answer_pred"] = log.losses.answer_pred;
  }
  j["total"] = log.losses.total;
  return j;
}

void write_epoch_logs(const fs::path& path, const std::vector<vqd::EpochLog>& logs,
                      bool distill_fields) {
  std::ostringstream out;
  for (const vqd::EpochLog& log : logs) {
    out << epoch_log_json(log, distill_fields).dump() << "\n";
  }
  write_text_file(path, out.str());
}

void write_report(const fs::path& prefix_dir, const std::string& stem,
                  const vqd::MetricsReport& report, const std::string& label) {
  write_text_file(prefix_dir / (stem + "_val_report.json"), report.to_json_string() + "\n");
  write_text_file(prefix_dir / (stem + "_val_report.txt"), report.to_text_table());
  std::cout << label << " validation metrics:\n" << report.to_text_table();
}

// ---- gen-data -----------------------------------------------------------

int cmd_gen_data(const std::string& profile_name, size_t n_train, size_t n_val,
                 const SeedFlag& seed_flag, const std::string& out_dir) {
  auto profile = vqd::GeneratorProfile::by_name(profile_name);
  if (!profile) throw vqd::ConfigError("unknown generator profile '" + profile_name + "'");
  if (n_train == 0) throw vqd::ConfigError("train count must be >= 1");
  if (n_val == 0) throw vqd::ConfigError("val count must be >= 1");
  const uint64_t seed = resolve_seed(seed_flag, 0);

  ensure_out_dir(out_dir);
  auto train = vqd::generate_synthetic(*profile, n_train, seed, "train");
  auto val = vqd::generate_synthetic(*profile, n_val, seed, "val");
  vqd::DatasetManifest manifest = vqd::synthetic_manifest(
      *profile, {{"train", n_train}, {"val", n_val}}, seed);

  vqd::write_records(fs::path(out_dir) / "train.jsonl", train, manifest);
  vqd::write_records(fs::path(out_dir) / "val.jsonl", val, manifest);
  vqd::write_manifest(fs::path(out_dir) / "manifest.json", manifest);

  std::array<size_t, vqd::kNumClasses> positives{};
  for (const auto& ex : train) {
    for (size_t c = 0; c < vqd::kNumClasses; ++c) positives[c] += ex.labels[c];
  }
  std::cout << "wrote " << n_train << " train / " << n_val << " val examples to " << out_dir
            << " (profile " << profile->name << ", seed " << seed << ")\n";
  std::cout << "train positives per class:";
  for (size_t c = 0; c < vqd::kNumClasses; ++c) {
    std::cout << " " << vqd::kClassCodes[c] << "=" << positives[c];
  }
  std::cout << "\n";
  return kExitOk;
}

// ---- shared data loading ---------------------------------------------------

struct LoadedData {
  vqd::DatasetManifest manifest;
  std::vector<vqd::VqdExample> train;
  std::vector<vqd::VqdExample> val;
};

LoadedData load_data(const vqd::RunConfig& cfg, bool need_train, bool need_val) {
  LoadedData data;
  data.manifest = cfg.validate_against_data();
  if (need_train) {
    data.train = vqd::load_records(cfg.split_paths("train"), data.manifest);
    if (data.train.empty()) throw vqd::ConfigError("train split is empty");
  }
  if (need_val) {
    data.val = vqd::load_records(cfg.split_paths("val"), data.manifest);
    if (data.val.empty()) throw vqd::ConfigError("val split is empty");
  }
  return data;
}

// ---- train-teacher -----------------------------------------------------------

int cmd_train_teacher(const std::string& modality, vqd::RunConfig cfg) {
  if (!vqd::is_teacher_kind(modality)) {
    throw vqd::ConfigError("unknown teacher modality '" + modality + "'");
  }
  LoadedData data = load_data(cfg, true, true);
  ensure_out_dir(cfg.out_dir);
  echo_config(cfg);

  vqd::ModelDims dims = cfg.model_dims(data.manifest);
  auto model = vqd::make_model(modality, dims, cfg.seed);

  vqd::TrainerOptions options;
  options.epochs = cfg.teacher_epochs;
  options.batch_size = cfg.batch_size;
  options.schedule = {cfg.learning_rate, cfg.gamma, cfg.teacher_step_epochs};
  options.seed = cfg.seed;
  auto logs = vqd::pretrain_teacher(*model, data.train, data.manifest, options);

  const fs::path out(cfg.out_dir);
  vqd::save_checkpoint(out / (modality + ".ckpt"), *model, cfg.seed, options.epochs);
  write_epoch_logs(out / (modality + "_train_log.jsonl"), logs, false);
  vqd::MetricsReport report = vqd::evaluate(*model, data.val, data.manifest, cfg.batch_size);
  write_report(out, modality, report, modality + " teacher");
  return kExitOk;
}

// ---- distill ------------------------------------------------------------------

int cmd_distill(const std::string& teachers_csv, bool with_intermediate,
                const std::string& teacher_dir, vqd::RunConfig cfg) {
  cfg.distill.teacher_set.clear();
  std::stringstream ss(teachers_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) cfg.distill.teacher_set.insert(item);
  }
  cfg.distill.with_intermediate = with_intermediate;
  cfg.distill.validate();

  LoadedData data = load_data(cfg, true, true);
  ensure_out_dir(cfg.out_dir);
  echo_config(cfg);

  vqd::ModelDims dims = cfg.model_dims(data.manifest);

  std::vector<std::unique_ptr<vqd::Model>> teacher_storage;
  std::map<std::string, const vqd::Model*> teachers;
  for (const std::string& kind : cfg.distill.teacher_set) {
    const fs::path ckpt_path = fs::path(teacher_dir) / (kind + ".ckpt");
    if (!fs::exists(ckpt_path)) {
      throw vqd::ConfigError("missing teacher checkpoint " + ckpt_path.string());
    }
    auto teacher = vqd::load_model(ckpt_path);
    vqd::check_dims_against_manifest(teacher->dims(), data.manifest);
    if (!(teacher->dims() == dims)) {
      throw vqd::ConfigError("teacher checkpoint " + ckpt_path.string() +
                             " dims do not match the configured student dims");
    }
    teachers[kind] = teacher.get();
    teacher_storage.push_back(std::move(teacher));
  }

  vqd::Student student(dims, cfg.seed);
  vqd::TrainerOptions options;
  options.epochs = cfg.student_epochs;
  options.batch_size = cfg.batch_size;
  options.schedule = {cfg.learning_rate, cfg.gamma, cfg.student_step_epochs};
  options.seed = cfg.seed;
  auto logs =
      vqd::train_student(student, teachers, data.train, data.manifest, cfg.distill, options);

  const fs::path out(cfg.out_dir);
  vqd::save_checkpoint(out / "student.ckpt", student, cfg.seed, options.epochs);
  write_epoch_logs(out / "student_train_log.jsonl", logs, true);
  vqd::MetricsReport report = vqd::evaluate(student, data.val, data.manifest, cfg.batch_size);

  std::string label;
  if (cfg.distill.teacher_set.empty()) {
    label = "Baseline";
  } else {
    label = "Student (teachers:";
    for (const std::string& kind : cfg.distill.teacher_set) label += " " + kind;
    if (cfg.distill.with_intermediate) label += ", w/I";
    label += ")";
  }
  write_report(out, "student", report, label);
  return kExitOk;
}

// ---- eval ---------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint_path, const std::string& split,
             vqd::RunConfig cfg, const std::string& report_prefix) {
  if (!fs::exists(checkpoint_path)) {
    throw vqd::ConfigError("checkpoint not found: " + checkpoint_path);
  }
  vqd::DatasetManifest manifest = cfg.validate_against_data();
  auto model = vqd::load_model(checkpoint_path);
  vqd::check_dims_against_manifest(model->dims(), manifest);
  auto examples = vqd::load_records(cfg.split_paths(split), manifest);
  if (examples.empty()) throw vqd::ConfigError("split '" + split + "' is empty");

  vqd::MetricsReport report = vqd::evaluate(*model, examples, manifest, cfg.batch_size);
  fs::path prefix(report_prefix);
  if (prefix.has_parent_path()) ensure_out_dir(prefix.parent_path());
  write_text_file(prefix.string() + ".json", report.to_json_string() + "\n");
  write_text_file(prefix.string() + ".txt", report.to_text_table());
  std::cout << report.to_text_table();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"answer-difference distillation engine"};
  app.require_subcommand(1);

  std::string config_path;
  SeedFlag seed_flag;
  app.add_option("--config", config_path, "JSON config file (flags override it)")
      ->expected(1);
  auto* seed_opt = app.add_option("--seed", seed_flag.value, "seed override");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->fallthrough();
  std::string profile_name = "answer-dominant";
  size_t n_train = 2000, n_val = 500;
  std::string gen_out;
  gen->add_option("--profile", profile_name, "generator profile name");
  gen->add_option("--train", n_train, "number of train examples");
  gen->add_option("--val", n_val, "number of val examples");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train-teacher
  auto* tt = app.add_subcommand("train-teacher", "pretrain one teacher with BCE");
  tt->fallthrough();
  std::string modality;
  std::string tt_data, tt_out;
  size_t tt_epochs = 0;
  bool tt_epochs_set = false;
  tt->add_option("--modality", modality, "visual|question|answer|big")->required();
  tt->add_option("--data", tt_data, "dataset directory");
  tt->add_option("--out", tt_out, "output directory");
  tt->add_option("--epochs", tt_epochs, "teacher epochs")->each([&](const std::string&) {
    tt_epochs_set = true;
  });

  // distill
  auto* dist = app.add_subcommand("distill", "train the student against teachers");
  dist->fallthrough();
  std::string teachers_csv;
  bool with_intermediate = false;
  std::string teacher_dir, dist_data, dist_out;
  size_t dist_epochs = 0;
  bool dist_epochs_set = false;
  dist->add_option("--teachers", teachers_csv,
                   "comma list from {visual,question,answer,big}; empty = baseline");
  dist->add_flag("--with-intermediate", with_intermediate, "add intermediary feature losses");
  dist->add_option("--teacher-dir", teacher_dir, "directory with <kind>.ckpt files");
  dist->add_option("--data", dist_data, "dataset directory");
  dist->add_option("--out", dist_out, "output directory");
  dist->add_option("--epochs", dist_epochs, "student epochs")->each([&](const std::string&) {
    dist_epochs_set = true;
  });

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ev->fallthrough();
  std::string ckpt_path, split = "val", ev_data, report_prefix;
  ev->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  ev->add_option("--split", split, "train|val");
  ev->add_option("--data", ev_data, "dataset directory");
  ev->add_option("--report", report_prefix, "report path prefix (.json/.txt added)")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    seed_flag.from_flag = seed_opt->count() > 0;
    vqd::RunConfig cfg;
    if (!config_path.empty()) cfg = vqd::RunConfig::from_json_file(config_path);
    cfg.seed = resolve_seed(seed_flag, cfg.seed);

    if (gen->parsed()) {
      return cmd_gen_data(profile_name, n_train, n_val, seed_flag, gen_out);
    }
    if (tt->parsed()) {
      if (!tt_data.empty()) cfg.data_dir = tt_data;
      if (!tt_out.empty()) cfg.out_dir = tt_out;
      if (tt_epochs_set) cfg.teacher_epochs = tt_epochs;
      if (cfg.out_dir.empty()) throw vqd::ConfigError("--out (or config out_dir) is required");
      return cmd_train_teacher(modality, std::move(cfg));
    }
    if (dist->parsed()) {
      if (!dist_data.empty()) cfg.data_dir = dist_data;
      if (!dist_out.empty()) cfg.out_dir = dist_out;
      if (dist_epochs_set) cfg.student_epochs = dist_epochs;
      if (cfg.out_dir.empty()) throw vqd::ConfigError("--out (or config out_dir) is required");
      if (teacher_dir.empty() && !teachers_csv.empty()) {
        throw vqd::ConfigError("--teacher-dir is required when teachers are selected");
      }
      return cmd_distill(teachers_csv, with_intermediate, teacher_dir, std::move(cfg));
    }
    if (ev->parsed()) {
      if (!ev_data.empty()) cfg.data_dir = ev_data;
      return cmd_eval(ckpt_path, split, std::move(cfg), report_prefix);
    }
    throw vqd::ConfigError("no subcommand");
  } catch (const vqd::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
