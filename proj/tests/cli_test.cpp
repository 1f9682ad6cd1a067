#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "test_support.hpp"
#include "vqd/checkpoint.hpp"
#include "vqd/data.hpp"
#include "vqd/error.hpp"
#include "vqd/models.hpp"

using namespace vqd;
using namespace vqd::testing;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const std::filesystem::path& capture_dir) {
  static int counter = 0;
  const std::filesystem::path log = capture_dir / ("cli-out-" + std::to_string(counter++));
  const std::string cmd =
      std::string(VQD_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  result.output = read_file(log);
  return result;
}

void make_tiny_dataset(const std::filesystem::path& dir, const TempDir& scratch) {
  RunResult gen = run_cli("gen-data --train 60 --val 30 --seed 11 --out " + dir.string(),
                          scratch.path());
  REQUIRE(gen.exit_code == 0);
}

}  // namespace

TEST_CASE("gen-data: files, determinism, bad counts, bad profile") {
  TempDir dir("gen");
  const auto d1 = dir.path() / "d1";
  const auto d2 = dir.path() / "d2";

  RunResult r1 = run_cli("gen-data --train 40 --val 20 --seed 7 --out " + d1.string(),
                         dir.path());
  CHECK(r1.exit_code == 0);
  CHECK(std::filesystem::exists(d1 / "train.jsonl"));
  CHECK(std::filesystem::exists(d1 / "val.jsonl"));
  CHECK(std::filesystem::exists(d1 / "manifest.json"));

  RunResult r2 = run_cli("gen-data --train 40 --val 20 --seed 7 --out " + d2.string(),
                         dir.path());
  CHECK(r2.exit_code == 0);
  CHECK(read_file(d1 / "train.jsonl") == read_file(d2 / "train.jsonl"));
  CHECK(read_file(d1 / "val.jsonl") == read_file(d2 / "val.jsonl"));
  CHECK(read_file(d1 / "manifest.json") == read_file(d2 / "manifest.json"));

  RunResult bad = run_cli("gen-data --train 0 --val 20 --out " + (dir.path() / "x").string(),
                          dir.path());
  CHECK(bad.exit_code == 2);
  CHECK(bad.output.find("train count must be >= 1") != std::string::npos);

  RunResult bad_profile = run_cli(
      "gen-data --profile nonsense --train 5 --val 5 --out " + (dir.path() / "y").string(),
      dir.path());
  CHECK(bad_profile.exit_code == 2);
}

TEST_CASE("seed precedence: flag over environment") {
  TempDir dir("seedprec");
  const auto with_flag = dir.path() / "flag";
  const auto with_env = dir.path() / "env";
  const auto with_both = dir.path() / "both";

  RunResult a = run_cli("gen-data --train 10 --val 5 --seed 21 --out " + with_flag.string(),
                        dir.path());
  REQUIRE(a.exit_code == 0);

  setenv("MODAL_DISTILL_SEED", "21", 1);
  RunResult b = run_cli("gen-data --train 10 --val 5 --out " + with_env.string(), dir.path());
  RunResult c = run_cli("gen-data --train 10 --val 5 --seed 33 --out " + with_both.string(),
                        dir.path());
  unsetenv("MODAL_DISTILL_SEED");
  REQUIRE(b.exit_code == 0);
  REQUIRE(c.exit_code == 0);

  CHECK(read_file(with_flag / "train.jsonl") == read_file(with_env / "train.jsonl"));
  CHECK(read_file(with_flag / "train.jsonl") != read_file(with_both / "train.jsonl"));
}

TEST_CASE("train-teacher: runs, zero-epoch checkpoint equals init, rerun identical") {
  TempDir dir("teacher");
  const auto data = dir.path() / "data";
  make_tiny_dataset(data, dir);

  const auto out0 = dir.path() / "zero";
  RunResult r0 = run_cli("train-teacher --modality answer --epochs 0 --seed 5 --data " +
                             data.string() + " --out " + out0.string(),
                         dir.path());
  REQUIRE(r0.exit_code == 0);
  Checkpoint ckpt = load_checkpoint(out0 / "answer.ckpt");
  auto fresh = make_model("answer", ckpt.dims, 5);
  auto params = fresh->named_params();
  std::sort(params.begin(), params.end(),
            [](const NamedParam& a, const NamedParam& b) { return a.first < b.first; });
  REQUIRE(params.size() == ckpt.params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i].first == ckpt.params[i].first);
    CHECK(std::equal(params[i].second.values().begin(), params[i].second.values().end(),
                     ckpt.params[i].second.begin()));
  }

  const auto out1 = dir.path() / "one";
  const auto out2 = dir.path() / "two";
  std::string train_args = "train-teacher --modality answer --epochs 2 --seed 5 --data " +
                           data.string() + " --out ";
  REQUIRE(run_cli(train_args + out1.string(), dir.path()).exit_code == 0);
  REQUIRE(run_cli(train_args + out2.string(), dir.path()).exit_code == 0);
  CHECK(read_file(out1 / "answer.ckpt") == read_file(out2 / "answer.ckpt"));
  CHECK(read_file(out1 / "answer_train_log.jsonl") ==
        read_file(out2 / "answer_train_log.jsonl"));
  CHECK(read_file(out1 / "answer_val_report.json") ==
        read_file(out2 / "answer_val_report.json"));
  CHECK(read_file(out1 / "answer_val_report.txt") ==
        read_file(out2 / "answer_val_report.txt"));
}

TEST_CASE("train-teacher on records missing answers: schema error, exit 2") {
  TempDir dir("noanswers");
  const auto data = dir.path() / "data";
  make_tiny_dataset(data, dir);

  // Strip the answer_ids key from every record.
  std::ifstream in(data / "train.jsonl");
  std::string line, rewritten;
  while (std::getline(in, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    REQUIRE(j.contains("answer_ids"));
    j.erase("answer_ids");
    rewritten += j.dump() + "\n";
  }
  in.close();
  std::ofstream(data / "train.jsonl", std::ios::trunc) << rewritten;

  RunResult r = run_cli("train-teacher --modality big --epochs 1 --data " + data.string() +
                            " --out " + (dir.path() / "out").string(),
                        dir.path());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("answer_ids") != std::string::npos);
}

TEST_CASE("distill: mapping flags to configurations and baseline label") {
  TempDir dir("distill");
  const auto data = dir.path() / "data";
  make_tiny_dataset(data, dir);
  const auto teachers = dir.path() / "teachers";

  REQUIRE(run_cli("train-teacher --modality big --epochs 1 --seed 3 --data " + data.string() +
                      " --out " + teachers.string(),
                  dir.path())
              .exit_code == 0);

  const auto base_out = dir.path() / "baseline";
  RunResult baseline = run_cli("distill --teachers \"\" --epochs 1 --seed 3 --data " +
                                   data.string() + " --out " + base_out.string(),
                               dir.path());
  REQUIRE(baseline.exit_code == 0);
  CHECK(baseline.output.find("Baseline") != std::string::npos);
  CHECK(std::filesystem::exists(base_out / "student.ckpt"));

  const auto big_out = dir.path() / "big";
  RunResult big = run_cli("distill --teachers big --with-intermediate --epochs 1 --seed 3" +
                              std::string(" --teacher-dir ") + teachers.string() + " --data " +
                              data.string() + " --out " + big_out.string(),
                          dir.path());
  REQUIRE(big.exit_code == 0);
  // L23, L24, L27 active; the single-modality intermediates stay zero.
  std::string log = read_file(big_out / "student_train_log.jsonl");
  auto field = [&log](const std::string& key) {
    const auto pos = log.find("\"" + key + "\":");
    REQUIRE(pos != std::string::npos);
    return log.substr(pos + key.size() + 3, 32);
  };
  CHECK(field("l21").substr(0, 4) == "0.0,");
  CHECK(field("l22").substr(0, 4) == "0.0,");
  CHECK(field("l23").substr(0, 4) != "0.0,");
  CHECK(field("l27").substr(0, 4) != "0.0,");

  RunResult missing = run_cli("distill --teachers visual --epochs 1 --teacher-dir " +
                                  teachers.string() + " --data " + data.string() + " --out " +
                                  (dir.path() / "missing").string(),
                              dir.path());
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("visual.ckpt") != std::string::npos);
}

TEST_CASE("eval: determinism, header, missing checkpoint") {
  TempDir dir("eval");
  const auto data = dir.path() / "data";
  make_tiny_dataset(data, dir);
  const auto out = dir.path() / "t";
  REQUIRE(run_cli("train-teacher --modality visual --epochs 1 --seed 2 --data " +
                      data.string() + " --out " + out.string(),
                  dir.path())
              .exit_code == 0);

  const std::string ckpt = (out / "visual.ckpt").string();
  const std::string rep1 = (dir.path() / "r1").string();
  const std::string rep2 = (dir.path() / "r2").string();
  RunResult e1 = run_cli("eval --checkpoint " + ckpt + " --data " + data.string() +
                             " --split val --report " + rep1,
                         dir.path());
  RunResult e2 = run_cli("eval --checkpoint " + ckpt + " --data " + data.string() +
                             " --split val --report " + rep2,
                         dir.path());
  REQUIRE(e1.exit_code == 0);
  REQUIRE(e2.exit_code == 0);
  CHECK(read_file(rep1 + ".json") == read_file(rep2 + ".json"));
  CHECK(read_file(rep1 + ".txt") == read_file(rep2 + ".txt"));

  std::istringstream table(read_file(rep1 + ".txt"));
  std::string header;
  std::getline(table, header);
  std::istringstream words(header);
  std::vector<std::string> tokens;
  std::string w;
  while (words >> w) tokens.push_back(w);
  CHECK(tokens == std::vector<std::string>{"Overall", "LQI", "IVE", "INV", "DFF", "AMB",
                                           "SBJ", "SYN", "GRN", "SPM", "OTH"});

  RunResult missing = run_cli("eval --checkpoint /nonexistent/model.ckpt --data " +
                                  data.string() + " --report " + rep1,
                              dir.path());
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("/nonexistent/model.ckpt") != std::string::npos);
}

TEST_CASE("checkpoint save-load-save is byte idempotent") {
  TempDir dir("ckpt");
  DatasetManifest m;
  m.n_regions = 2;
  m.d_img = 4;
  m.question_vocab = 11;
  m.answer_vocab = 9;
  m.class_names = kClassCodes;
  ModelDims dims = dims_from_manifest(m, 3, 5);

  auto model = make_model("big", dims, 123);
  const auto p1 = dir.path() / "a.ckpt";
  const auto p2 = dir.path() / "b.ckpt";
  save_checkpoint(p1, *model, 123, 4);
  auto reloaded = load_model(p1);
  save_checkpoint(p2, *reloaded, 123, 4);
  CHECK(read_file(p1) == read_file(p2));

  Checkpoint ckpt = load_checkpoint(p1);
  CHECK(ckpt.kind == "big");
  CHECK(ckpt.seed == 123);
  CHECK(ckpt.epochs == 4);
  CHECK(ckpt.dims == dims);

  // Dim mismatch against a different manifest is rejected.
  DatasetManifest other = m;
  other.d_img = 7;
  CHECK_THROWS_AS(check_dims_against_manifest(ckpt.dims, other), SchemaError);
}
