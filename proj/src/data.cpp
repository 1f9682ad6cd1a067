#include "vqd/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vqd/error.hpp"
#include "vqd/rng.hpp"

namespace vqd {

using nlohmann::json;

const std::array<std::string, kNumClasses> kClassCodes = {
    "LQI", "IVE", "INV", "DFF", "AMB", "SBJ", "SYN", "GRN", "SPM", "OTH"};

// ---- profiles -----------------------------------------------------------

GeneratorProfile GeneratorProfile::answer_dominant() {
  GeneratorProfile p;
  p.name = "answer-dominant";
  p.class_priors = {0.30, 0.45, 0.20, 0.12, 0.50, 0.10, 0.45, 0.40, 0.06, 0.08};
  p.answer_signal = 0.95;
  p.question_signal = 0.55;
  p.image_signal = 0.50;
  p.noise = 0.05;
  p.question_vocab = 128;
  p.answer_vocab = 128;
  p.t_min = 3;
  p.t_max = 7;
  p.n_regions = 4;
  p.d_img = 24;
  return p;
}

std::optional<GeneratorProfile> GeneratorProfile::by_name(const std::string& name) {
  if (name == "answer-dominant") return answer_dominant();
  return std::nullopt;
}

// ---- manifest -------------------------------------------------------------

static json profile_to_json(const GeneratorProfile& p) {
  json j;
  j["name"] = p.name;
  j["class_priors"] = p.class_priors;
  j["answer_signal"] = p.answer_signal;
  j["question_signal"] = p.question_signal;
  j["image_signal"] = p.image_signal;
  j["noise"] = p.noise;
  j["question_vocab"] = p.question_vocab;
  j["answer_vocab"] = p.answer_vocab;
  j["t_min"] = p.t_min;
  j["t_max"] = p.t_max;
  j["n_regions"] = p.n_regions;
  j["d_img"] = p.d_img;
  return j;
}

static GeneratorProfile profile_from_json(const json& j) {
  GeneratorProfile p;
  p.name = j.at("name").get<std::string>();
  auto priors = j.at("class_priors").get<std::vector<double>>();
  if (priors.size() != kNumClasses) {
    throw SchemaError("manifest: profile.class_priors: expected " +
                      std::to_string(kNumClasses) + " entries, got " +
                      std::to_string(priors.size()));
  }
  std::copy(priors.begin(), priors.end(), p.class_priors.begin());
  p.answer_signal = j.at("answer_signal").get<double>();
  p.question_signal = j.at("question_signal").get<double>();
  p.image_signal = j.at("image_signal").get<double>();
  p.noise = j.at("noise").get<double>();
  p.question_vocab = j.at("question_vocab").get<size_t>();
  p.answer_vocab = j.at("answer_vocab").get<size_t>();
  p.t_min = j.at("t_min").get<size_t>();
  p.t_max = j.at("t_max").get<size_t>();
  p.n_regions = j.at("n_regions").get<size_t>();
  p.d_img = j.at("d_img").get<size_t>();
  return p;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("manifest: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw SchemaError("manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.n_regions = j.at("r").get<size_t>();
    m.d_img = j.at("d_img").get<size_t>();
    m.question_vocab = j.at("question_vocab").get<size_t>();
    m.answer_vocab = j.at("answer_vocab").get<size_t>();
    auto names = j.at("class_names").get<std::vector<std::string>>();
    if (names.size() != kNumClasses) {
      throw SchemaError("manifest: class_names: expected " + std::to_string(kNumClasses) +
                        " entries, got " + std::to_string(names.size()));
    }
    std::copy(names.begin(), names.end(), m.class_names.begin());
    for (size_t c = 0; c < kNumClasses; ++c) {
      if (m.class_names[c] != kClassCodes[c]) {
        throw SchemaError("manifest: class_names[" + std::to_string(c) + "] is '" +
                          m.class_names[c] + "', expected '" + kClassCodes[c] + "'");
      }
    }
    if (j.contains("n_examples")) {
      for (auto& [split, count] : j.at("n_examples").items()) {
        m.n_examples[split] = count.get<size_t>();
      }
    }
    if (j.contains("profile") && !j.at("profile").is_null()) {
      m.profile = profile_from_json(j.at("profile"));
    }
    if (j.contains("seed") && !j.at("seed").is_null()) {
      m.seed = j.at("seed").get<uint64_t>();
    }
  } catch (const json::exception& e) {
    throw SchemaError("manifest " + path.string() + ": " + e.what());
  }
  if (m.n_regions == 0 || m.d_img == 0 || m.question_vocab < 2 || m.answer_vocab == 0) {
    throw SchemaError("manifest " + path.string() + ": dims must be positive (r=" +
                      std::to_string(m.n_regions) + ", d_img=" + std::to_string(m.d_img) +
                      ", question_vocab=" + std::to_string(m.question_vocab) +
                      ", answer_vocab=" + std::to_string(m.answer_vocab) + ")");
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  json j;
  j["r"] = m.n_regions;
  j["d_img"] = m.d_img;
  j["question_vocab"] = m.question_vocab;
  j["answer_vocab"] = m.answer_vocab;
  j["class_names"] = m.class_names;
  json counts = json::object();
  for (const auto& [split, count] : m.n_examples) counts[split] = count;
  j["n_examples"] = counts;
  if (m.profile) j["profile"] = profile_to_json(*m.profile);
  if (m.seed) j["seed"] = *m.seed;
  std::ofstream out(path);
  if (!out) throw SchemaError("manifest: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// ---- records ------------------------------------------------------------

static VqdExample record_from_json(const json& j, const DatasetManifest& m, size_t line_no) {
  auto fail = [line_no](const std::string& msg) -> void {
    throw SchemaError("record line " + std::to_string(line_no) + ": " + msg);
  };
  VqdExample ex;
  if (!j.contains("id") || !j.at("id").is_string()) fail("id: expected string");
  ex.id = j.at("id").get<std::string>();

  if (!j.contains("image_features")) fail("image_features: missing");
  const json& feats = j.at("image_features");
  if (!feats.is_array() || feats.size() != m.n_regions) {
    fail("image_features: expected " + std::to_string(m.n_regions) + " regions, got " +
         std::to_string(feats.is_array() ? feats.size() : 0));
  }
  ex.image_features.reserve(m.n_regions * m.d_img);
  for (const json& region : feats) {
    if (!region.is_array() || region.size() != m.d_img) {
      fail("image_features: region width != d_img=" + std::to_string(m.d_img));
    }
    for (const json& v : region) {
      if (!v.is_number()) fail("image_features: non-numeric entry");
      ex.image_features.push_back(v.get<double>());
    }
  }

  if (!j.contains("question_tokens")) fail("question_tokens: missing");
  const json& toks = j.at("question_tokens");
  if (!toks.is_array() || toks.empty()) fail("question_tokens: expected non-empty array");
  for (const json& t : toks) {
    if (!t.is_number_integer()) fail("question_tokens: non-integer entry");
    int id = t.get<int>();
    if (id < 1 || static_cast<size_t>(id) >= m.question_vocab) {
      fail("question_tokens: id " + std::to_string(id) + " outside [1, " +
           std::to_string(m.question_vocab) + ")");
    }
    ex.question_tokens.push_back(id);
  }

  if (!j.contains("answer_ids")) fail("answer_ids: missing");
  const json& ans = j.at("answer_ids");
  if (!ans.is_array() || ans.size() != kAnswersPerExample) {
    fail("answer_ids: expected " + std::to_string(kAnswersPerExample) + ", got " +
         std::to_string(ans.is_array() ? ans.size() : 0));
  }
  for (size_t i = 0; i < kAnswersPerExample; ++i) {
    if (!ans[i].is_number_integer()) fail("answer_ids: non-integer entry");
    int id = ans[i].get<int>();
    if (id < 0 || static_cast<size_t>(id) >= m.answer_vocab) {
      fail("answer_ids: id " + std::to_string(id) + " outside [0, " +
           std::to_string(m.answer_vocab) + ")");
    }
    ex.answer_ids[i] = id;
  }

  if (!j.contains("labels")) fail("labels: missing");
  const json& labels = j.at("labels");
  if (!labels.is_array() || labels.size() != kNumClasses) {
    fail("labels: expected " + std::to_string(kNumClasses) + ", got " +
         std::to_string(labels.is_array() ? labels.size() : 0));
  }
  for (size_t c = 0; c < kNumClasses; ++c) {
    if (!labels[c].is_number_integer()) fail("labels: non-integer entry");
    int y = labels[c].get<int>();
    if (y != 0 && y != 1) fail("labels: value " + std::to_string(y) + " not in {0,1}");
    ex.labels[c] = y;
  }
  return ex;
}

std::vector<VqdExample> load_records(const std::filesystem::path& path,
                                     const DatasetManifest& manifest) {
  return load_records(std::vector<std::filesystem::path>{path}, manifest);
}

std::vector<VqdExample> load_records(const std::vector<std::filesystem::path>& paths,
                                     const DatasetManifest& manifest) {
  std::vector<VqdExample> out;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw SchemaError("records: cannot open " + path.string());
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw SchemaError("records " + path.string() + " line " + std::to_string(line_no) +
                          ": " + e.what());
      }
      out.push_back(record_from_json(j, manifest, line_no));
    }
  }
  return out;
}

void write_records(const std::filesystem::path& path, std::span<const VqdExample> examples,
                   const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw SchemaError("records: cannot write " + path.string());
  const size_t r = manifest.n_regions, d = manifest.d_img;
  for (const VqdExample& ex : examples) {
    if (ex.image_features.size() != r * d) {
      throw SchemaError("write_records: example '" + ex.id + "' has " +
                        std::to_string(ex.image_features.size()) +
                        " feature values, manifest wants " + std::to_string(r * d));
    }
    json j;
    j["id"] = ex.id;
    json feats = json::array();
    for (size_t ri = 0; ri < r; ++ri) {
      json region = json::array();
      for (size_t di = 0; di < d; ++di) region.push_back(ex.image_features[ri * d + di]);
      feats.push_back(std::move(region));
    }
    j["image_features"] = std::move(feats);
    j["question_tokens"] = ex.question_tokens;
    j["answer_ids"] = ex.answer_ids;
    j["labels"] = ex.labels;
    out << j.dump() << "\n";
  }
}

// ---- synthetic generator ---------------------------------------------------

namespace {

constexpr size_t kAnswerPoolSize = 6;
constexpr size_t kQuestionPoolSize = 6;

uint64_t split_stream(const std::string& split) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : split) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Class-conditioned token pools are disjoint prefixes of the vocabulary;
// everything after them is background.
int answer_pool_token(size_t cls, Rng& rng) {
  return static_cast<int>(cls * kAnswerPoolSize + rng.index(kAnswerPoolSize));
}

int answer_background_token(size_t answer_vocab, Rng& rng) {
  const size_t base = kNumClasses * kAnswerPoolSize;
  return static_cast<int>(base + rng.index(answer_vocab - base));
}

int question_pool_token(size_t cls, Rng& rng) {
  return static_cast<int>(1 + cls * kQuestionPoolSize + rng.index(kQuestionPoolSize));
}

int question_background_token(size_t question_vocab, Rng& rng) {
  const size_t base = 1 + kNumClasses * kQuestionPoolSize;
  return static_cast<int>(base + rng.index(question_vocab - base));
}

std::vector<std::vector<double>> class_prototypes(const GeneratorProfile& p, uint64_t seed) {
  Rng proto_rng = Rng(seed).fork(0);
  std::vector<std::vector<double>> protos(kNumClasses, std::vector<double>(p.d_img));
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.d_img));
  for (auto& proto : protos) {
    for (double& v : proto) v = proto_rng.normal() * scale * 2.0;
  }
  return protos;
}

}  // namespace

SyntheticPools synthetic_pools() { return {kAnswerPoolSize, kQuestionPoolSize}; }

std::vector<VqdExample> generate_synthetic(const GeneratorProfile& p, size_t n, uint64_t seed,
                                           const std::string& split) {
  if (n == 0) throw ContractError("generate_synthetic: n must be >= 1");
  if (p.answer_vocab <= kNumClasses * kAnswerPoolSize) {
    throw ConfigError("generate_synthetic: answer_vocab " + std::to_string(p.answer_vocab) +
                      " leaves no background tokens");
  }
  if (p.question_vocab <= 1 + kNumClasses * kQuestionPoolSize) {
    throw ConfigError("generate_synthetic: question_vocab " + std::to_string(p.question_vocab) +
                      " leaves no background tokens");
  }
  if (p.t_min < 1 || p.t_max < p.t_min) {
    throw ConfigError("generate_synthetic: bad question length range [" +
                      std::to_string(p.t_min) + ", " + std::to_string(p.t_max) + "]");
  }

  auto protos = class_prototypes(p, seed);
  Rng rng = Rng(seed).fork(1 + split_stream(split));
  const double sigma = (1.0 - p.image_signal) * (1.0 + p.noise);

  std::vector<VqdExample> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    VqdExample ex;
    {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s-%06zu", split.c_str(), i);
      ex.id = buf;
    }

    std::vector<size_t> active;
    for (size_t c = 0; c < kNumClasses; ++c) {
      ex.labels[c] = rng.bernoulli(p.class_priors[c]) ? 1 : 0;
      if (ex.labels[c]) active.push_back(c);
    }

    // Answers: slot s leans on active class s % |active| so every active
    // class is covered when the signal fires on every slot.
    for (size_t s = 0; s < kAnswersPerExample; ++s) {
      int token;
      if (!active.empty() && rng.bernoulli(p.answer_signal)) {
        token = answer_pool_token(active[s % active.size()], rng);
      } else {
        token = answer_background_token(p.answer_vocab, rng);
      }
      if (p.noise > 0.0 && rng.bernoulli(p.noise)) {
        token = static_cast<int>(rng.index(p.answer_vocab));
      }
      ex.answer_ids[s] = token;
    }

    const size_t t_len = p.t_min + rng.index(p.t_max - p.t_min + 1);
    for (size_t s = 0; s < t_len; ++s) {
      int token;
      if (!active.empty() && rng.bernoulli(p.question_signal)) {
        token = question_pool_token(active[s % active.size()], rng);
      } else {
        token = question_background_token(p.question_vocab, rng);
      }
      if (p.noise > 0.0 && rng.bernoulli(p.noise)) {
        token = static_cast<int>(1 + rng.index(p.question_vocab - 1));
      }
      ex.question_tokens.push_back(token);
    }

    // Image: each region carries the prototype of one active class (regions
    // rotate through them) plus Gaussian noise shrunk by the image signal.
    // Pooling dilutes the per-class signal; attending over regions does not.
    ex.image_features.resize(p.n_regions * p.d_img);
    const size_t rot = active.empty() ? 0 : rng.index(active.size());
    for (size_t r = 0; r < p.n_regions; ++r) {
      const double* proto =
          active.empty() ? nullptr : protos[active[(r + rot) % active.size()]].data();
      for (size_t d = 0; d < p.d_img; ++d) {
        ex.image_features[r * p.d_img + d] =
            (proto ? proto[d] : 0.0) + sigma * rng.normal();
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

DatasetManifest synthetic_manifest(const GeneratorProfile& p,
                                   std::map<std::string, size_t> split_sizes, uint64_t seed) {
  DatasetManifest m;
  m.n_regions = p.n_regions;
  m.d_img = p.d_img;
  m.question_vocab = p.question_vocab;
  m.answer_vocab = p.answer_vocab;
  m.class_names = kClassCodes;
  m.n_examples = std::move(split_sizes);
  m.profile = p;
  m.seed = seed;
  return m;
}

// ---- batching -------------------------------------------------------------

Tensor Batch::step_mask(size_t t) const {
  std::vector<double> mask(size);
  for (size_t b = 0; b < size; ++b) mask[b] = t < lengths[b] ? 1.0 : 0.0;
  return Tensor::constant({size}, std::move(mask));
}

Tensor Batch::length_mask() const {
  std::vector<double> mask(size * max_len, 0.0);
  for (size_t b = 0; b < size; ++b) {
    for (size_t t = 0; t < lengths[b]; ++t) mask[b * max_len + t] = 1.0;
  }
  return Tensor::constant({size, max_len}, std::move(mask));
}

std::vector<int> Batch::token_column(size_t t) const {
  std::vector<int> col(size);
  for (size_t b = 0; b < size; ++b) col[b] = tokens[b * max_len + t];
  return col;
}

Batch make_batch(std::span<const VqdExample> dataset, std::span<const size_t> indices,
                 const DatasetManifest& manifest) {
  if (indices.empty()) throw ContractError("make_batch: empty index list");
  Batch batch;
  batch.size = indices.size();
  batch.n_regions = manifest.n_regions;
  batch.d_img = manifest.d_img;
  batch.max_len = 0;
  for (size_t idx : indices) {
    batch.max_len = std::max(batch.max_len, dataset[idx].question_tokens.size());
  }

  const size_t feat_len = batch.n_regions * batch.d_img;
  std::vector<double> labels(batch.size * kNumClasses);
  std::vector<double> feats;
  feats.reserve(batch.size * feat_len);
  batch.tokens.assign(batch.size * batch.max_len, kPadTokenId);
  batch.lengths.resize(batch.size);
  batch.answers.resize(batch.size * kAnswersPerExample);
  batch.ids.reserve(batch.size);

  for (size_t b = 0; b < batch.size; ++b) {
    const VqdExample& ex = dataset[indices[b]];
    if (ex.image_features.size() != feat_len) {
      throw SchemaError("make_batch: example '" + ex.id + "' feature length " +
                        std::to_string(ex.image_features.size()) + " != manifest r*d_img=" +
                        std::to_string(feat_len));
    }
    feats.insert(feats.end(), ex.image_features.begin(), ex.image_features.end());
    batch.lengths[b] = ex.question_tokens.size();
    std::copy(ex.question_tokens.begin(), ex.question_tokens.end(),
              batch.tokens.begin() + b * batch.max_len);
    std::copy(ex.answer_ids.begin(), ex.answer_ids.end(),
              batch.answers.begin() + b * kAnswersPerExample);
    for (size_t c = 0; c < kNumClasses; ++c) {
      labels[b * kNumClasses + c] = static_cast<double>(ex.labels[c]);
    }
    batch.ids.push_back(ex.id);
  }
  batch.labels = Tensor::constant({batch.size, kNumClasses}, std::move(labels));
  batch.image_features =
      Tensor::constant({batch.size * batch.n_regions, batch.d_img}, std::move(feats));
  return batch;
}

std::vector<size_t> epoch_order(size_t n, uint64_t seed, size_t epoch) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed).fork(0x5a5a0000ULL + epoch);
  rng.shuffle(order);
  return order;
}

static std::vector<Batch> chunk(std::span<const VqdExample> dataset,
                                const DatasetManifest& manifest,
                                std::span<const size_t> order, size_t batch_size) {
  std::vector<Batch> out;
  out.reserve((order.size() + batch_size - 1) / batch_size);
  for (size_t start = 0; start < order.size(); start += batch_size) {
    const size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(dataset, order.subspan(start, end - start), manifest));
  }
  return out;
}

std::vector<Batch> batches_shuffled(std::span<const VqdExample> dataset,
                                    const DatasetManifest& manifest, size_t batch_size,
                                    uint64_t seed, size_t epoch) {
  if (batch_size == 0) throw ContractError("batches_shuffled: batch_size must be >= 1");
  std::vector<size_t> order = epoch_order(dataset.size(), seed, epoch);
  return chunk(dataset, manifest, order, batch_size);
}

std::vector<Batch> batches_sequential(std::span<const VqdExample> dataset,
                                      const DatasetManifest& manifest, size_t batch_size) {
  if (batch_size == 0) throw ContractError("batches_sequential: batch_size must be >= 1");
  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  return chunk(dataset, manifest, order, batch_size);
}

}  // namespace vqd
