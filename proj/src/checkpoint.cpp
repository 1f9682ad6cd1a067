#include "vqd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "vqd/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace vqd {

namespace {

constexpr char kMagic[8] = {'V', 'Q', 'D', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw SchemaError("checkpoint: truncated while reading " + what);
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& what) {
  uint32_t len = read_pod<uint32_t>(in, what + " length");
  if (len > (1u << 20)) throw SchemaError("checkpoint: implausible " + what + " length");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw SchemaError("checkpoint: truncated while reading " + what);
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, uint64_t seed,
                     uint64_t epochs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SchemaError("checkpoint: cannot write " + path.string());

  std::vector<NamedParam> params = model.named_params();
  std::sort(params.begin(), params.end(),
            [](const NamedParam& a, const NamedParam& b) { return a.first < b.first; });

  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, 1);
  write_string(out, model.kind());
  const ModelDims& d = model.dims();
  for (uint64_t v : {d.d_img, d.n_regions, d.d_word, d.d_hidden, d.n_classes, d.question_vocab,
                     d.answer_vocab, d.answers_per_example}) {
    write_pod<uint64_t>(out, v);
  }
  write_pod<uint64_t>(out, seed);
  write_pod<uint64_t>(out, epochs);
  write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    write_string(out, name);
    write_pod<uint32_t>(out, static_cast<uint32_t>(tensor.rank()));
    for (size_t dim : tensor.shape()) write_pod<uint64_t>(out, dim);
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
  if (!out) throw SchemaError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("checkpoint: cannot open " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw SchemaError("checkpoint " + path.string() + ": bad magic");
  }
  Checkpoint ckpt;
  ckpt.version = read_pod<uint32_t>(in, "version");
  if (ckpt.version != 1) {
    throw SchemaError("checkpoint " + path.string() + ": unsupported version " +
                      std::to_string(ckpt.version));
  }
  ckpt.kind = read_string(in, "kind");
  ckpt.dims.d_img = read_pod<uint64_t>(in, "d_img");
  ckpt.dims.n_regions = read_pod<uint64_t>(in, "n_regions");
  ckpt.dims.d_word = read_pod<uint64_t>(in, "d_word");
  ckpt.dims.d_hidden = read_pod<uint64_t>(in, "d_hidden");
  ckpt.dims.n_classes = read_pod<uint64_t>(in, "n_classes");
  ckpt.dims.question_vocab = read_pod<uint64_t>(in, "question_vocab");
  ckpt.dims.answer_vocab = read_pod<uint64_t>(in, "answer_vocab");
  ckpt.dims.answers_per_example = read_pod<uint64_t>(in, "answers_per_example");
  ckpt.seed = read_pod<uint64_t>(in, "seed");
  ckpt.epochs = read_pod<uint64_t>(in, "epochs");
  const uint32_t n_params = read_pod<uint32_t>(in, "param count");
  for (uint32_t i = 0; i < n_params; ++i) {
    std::string name = read_string(in, "param name");
    const uint32_t rank = read_pod<uint32_t>(in, name + " rank");
    if (rank > 4) throw SchemaError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    size_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      shape[r] = read_pod<uint64_t>(in, name + " dim");
      numel *= shape[r];
    }
    std::vector<double> values(numel);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw SchemaError("checkpoint: truncated while reading " + name);
    ckpt.params.emplace_back(std::move(name), std::move(values));
    ckpt.param_shapes.push_back(std::move(shape));
  }
  return ckpt;
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
  std::unique_ptr<Model> model = make_model(ckpt.kind, ckpt.dims, ckpt.seed);
  std::vector<NamedParam> params = model->named_params();
  std::sort(params.begin(), params.end(),
            [](const NamedParam& a, const NamedParam& b) { return a.first < b.first; });
  if (params.size() != ckpt.params.size()) {
    throw SchemaError("checkpoint: model '" + ckpt.kind + "' expects " +
                      std::to_string(params.size()) + " parameters, file has " +
                      std::to_string(ckpt.params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, tensor] = params[i];
    const auto& [ckpt_name, values] = ckpt.params[i];
    if (name != ckpt_name) {
      throw SchemaError("checkpoint: parameter '" + ckpt_name + "' does not match model's '" +
                        name + "'");
    }
    if (tensor.shape() != ckpt.param_shapes[i] || tensor.numel() != values.size()) {
      throw SchemaError("checkpoint: parameter '" + name + "' shape " +
                        shape_str(ckpt.param_shapes[i]) + " does not match model's " +
                        shape_str(tensor.shape()));
    }
    std::copy(values.begin(), values.end(), tensor.values_mut().begin());
  }
  return model;
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  return model_from_checkpoint(load_checkpoint(path));
}

void check_dims_against_manifest(const ModelDims& dims, const DatasetManifest& manifest) {
  if (dims.d_img != manifest.d_img || dims.n_regions != manifest.n_regions ||
      dims.question_vocab != manifest.question_vocab ||
      dims.answer_vocab != manifest.answer_vocab) {
    throw SchemaError("checkpoint dims (d_img=" + std::to_string(dims.d_img) + ", r=" +
                      std::to_string(dims.n_regions) + ", question_vocab=" +
                      std::to_string(dims.question_vocab) + ", answer_vocab=" +
                      std::to_string(dims.answer_vocab) + ") do not match manifest (d_img=" +
                      std::to_string(manifest.d_img) + ", r=" +
                      std::to_string(manifest.n_regions) + ", question_vocab=" +
                      std::to_string(manifest.question_vocab) + ", answer_vocab=" +
                      std::to_string(manifest.answer_vocab) + ")");
  }
}

}  // namespace vqd
