#include "vqd/models.hpp"

#include <algorithm>

#include "vqd/error.hpp"

namespace vqd {

void ModelDims::validate() const {
  if (n_classes != kNumClasses) {
    throw ContractError("ModelDims: n_classes must be " + std::to_string(kNumClasses) +
                        ", got " + std::to_string(n_classes));
  }
  if (answers_per_example != kAnswersPerExample) {
    throw ContractError("ModelDims: answers_per_example must be " +
                        std::to_string(kAnswersPerExample) + ", got " +
                        std::to_string(answers_per_example));
  }
  if (d_img == 0 || n_regions == 0 || d_word == 0 || d_hidden == 0 || question_vocab < 2 ||
      answer_vocab == 0) {
    throw ContractError("ModelDims: all dims must be positive");
  }
}

ModelDims dims_from_manifest(const DatasetManifest& m, size_t d_word, size_t d_hidden) {
  ModelDims dims;
  dims.d_img = m.d_img;
  dims.n_regions = m.n_regions;
  dims.d_word = d_word;
  dims.d_hidden = d_hidden;
  dims.question_vocab = m.question_vocab;
  dims.answer_vocab = m.answer_vocab;
  return dims;
}

std::vector<NamedParam> Model::named_params() const {
  std::vector<NamedParam> out;
  collect_params(out);
  return out;
}

std::vector<Tensor> Model::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

void Model::zero_grad() const {
  for (Tensor& t : params()) t.zero_grad();
}

void Model::check_batch(const Batch& batch, bool needs_tokens, bool needs_answers) const {
  if (batch.size == 0) throw ContractError(std::string(kind()) + ": empty batch");
  if (batch.d_img != dims_.d_img || batch.n_regions != dims_.n_regions) {
    throw DimensionError(std::string(kind()) + ": batch image grid [" +
                         std::to_string(batch.n_regions) + "x" + std::to_string(batch.d_img) +
                         "] does not match model [" + std::to_string(dims_.n_regions) + "x" +
                         std::to_string(dims_.d_img) + "]");
  }
  if (needs_tokens && batch.max_len == 0) {
    throw ContractError(std::string(kind()) + ": batch has no question tokens");
  }
  if (needs_answers && batch.answers.size() != batch.size * kAnswersPerExample) {
    throw ContractError(std::string(kind()) + ": batch is missing the answer modality");
  }
}

// Masked GRU sweep over a padded batch: pad steps leave the state untouched,
// so the final state matches the unpadded per-example run.
struct GruSweep {
  std::vector<Tensor> states;  // per t, [B x hidden]; empty unless requested
  Tensor final_state;          // [B x hidden]
};

static GruSweep run_gru(const GruLayer& gru, const EmbeddingTable& embed, const Batch& batch,
                        bool keep_states) {
  GruSweep sweep;
  Tensor h = Tensor::zeros({batch.size, gru.hidden_size});
  for (size_t t = 0; t < batch.max_len; ++t) {
    Tensor x_t = embed.lookup(batch.token_column(t));
    Tensor h_next = gru.step(x_t, h);
    h = h + scale_rows(h_next - h, batch.step_mask(t));
    if (keep_states) sweep.states.push_back(h);
  }
  sweep.final_state = h;
  return sweep;
}

// ---- VisualTeacher --------------------------------------------------------

VisualTeacher::VisualTeacher(const ModelDims& dims, uint64_t seed) : Model(dims) {
  Rng rng(seed);
  img_proj = LinearLayer(dims.d_img, dims.d_hidden, rng);
  cls = MlpBlock(dims.d_hidden, dims.d_hidden, dims.n_classes, rng);
}

TeacherOutputs VisualTeacher::forward(const Batch& batch) const {
  check_batch(batch, false, false);
  Tensor pooled = segment_mean(batch.image_features, dims_.n_regions);
  TeacherOutputs out;
  out.z_vi = img_proj.forward(pooled);
  out.z_p = cls.forward(out.z_vi);
  return out;
}

void VisualTeacher::collect_params(std::vector<NamedParam>& out) const {
  img_proj.collect("img_proj", out);
  cls.collect("cls", out);
}

// ---- QuestionTeacher ---------------------------------------------------------

QuestionTeacher::QuestionTeacher(const ModelDims& dims, uint64_t seed) : Model(dims) {
  Rng rng(seed);
  embed = EmbeddingTable(dims.question_vocab, dims.d_word, rng);
  gru = GruLayer(dims.d_word, dims.d_hidden, rng);
  q_proj = LinearLayer(dims.d_hidden, dims.d_hidden, rng);
  cls = MlpBlock(dims.d_hidden, dims.d_hidden, dims.n_classes, rng);
}

TeacherOutputs QuestionTeacher::forward(const Batch& batch) const {
  check_batch(batch, true, false);
  GruSweep sweep = run_gru(gru, embed, batch, false);
  TeacherOutputs out;
  out.z_qi = q_proj.forward(sweep.final_state);
  out.z_p = cls.forward(out.z_qi);
  return out;
}

void QuestionTeacher::collect_params(std::vector<NamedParam>& out) const {
  embed.collect("embed", out);
  gru.collect("gru", out);
  q_proj.collect("q_proj", out);
  cls.collect("cls", out);
}

// ---- AnswerTeacher -----------------------------------------------------------

AnswerTeacher::AnswerTeacher(const ModelDims& dims, uint64_t seed) : Model(dims) {
  Rng rng(seed);
  embed = EmbeddingTable(dims.answer_vocab, dims.d_word, rng);
  a_proj = LinearLayer(dims.d_word, dims.d_hidden, rng);
  cls = MlpBlock(dims.d_hidden, dims.d_hidden, dims.n_classes, rng);
}

TeacherOutputs AnswerTeacher::forward(const Batch& batch) const {
  check_batch(batch, false, true);
  Tensor emb = embed.lookup(batch.answers);  // [B*10 x d_word]
  Tensor pooled = segment_mean(emb, kAnswersPerExample);
  TeacherOutputs out;
  out.z_ai = a_proj.forward(pooled);
  out.z_p = cls.forward(out.z_ai);
  return out;
}

void AnswerTeacher::collect_params(std::vector<NamedParam>& out) const {
  embed.collect("embed", out);
  a_proj.collect("a_proj", out);
  cls.collect("cls", out);
}

// ---- BigTeacher --------------------------------------------------------------

BigTeacher::BigTeacher(const ModelDims& dims, uint64_t seed) : Model(dims) {
  Rng rng(seed);
  embed_q = EmbeddingTable(dims.question_vocab, dims.d_word, rng);
  gru = GruLayer(dims.d_word, dims.d_hidden, rng);
  q_state_proj = LinearLayer(dims.d_hidden, dims.d_hidden, rng);
  embed_a = EmbeddingTable(dims.answer_vocab, dims.d_word, rng);
  a_proj = LinearLayer(dims.d_word, dims.d_hidden, rng);
  v_proj = LinearLayer(dims.d_img, dims.d_hidden, rng);
  att_answer = TopDownAttention(dims.d_hidden, dims.d_hidden, dims.d_hidden, rng);
  att_question = TopDownAttention(dims.d_hidden, dims.d_hidden, dims.d_hidden, rng);
  att_visual = TopDownAttention(dims.d_hidden, dims.d_hidden, dims.d_hidden, rng);
  mlp_v = MlpBlock(dims.d_hidden, dims.d_hidden, dims.d_hidden, rng);
  mlp_q = MlpBlock(dims.d_hidden, dims.d_hidden, dims.d_hidden, rng);
  mlp_a = MlpBlock(dims.d_hidden, dims.d_hidden, dims.d_hidden, rng);
  mlp_cls = MlpBlock(dims.d_hidden, dims.d_hidden, dims.n_classes, rng);
}

TeacherOutputs BigTeacher::forward(const Batch& batch) const {
  check_batch(batch, true, true);

  // Encode. V: per-region projections; H_q: projected GRU states (pad steps
  // masked out of attention); A: projected answer embeddings.
  Tensor v_regions = v_proj.forward(batch.image_features);  // [B*R x d_h]
  GruSweep sweep = run_gru(gru, embed_q, batch, true);
  std::vector<Tensor> projected_states;
  projected_states.reserve(sweep.states.size());
  for (const Tensor& s : sweep.states) projected_states.push_back(q_state_proj.forward(s));
  Tensor question_keys = interleave_rows(projected_states);  // [B*T x d_h]
  Tensor q_bar = q_state_proj.forward(sweep.final_state);    // [B x d_h]
  Tensor answer_keys = a_proj.forward(embed_a.lookup(batch.answers));  // [B*10 x d_h]
  Tensor a_bar = segment_mean(answer_keys, kAnswersPerExample);        // [B x d_h]

  // Attend both ways between question and answers.
  auto [a_att, a_weights] =
      att_answer.attend_batched(q_bar, answer_keys, answer_keys, kAnswersPerExample);
  Tensor question_mask = batch.length_mask();
  auto [q_att, q_weights] = att_question.attend_batched(a_bar, question_keys, question_keys,
                                                        batch.max_len, &question_mask);

  // Residuals around each attention.
  Tensor q_res = q_att + q_bar;
  Tensor a_res = a_att + a_bar;

  // Attended question attends the image; residual from the pooled regions.
  auto [v_att, v_weights] =
      att_visual.attend_batched(q_res, v_regions, v_regions, dims_.n_regions);
  Tensor v_res = v_att + segment_mean(v_regions, dims_.n_regions);

  TeacherOutputs out;
  out.z_vi = mlp_v.forward(v_res);
  out.z_qi = mlp_q.forward(q_res);
  out.z_ai = mlp_a.forward(a_res);
  out.z_p = mlp_cls.forward(out.z_vi + out.z_qi + out.z_ai);
  return out;
}

void BigTeacher::collect_params(std::vector<NamedParam>& out) const {
  embed_q.collect("embed_q", out);
  gru.collect("gru", out);
  q_state_proj.collect("q_state_proj", out);
  embed_a.collect("embed_a", out);
  a_proj.collect("a_proj", out);
  v_proj.collect("v_proj", out);
  att_answer.collect("att_answer", out);
  att_question.collect("att_question", out);
  att_visual.collect("att_visual", out);
  mlp_v.collect("mlp_v", out);
  mlp_q.collect("mlp_q", out);
  mlp_a.collect("mlp_a", out);
  mlp_cls.collect("mlp_cls", out);
}

// ---- Student ----------------------------------------------------------------

Student::Student(const ModelDims& dims, uint64_t seed) : Model(dims) {
  Rng rng(seed);
  img_proj = LinearLayer(dims.d_img, dims.d_hidden, rng);
  embed = EmbeddingTable(dims.question_vocab, dims.d_word, rng);
  gru = GruLayer(dims.d_word, dims.d_hidden, rng);
  q_proj = LinearLayer(dims.d_hidden, dims.d_hidden, rng);
  classifier = LinearLayer(dims.d_hidden, dims.n_classes, rng);
}

Tensor Student::forward_fused(const Tensor& z_vi, const Tensor& z_qi) const {
  return classifier.forward(z_vi * z_qi);
}

TeacherOutputs Student::forward(const Batch& batch) const {
  check_batch(batch, true, false);
  TeacherOutputs out;
  out.z_vi = img_proj.forward(segment_mean(batch.image_features, dims_.n_regions));
  GruSweep sweep = run_gru(gru, embed, batch, false);
  out.z_qi = q_proj.forward(sweep.final_state);
  out.z_p = forward_fused(out.z_vi, out.z_qi);
  return out;
}

void Student::collect_params(std::vector<NamedParam>& out) const {
  img_proj.collect("img_proj", out);
  embed.collect("embed", out);
  gru.collect("gru", out);
  q_proj.collect("q_proj", out);
  classifier.collect("classifier", out);
}

// ---- factory ---------------------------------------------------------------

std::unique_ptr<Model> make_model(const std::string& kind, const ModelDims& dims,
                                  uint64_t seed) {
  if (kind == "visual") return std::make_unique<VisualTeacher>(dims, seed);
  if (kind == "question") return std::make_unique<QuestionTeacher>(dims, seed);
  if (kind == "answer") return std::make_unique<AnswerTeacher>(dims, seed);
  if (kind == "big") return std::make_unique<BigTeacher>(dims, seed);
  if (kind == "student") return std::make_unique<Student>(dims, seed);
  throw ConfigError("unknown model kind '" + kind + "'");
}

bool is_teacher_kind(const std::string& kind) {
  return kind == "visual" || kind == "question" || kind == "answer" || kind == "big";
}

std::vector<int> predict(const Tensor& z_p) {
  std::vector<int> out(z_p.numel());
  std::span<const double> v = z_p.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = v[i] >= 0.0 ? 1 : 0;
  return out;
}

}  // namespace vqd
