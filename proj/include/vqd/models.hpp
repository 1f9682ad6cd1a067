#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vqd/data.hpp"
#include "vqd/layers.hpp"
#include "vqd/tensor.hpp"

namespace vqd {

struct ModelDims {
  size_t d_img = 24;
  size_t n_regions = 4;
  size_t d_word = 24;
  size_t d_hidden = 64;
  size_t n_classes = kNumClasses;
  size_t question_vocab = 0;
  size_t answer_vocab = 0;
  size_t answers_per_example = kAnswersPerExample;

  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

ModelDims dims_from_manifest(const DatasetManifest& manifest, size_t d_word, size_t d_hidden);

// Features and class logits of one forward pass. Which feature fields are
// populated depends on the model's modalities.
struct TeacherOutputs {
  Tensor z_vi;  // visual feature [batch x d_hidden]
  Tensor z_qi;  // question feature [batch x d_hidden]
  Tensor z_ai;  // answer feature [batch x d_hidden]
  Tensor z_p;   // class logits [batch x n_classes]
};

class Model {
 public:
  explicit Model(ModelDims dims) : dims_(dims) { dims_.validate(); }
  virtual ~Model() = default;

  virtual const char* kind() const = 0;
  virtual TeacherOutputs forward(const Batch& batch) const = 0;
  virtual void collect_params(std::vector<NamedParam>& out) const = 0;

  std::vector<NamedParam> named_params() const;
  std::vector<Tensor> params() const;
  void zero_grad() const;
  const ModelDims& dims() const { return dims_; }

 protected:
  void check_batch(const Batch& batch, bool needs_tokens, bool needs_answers) const;
  ModelDims dims_;
};

// Mean-pooled regions -> linear -> z_vi; MLP classifier on top.
class VisualTeacher : public Model {
 public:
  VisualTeacher(const ModelDims& dims, uint64_t seed);
  const char* kind() const override { return "visual"; }
  TeacherOutputs forward(const Batch& batch) const override;
  void collect_params(std::vector<NamedParam>& out) const override;

  LinearLayer img_proj;
  MlpBlock cls;
};

// Embedded tokens -> GRU -> final state -> linear -> z_qi; MLP classifier.
class QuestionTeacher : public Model {
 public:
  QuestionTeacher(const ModelDims& dims, uint64_t seed);
  const char* kind() const override { return "question"; }
  TeacherOutputs forward(const Batch& batch) const override;
  void collect_params(std::vector<NamedParam>& out) const override;

  EmbeddingTable embed;
  GruLayer gru;
  LinearLayer q_proj;
  MlpBlock cls;
};

// Embedded answers -> mean -> linear -> z_ai; MLP classifier.
class AnswerTeacher : public Model {
 public:
  AnswerTeacher(const ModelDims& dims, uint64_t seed);
  const char* kind() const override { return "answer"; }
  TeacherOutputs forward(const Batch& batch) const override;
  void collect_params(std::vector<NamedParam>& out) const override;

  EmbeddingTable embed;
  LinearLayer a_proj;
  MlpBlock cls;
};

// Tri-modal teacher: question<->answer attention both ways, answer-attended
// question attends the image, residuals after every attention, per-modality
// MLPs, summed features through the classifier MLP.
class BigTeacher : public Model {
 public:
  BigTeacher(const ModelDims& dims, uint64_t seed);
  const char* kind() const override { return "big"; }
  TeacherOutputs forward(const Batch& batch) const override;
  void collect_params(std::vector<NamedParam>& out) const override;

  EmbeddingTable embed_q;
  GruLayer gru;
  LinearLayer q_state_proj;
  EmbeddingTable embed_a;
  LinearLayer a_proj;
  LinearLayer v_proj;
  TopDownAttention att_answer;    // query q-bar over answer keys
  TopDownAttention att_question;  // query a-bar over question-state keys
  TopDownAttention att_visual;    // query q' over region keys
  MlpBlock mlp_v;
  MlpBlock mlp_q;
  MlpBlock mlp_a;
  MlpBlock mlp_cls;
};

// Q+I model: per-modality linear features multiplied elementwise, single FC
// classifier.
class Student : public Model {
 public:
  Student(const ModelDims& dims, uint64_t seed);
  const char* kind() const override { return "student"; }
  TeacherOutputs forward(const Batch& batch) const override;
  void collect_params(std::vector<NamedParam>& out) const override;

  // Fusion tail alone; lets tests pin one branch.
  Tensor forward_fused(const Tensor& z_vi, const Tensor& z_qi) const;

  LinearLayer img_proj;
  EmbeddingTable embed;
  GruLayer gru;
  LinearLayer q_proj;
  LinearLayer classifier;
};

std::unique_ptr<Model> make_model(const std::string& kind, const ModelDims& dims, uint64_t seed);
bool is_teacher_kind(const std::string& kind);

// Threshold rule: sigmoid(z) >= 0.5, i.e. z >= 0 (boundary counts positive).
// Returns batch*n_classes entries of 0/1 in row-major order.
std::vector<int> predict(const Tensor& z_p);

}  // namespace vqd
