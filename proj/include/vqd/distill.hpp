#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vqd/data.hpp"
#include "vqd/models.hpp"
#include "vqd/optim.hpp"

namespace vqd {

// lambda0 weighs BCE; l2[0..6] weigh L21..L27 in table order:
//   L21 visual z_vi   L22 question z_qi
//   L23 big z_vi      L24 big z_qi
//   L25 visual z_p    L26 question z_p   L27 big z_p
// answer_pred weighs the answer teacher's prediction-matching term.
struct LossWeights {
  double bce = 1.0;
  std::array<double, 7> l2 = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  double answer_pred = 1.0;
};

struct DistillConfig {
  std::set<std::string> teacher_set;  // subset of {visual, question, answer, big}
  bool with_intermediate = false;
  LossWeights weights;

  void validate() const;
};

// Differentiable loss terms. A term tensor is undefined when its
// configuration is inactive; a zero lambda keeps the term out of the total's
// graph but it is still computed for reporting.
struct DistillTerms {
  Tensor bce;
  std::array<Tensor, 7> l2;
  Tensor answer_pred;
  Tensor total;
};

// Plain numbers for logs; inactive terms are 0. total is the lambda-weighted
// sum of the other fields, accumulated in field order (bce, l21..l27,
// answer_pred).
struct LossBreakdown {
  double bce = 0.0;
  std::array<double, 7> l2 = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  double answer_pred = 0.0;
  double total = 0.0;

  double weighted_sum(const LossWeights& w) const;
};

// Computes exactly the configuration-active subset of the Table losses.
// Teacher outputs are constants (teachers run under no-grad); gradients reach
// only the student side.
DistillTerms compute_distill_losses(const TeacherOutputs& student,
                                    const std::map<std::string, TeacherOutputs>& teachers,
                                    const DistillConfig& cfg);

// Adds lambda0 * BCE(labels, student_logits) and the lambda-weighted active
// terms; fills terms.bce and terms.total and returns the total.
Tensor total_loss(DistillTerms& terms, const Tensor& labels, const Tensor& student_logits,
                  const LossWeights& weights);

LossBreakdown breakdown_from_terms(const DistillTerms& terms, const LossWeights& weights);

struct TrainerOptions {
  size_t epochs = 5;
  size_t batch_size = 32;
  StepDecaySchedule schedule;  // lr 1e-2, gamma 0.1, step epochs per run kind
  uint64_t seed = 0;
};

struct EpochLog {
  size_t epoch = 0;
  double learning_rate = 0.0;
  LossBreakdown losses;  // per-epoch means; total recomputed from the means
};

// Plain BCE training of any model on its own modalities.
std::vector<EpochLog> pretrain_teacher(Model& model, std::span<const VqdExample> train,
                                       const DatasetManifest& manifest,
                                       const TrainerOptions& options);

// Per batch: no-grad forwards of the selected teachers, student forward, the
// weighted loss, backward, Adam step. Teachers stay frozen throughout.
std::vector<EpochLog> train_student(Student& student,
                                    const std::map<std::string, const Model*>& teachers,
                                    std::span<const VqdExample> train,
                                    const DatasetManifest& manifest, const DistillConfig& cfg,
                                    const TrainerOptions& options);

}  // namespace vqd
