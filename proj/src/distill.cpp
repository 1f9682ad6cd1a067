#include "vqd/distill.hpp"

#include <cmath>

#include "vqd/error.hpp"
#include "vqd/layers.hpp"

namespace vqd {

void DistillConfig::validate() const {
  for (const std::string& t : teacher_set) {
    if (!is_teacher_kind(t)) {
      throw ConfigError("DistillConfig: unknown teacher '" + t + "'");
    }
  }
  for (double w : weights.l2) {
    if (w < 0.0) throw ConfigError("DistillConfig: negative loss weight");
  }
  if (weights.bce < 0.0 || weights.answer_pred < 0.0) {
    throw ConfigError("DistillConfig: negative loss weight");
  }
}

double LossBreakdown::weighted_sum(const LossWeights& w) const {
  double acc = w.bce * bce;
  for (size_t i = 0; i < 7; ++i) acc += w.l2[i] * l2[i];
  acc += w.answer_pred * answer_pred;
  return acc;
}

static const TeacherOutputs& require_teacher(
    const std::map<std::string, TeacherOutputs>& teachers, const std::string& kind,
    const char* loss_id) {
  auto it = teachers.find(kind);
  if (it == teachers.end()) {
    throw ContractError(std::string(loss_id) + ": teacher '" + kind + "' outputs missing");
  }
  return it->second;
}

static const Tensor& require_field(const Tensor& t, const char* loss_id, const char* field) {
  if (!t.defined()) {
    throw ContractError(std::string(loss_id) + ": teacher output lacks " + field);
  }
  return t;
}

DistillTerms compute_distill_losses(const TeacherOutputs& student,
                                    const std::map<std::string, TeacherOutputs>& teachers,
                                    const DistillConfig& cfg) {
  cfg.validate();
  DistillTerms terms;
  const bool has_visual = cfg.teacher_set.count("visual") > 0;
  const bool has_question = cfg.teacher_set.count("question") > 0;
  const bool has_answer = cfg.teacher_set.count("answer") > 0;
  const bool has_big = cfg.teacher_set.count("big") > 0;

  if (has_visual) {
    const TeacherOutputs& tv = require_teacher(teachers, "visual", "L21/L25");
    if (cfg.with_intermediate) {
      terms.l2[0] = l2_feature_loss(require_field(tv.z_vi, "L21", "z_vi"), student.z_vi);
    }
    terms.l2[4] = l2_feature_loss(require_field(tv.z_p, "L25", "z_p"), student.z_p);
  }
  if (has_question) {
    const TeacherOutputs& tq = require_teacher(teachers, "question", "L22/L26");
    if (cfg.with_intermediate) {
      terms.l2[1] = l2_feature_loss(require_field(tq.z_qi, "L22", "z_qi"), student.z_qi);
    }
    terms.l2[5] = l2_feature_loss(require_field(tq.z_p, "L26", "z_p"), student.z_p);
  }
  if (has_big) {
    const TeacherOutputs& tb = require_teacher(teachers, "big", "L23/L24/L27");
    if (cfg.with_intermediate) {
      terms.l2[2] = l2_feature_loss(require_field(tb.z_vi, "L23", "z_vi"), student.z_vi);
      terms.l2[3] = l2_feature_loss(require_field(tb.z_qi, "L24", "z_qi"), student.z_qi);
    }
    terms.l2[6] = l2_feature_loss(require_field(tb.z_p, "L27", "z_p"), student.z_p);
  }
  if (has_answer) {
    // No student-side answer feature exists, so the answer teacher only
    // matches predictions.
    const TeacherOutputs& ta = require_teacher(teachers, "answer", "L2a");
    terms.answer_pred = l2_feature_loss(require_field(ta.z_p, "L2a", "z_p"), student.z_p);
  }
  return terms;
}

Tensor total_loss(DistillTerms& terms, const Tensor& labels, const Tensor& student_logits,
                  const LossWeights& weights) {
  terms.bce = bce_with_logits(student_logits, labels);

  // Accumulation order is part of the logging contract: bce, l21..l27,
  // answer_pred. Zero-lambda terms stay out of the graph entirely.
  Tensor total;
  auto add_term = [&total](const Tensor& term, double lambda) {
    if (!term.defined() || lambda == 0.0) return;
    Tensor weighted = lambda == 1.0 ? term : mul(term, Tensor::scalar(lambda));
    total = total.defined() ? add(total, weighted) : weighted;
  };
  add_term(terms.bce, weights.bce);
  for (size_t i = 0; i < 7; ++i) add_term(terms.l2[i], weights.l2[i]);
  add_term(terms.answer_pred, weights.answer_pred);
  if (!total.defined()) total = Tensor::zeros({1});
  terms.total = total;
  return total;
}

LossBreakdown breakdown_from_terms(const DistillTerms& terms, const LossWeights& weights) {
  LossBreakdown b;
  b.bce = terms.bce.defined() ? terms.bce.item() : 0.0;
  for (size_t i = 0; i < 7; ++i) b.l2[i] = terms.l2[i].defined() ? terms.l2[i].item() : 0.0;
  b.answer_pred = terms.answer_pred.defined() ? terms.answer_pred.item() : 0.0;
  b.total = b.weighted_sum(weights);
  return b;
}

// ---- training loops ---------------------------------------------------------

static void check_finite(double loss, const char* what, size_t epoch, size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(what) + ": non-finite loss " + std::to_string(loss) +
                       " at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
  }
}

std::vector<EpochLog> pretrain_teacher(Model& model, std::span<const VqdExample> train,
                                       const DatasetManifest& manifest,
                                       const TrainerOptions& options) {
  Adam adam(model.params(), options.schedule.base_learning_rate);
  std::vector<EpochLog> logs;
  for (size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = options.schedule.at_epoch(epoch);
    adam.set_learning_rate(lr);
    double bce_sum = 0.0;
    size_t steps = 0;
    for (const Batch& batch : batches_shuffled(train, manifest, options.batch_size,
                                               options.seed, epoch)) {
      TeacherOutputs out = model.forward(batch);
      Tensor loss = bce_with_logits(out.z_p, batch.labels);
      check_finite(loss.item(), "pretrain_teacher", epoch, steps);
      adam.zero_grad();
      loss.backward();
      adam.step();
      bce_sum += loss.item();
      ++steps;
    }
    EpochLog log;
    log.epoch = epoch;
    log.learning_rate = lr;
    log.losses.bce = steps ? bce_sum / static_cast<double>(steps) : 0.0;
    log.losses.total = log.losses.bce;
    logs.push_back(log);
  }
  return logs;
}

std::vector<EpochLog> train_student(Student& student,
                                    const std::map<std::string, const Model*>& teachers,
                                    std::span<const VqdExample> train,
                                    const DatasetManifest& manifest, const DistillConfig& cfg,
                                    const TrainerOptions& options) {
  cfg.validate();
  for (const std::string& kind : cfg.teacher_set) {
    auto it = teachers.find(kind);
    if (it == teachers.end() || it->second == nullptr) {
      throw ConfigError("train_student: teacher '" + kind + "' selected but not provided");
    }
    if (!(it->second->dims() == student.dims())) {
      throw ContractError("train_student: teacher '" + kind +
                          "' dims do not match the student");
    }
  }

  Adam adam(student.params(), options.schedule.base_learning_rate);
  std::vector<EpochLog> logs;
  for (size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = options.schedule.at_epoch(epoch);
    adam.set_learning_rate(lr);
    LossBreakdown epoch_sum;
    size_t steps = 0;
    for (const Batch& batch : batches_shuffled(train, manifest, options.batch_size,
                                               options.seed, epoch)) {
      std::map<std::string, TeacherOutputs> teacher_outs;
      {
        NoGradGuard no_grad;
        for (const std::string& kind : cfg.teacher_set) {
          teacher_outs.emplace(kind, teachers.at(kind)->forward(batch));
        }
      }
      TeacherOutputs out = student.forward(batch);
      DistillTerms terms = compute_distill_losses(out, teacher_outs, cfg);
      Tensor total = total_loss(terms, batch.labels, out.z_p, cfg.weights);
      check_finite(total.item(), "train_student", epoch, steps);
      adam.zero_grad();
      total.backward();
      adam.step();

      LossBreakdown b = breakdown_from_terms(terms, cfg.weights);
      epoch_sum.bce += b.bce;
      for (size_t i = 0; i < 7; ++i) epoch_sum.l2[i] += b.l2[i];
      epoch_sum.answer_pred += b.answer_pred;
      ++steps;
    }
    EpochLog log;
    log.epoch = epoch;
    log.learning_rate = lr;
    if (steps > 0) {
      log.losses.bce = epoch_sum.bce / static_cast<double>(steps);
      for (size_t i = 0; i < 7; ++i) {
        log.losses.l2[i] = epoch_sum.l2[i] / static_cast<double>(steps);
      }
      log.losses.answer_pred = epoch_sum.answer_pred / static_cast<double>(steps);
    }
    log.losses.total = log.losses.weighted_sum(cfg.weights);
    logs.push_back(log);
  }
  return logs;
}

}  // namespace vqd
