#pragma once

#include <cstdint>
#include <vector>

#include "vqd/tensor.hpp"

namespace vqd {

// Per-parameter Adam moments plus the shared step counter.
struct AdamState {
  std::vector<std::vector<double>> m;  // first moments, one buffer per parameter
  std::vector<std::vector<double>> v;  // second moments
  uint64_t t = 0;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed parameter group. Gradients are read from
// the tensors' grad buffers; missing buffers count as zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8);

  void step();
  void zero_grad();
  void set_learning_rate(double lr) { state_.learning_rate = lr; }
  double learning_rate() const { return state_.learning_rate; }
  uint64_t step_count() const { return state_.t; }
  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

// Multiplicative step decay: lr(epoch) = base * gamma^k where k counts the
// step epochs that are <= epoch.
struct StepDecaySchedule {
  double base_learning_rate = 1e-2;
  double gamma = 0.1;
  std::vector<size_t> step_epochs;

  double at_epoch(size_t epoch) const;
};

}  // namespace vqd
