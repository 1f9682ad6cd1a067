#include "vqd/optim.hpp"

#include <cmath>

#include "vqd/error.hpp"

namespace vqd {

Adam::Adam(std::vector<Tensor> params, double learning_rate, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)) {
  state_.learning_rate = learning_rate;
  state_.beta1 = beta1;
  state_.beta2 = beta2;
  state_.epsilon = epsilon;
  state_.m.reserve(params_.size());
  state_.v.reserve(params_.size());
  for (const Tensor& p : params_) {
    state_.m.emplace_back(p.numel(), 0.0);
    state_.v.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  state_.t += 1;
  const double b1 = state_.beta1, b2 = state_.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state_.t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state_.t));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    std::span<double> w = p.values_mut();
    std::span<const double> g = p.grad();
    if (!g.empty() && g.size() != w.size()) {
      throw DimensionError("adam: grad size " + std::to_string(g.size()) +
                           " != param size " + std::to_string(w.size()));
    }
    std::vector<double>& m = state_.m[pi];
    std::vector<double>& v = state_.v[pi];
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double mhat = m[i] / corr1;
      const double vhat = v[i] / corr2;
      w[i] -= state_.learning_rate * mhat / (std::sqrt(vhat) + state_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double StepDecaySchedule::at_epoch(size_t epoch) const {
  double lr = base_learning_rate;
  for (size_t e : step_epochs) {
    if (e <= epoch) lr *= gamma;
  }
  return lr;
}

}  // namespace vqd
