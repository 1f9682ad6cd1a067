#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vqd/rng.hpp"
#include "vqd/tensor.hpp"

namespace vqd::testing {

// ---- gradient checking -----------------------------------------------------

// |a-b| / max(|a|,|b|); pairs that are both tiny count as matching so that
// exactly-zero gradients do not divide by finite-difference noise.
inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale < 1e-7) return 0.0;
  return std::abs(a - b) / scale;
}

// Central finite differences (f(x+h) - f(x-h)) / 2h through a fresh forward
// pass per probe. The loss_fn must rebuild its graph from the raw parameter
// values on every call.
inline double finite_diff_component(Tensor& param, size_t index,
                                    const std::function<double()>& loss_fn, double h = 1e-5) {
  double& slot = param.values_mut()[index];
  const double saved = slot;
  slot = saved + h;
  const double up = loss_fn();
  slot = saved - h;
  const double down = loss_fn();
  slot = saved;
  return (up - down) / (2.0 * h);
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "param_name[i]" of the worst component
  size_t checked = 0;
};

// Analytic gradients (already populated in the params) vs central
// differences over every component of every parameter.
inline GradCheckResult check_gradients(std::vector<std::pair<std::string, Tensor>> params,
                                       const std::function<double()>& loss_fn,
                                       double h = 1e-5) {
  GradCheckResult result;
  for (auto& [name, param] : params) {
    std::span<const double> analytic = param.grad();
    for (size_t i = 0; i < param.numel(); ++i) {
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double fd = finite_diff_component(param, i, loss_fn, h);
      const double rel = relative_error(a, fd);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = name + "[" + std::to_string(i) + "]";
      }
      ++result.checked;
    }
  }
  return result;
}

// ---- independent oracles ----------------------------------------------------

// Naive triple-loop product, no sharing with the engine's kernel.
inline std::vector<double> matmul_oracle(const std::vector<double>& a,
                                         const std::vector<double>& b, size_t m, size_t k,
                                         size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

// Prefix-enumeration AP: ranks computed by pairwise comparison (score
// descending, index ascending on ties), precision@rank accumulated per
// positive. O(n^2), no sorting shared with the implementation.
inline std::optional<double> average_precision_oracle(const std::vector<double>& scores,
                                                      const std::vector<int>& labels) {
  size_t positives = 0;
  for (int y : labels) positives += y != 0;
  if (positives == 0) return std::nullopt;
  auto outranks = [&](size_t j, size_t i) {
    return scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
  };
  double ap = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) continue;
    size_t rank = 1, positives_at_rank = 1;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (j == i || !outranks(j, i)) continue;
      ++rank;
      positives_at_rank += labels[j] != 0;
    }
    ap += static_cast<double>(positives_at_rank) / static_cast<double>(rank);
  }
  return ap / static_cast<double>(positives);
}

// ---- misc -----------------------------------------------------------------

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return requires_grad ? Tensor::param(std::move(shape), std::move(v))
                       : Tensor::constant(std::move(shape), std::move(v));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    base_ = std::filesystem::temp_directory_path() /
            ("vqd-test-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(base_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(base_, ec);
  }
  const std::filesystem::path& path() const { return base_; }

 private:
  std::filesystem::path base_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace vqd::testing
