#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vqd/data.hpp"
#include "vqd/models.hpp"

namespace vqd {

// AP = (1/P) * sum over positive ranks of precision@k, items sorted by score
// descending with ties broken by original index ascending. Undefined (not 0)
// when there are no positives.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const int> labels);

struct ClassMetrics {
  std::string code;
  std::optional<double> ap;  // percent, [0, 100]
  size_t n_positives = 0;
  double accuracy = 0.0;  // threshold-at-0.5 accuracy, percent (secondary)
};

struct MetricsReport {
  std::array<ClassMetrics, kNumClasses> per_class;
  std::optional<double> overall;  // mean over classes with defined AP
  size_t n_examples = 0;

  std::string to_json_string() const;
  // Fixed-width table; header columns follow the class-code order with the
  // Overall column first.
  std::string to_text_table() const;
};

MetricsReport evaluate(const Model& model, std::span<const VqdExample> dataset,
                       const DatasetManifest& manifest, size_t batch_size = 256);

MetricsReport report_from_scores(std::span<const double> probabilities,
                                 std::span<const VqdExample> dataset);

}  // namespace vqd
