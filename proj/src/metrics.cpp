#include "vqd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vqd/error.hpp"

namespace vqd {

using nlohmann::json;

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("average_precision: " + std::to_string(scores.size()) +
                        " scores vs " + std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) {
    throw ContractError("average_precision: empty input");
  }
  size_t positives = 0;
  for (int y : labels) positives += y != 0;
  if (positives == 0) return std::nullopt;

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  double ap = 0.0;
  size_t seen_positives = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] != 0) {
      ++seen_positives;
      ap += static_cast<double>(seen_positives) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

MetricsReport report_from_scores(std::span<const double> probabilities,
                                 std::span<const VqdExample> dataset) {
  const size_t n = dataset.size();
  if (probabilities.size() != n * kNumClasses) {
    throw ContractError("report_from_scores: " + std::to_string(probabilities.size()) +
                        " scores for " + std::to_string(n) + " examples");
  }
  MetricsReport report;
  report.n_examples = n;
  size_t defined = 0;
  double ap_sum = 0.0;
  for (size_t c = 0; c < kNumClasses; ++c) {
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    size_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
      scores[i] = probabilities[i * kNumClasses + c];
      labels[i] = dataset[i].labels[c];
      const int pred = scores[i] >= 0.5 ? 1 : 0;
      correct += pred == labels[i];
    }
    ClassMetrics& cm = report.per_class[c];
    cm.code = kClassCodes[c];
    cm.n_positives = static_cast<size_t>(std::count(labels.begin(), labels.end(), 1));
    cm.accuracy = n == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    if (n > 0) {
      if (auto ap = average_precision(scores, labels)) {
        cm.ap = 100.0 * *ap;
        ap_sum += *cm.ap;
        ++defined;
      }
    }
  }
  if (defined > 0) report.overall = ap_sum / static_cast<double>(defined);
  return report;
}

MetricsReport evaluate(const Model& model, std::span<const VqdExample> dataset,
                       const DatasetManifest& manifest, size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<double> probabilities;
  probabilities.reserve(dataset.size() * kNumClasses);
  std::vector<double> logits_flat;
  logits_flat.reserve(dataset.size() * kNumClasses);
  for (const Batch& batch : batches_sequential(dataset, manifest, batch_size)) {
    Tensor z_p = model.forward(batch).z_p;
    Tensor probs = sigmoid(z_p);
    logits_flat.insert(logits_flat.end(), z_p.values().begin(), z_p.values().end());
    probabilities.insert(probabilities.end(), probs.values().begin(), probs.values().end());
  }
  MetricsReport report = report_from_scores(probabilities, dataset);

  // AP is rank-based, so logits and sigmoid probabilities must agree; the
  // dual computation guards the monotone-transform invariant.
  for (size_t c = 0; c < kNumClasses; ++c) {
    std::vector<double> scores(dataset.size());
    std::vector<int> labels(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
      scores[i] = logits_flat[i * kNumClasses + c];
      labels[i] = dataset[i].labels[c];
    }
    auto ap = average_precision(scores, labels);
    const auto& reported = report.per_class[c].ap;
    const bool both_defined = ap.has_value() == reported.has_value();
    if (!both_defined ||
        (ap.has_value() && std::abs(100.0 * *ap - *reported) > 1e-9)) {
      throw NumericError("evaluate: AP from logits and probabilities disagree for class " +
                         std::string(kClassCodes[c]));
    }
  }
  return report;
}

std::string MetricsReport::to_json_string() const {
  json j;
  j["n_examples"] = n_examples;
  if (overall) {
    j["overall"] = *overall;
  } else {
    j["overall"] = nullptr;
  }
  json classes = json::array();
  for (const ClassMetrics& cm : per_class) {
    json c;
    c["code"] = cm.code;
    if (cm.ap) {
      c["ap"] = *cm.ap;
    } else {
      c["ap"] = nullptr;
    }
    c["n_positives"] = cm.n_positives;
    c["accuracy_at_0.5"] = cm.accuracy;
    classes.push_back(std::move(c));
  }
  j["per_class"] = std::move(classes);
  return j.dump(2);
}

std::string MetricsReport::to_text_table() const {
  std::ostringstream out;
  auto cell = [&out](const std::string& s) {
    out << ' ';
    for (size_t i = s.size(); i < 8; ++i) out << ' ';
    out << s;
  };
  auto num = [&cell](std::optional<double> v) {
    if (!v) {
      cell("n/a");
      return;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *v);
    cell(buf);
  };

  cell("");
  cell("Overall");
  for (const ClassMetrics& cm : per_class) cell(cm.code);
  out << '\n';

  cell("AP");
  num(overall);
  for (const ClassMetrics& cm : per_class) num(cm.ap);
  out << '\n';

  cell("ACC@0.5");
  cell("");
  for (const ClassMetrics& cm : per_class) num(cm.accuracy);
  out << '\n';

  cell("POS");
  cell("");
  for (const ClassMetrics& cm : per_class) cell(std::to_string(cm.n_positives));
  out << '\n';
  return out.str();
}

}  // namespace vqd
