#pragma once

#include "tocoad/common.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tocoad {

// Area under the ROC curve as the Mann-Whitney statistic
// P(score_pos > score_neg) + 1/2 P(tie), via a midrank sweep.
template <typename T>
double auroc(std::span<const T> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw MetricError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (auto l : labels) {
    if (l > 1) throw MetricError("auroc: labels must be binary");
    positives += l;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw MetricError("auroc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of (1-based) midranks of the positives.
  double rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]]) rank_sum += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(positives), nn = static_cast<double>(negatives);
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

template <typename T>
double auroc(const std::vector<T>& scores, const std::vector<std::uint8_t>& labels) {
  return auroc(std::span<const T>(scores), std::span<const std::uint8_t>(labels));
}

struct EvalResult {
  std::string category;
  double image_auroc = 0;
  std::optional<double> pixel_auroc;  // absent when the split has no anomalous pixel
  std::size_t n_images = 0;
  std::size_t n_anomalous = 0;
};

// "category,image_auroc,pixel_auroc" rows with fixed 6-digit formatting, so
// identical inputs produce byte-identical files.
std::string results_csv(const std::vector<EvalResult>& results);
// Inverse of results_csv (counts are not stored and read back as zero).
std::vector<EvalResult> parse_results_csv(const std::string& text);
// Aligned table with a closing "Total avg." row.
std::string results_table(const std::vector<EvalResult>& results);

}  // namespace tocoad
