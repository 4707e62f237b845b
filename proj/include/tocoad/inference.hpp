#pragma once

#include "tocoad/backbone.hpp"
#include "tocoad/data.hpp"
#include "tocoad/memory_bank.hpp"
#include "tocoad/metrics.hpp"

#include <vector>

namespace tocoad {

using Bank = MemoryBank<float>;

struct ScoreMap {
  Plane patch_scores;  // grid_h x grid_w
  Plane pixel_map;     // input resolution, upsampled then smoothed
  Scalar image_score = 0;  // max patch score, before smoothing
};

struct BankOptions {
  double ratio = 0.1;
  Index neighbor_count = 9;
  int neighborhood = 3;
  int batch_size = 16;
};

// Aggregated level-2/3 patch features of every image, stacked row-wise in
// sample order.
RowMatrix<float> collect_patch_features(const DatasetSplit& split, const Backbone& backbone, int neighborhood,
                                        int batch_size = 16);

Bank build_bank(const DatasetSplit& train, const Backbone& backbone, const BankOptions& options, std::uint64_t seed,
                const std::string& extractor_hash);

ScoreMap score_patches(const PatchFeatureSet& patches, const Bank& bank, const ScoringConfig& cfg, Index height,
                       Index width);
ScoreMap score_image(const ImageSample& image, const Bank& bank, const Backbone& backbone, const ScoringConfig& cfg,
                     int neighborhood);
std::vector<ScoreMap> score_split(const DatasetSplit& split, const Bank& bank, const Backbone& backbone,
                                  const ScoringConfig& cfg, int neighborhood, int batch_size = 16);

// Image AUROC over (image_score, label); pixel AUROC over all test pixels
// pooled into one curve. Pixel AUROC is omitted (with a warning) when the
// split has no anomalous pixel.
EvalResult evaluate_category(const DatasetSplit& test, const std::vector<ScoreMap>& maps);

}  // namespace tocoad
