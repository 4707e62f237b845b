#include "tocoad/inference.hpp"

#include <iostream>

namespace tocoad {

namespace {

template <typename Fn>
void for_each_batch(const DatasetSplit& split, int batch_size, Fn&& fn) {
  const auto step = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t begin = 0; begin < split.size(); begin += step) {
    const std::size_t end = std::min(split.size(), begin + step);
    std::vector<const Image*> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(&split.samples[i].pixels);
    fn(begin, to_tensor(images));
  }
}

}  // namespace

RowMatrix<float> collect_patch_features(const DatasetSplit& split, const Backbone& backbone, int neighborhood,
                                        int batch_size) {
  if (split.samples.empty()) throw ArgumentError("collect_patch_features: empty split");
  std::vector<PatchFeatureSet> sets;
  for_each_batch(split, batch_size, [&](std::size_t, const Tensor& batch) {
    for (auto& s : aggregate_patches(backbone.extract(batch), neighborhood)) sets.push_back(std::move(s));
  });
  Index rows = 0;
  for (const auto& s : sets) rows += s.features.rows();
  RowMatrix<float> out(rows, sets.front().features.cols());
  Index r = 0;
  for (const auto& s : sets) {
    out.middleRows(r, s.features.rows()) = s.features.cast<float>();
    r += s.features.rows();
  }
  return out;
}

Bank build_bank(const DatasetSplit& train, const Backbone& backbone, const BankOptions& options, std::uint64_t seed,
                const std::string& extractor_hash) {
  if (train.samples.empty()) throw ArgumentError("build_bank: empty training split");
  backbone.freeze();
  const RowMatrix<float> features = collect_patch_features(train, backbone, options.neighborhood, options.batch_size);
  return build_bank<float>(features, options.ratio, seed, options.neighbor_count, extractor_hash);
}

ScoreMap score_patches(const PatchFeatureSet& patches, const Bank& bank, const ScoringConfig& cfg, Index height,
                       Index width) {
  cfg.validate(bank.size());
  ScoreMap map;
  map.patch_scores.resize(patches.grid_h, patches.grid_w);
  for (Index i = 0; i < patches.features.rows(); ++i) {
    const auto s = score_patch(patches.features.row(i), bank, cfg.b);
    map.patch_scores(i / patches.grid_w, i % patches.grid_w) = static_cast<Scalar>(s.score);
  }
  map.image_score = map.patch_scores.maxCoeff();
  map.pixel_map = gaussian_blur(resize_bilinear(map.patch_scores, height, width), cfg.smoothing_sigma);
  return map;
}

ScoreMap score_image(const ImageSample& image, const Bank& bank, const Backbone& backbone, const ScoringConfig& cfg,
                     int neighborhood) {
  const auto patches = aggregate_patches(backbone.extract(to_tensor(image.pixels)), neighborhood);
  return score_patches(patches.front(), bank, cfg, image.pixels.height(), image.pixels.width());
}

std::vector<ScoreMap> score_split(const DatasetSplit& split, const Bank& bank, const Backbone& backbone,
                                  const ScoringConfig& cfg, int neighborhood, int batch_size) {
  cfg.validate(bank.size());
  backbone.freeze();
  std::vector<ScoreMap> maps;
  for_each_batch(split, batch_size, [&](std::size_t begin, const Tensor& batch) {
    const auto sets = aggregate_patches(backbone.extract(batch), neighborhood);
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const Image& px = split.samples[begin + k].pixels;
      maps.push_back(score_patches(sets[k], bank, cfg, px.height(), px.width()));
    }
  });
  return maps;
}

EvalResult evaluate_category(const DatasetSplit& test, const std::vector<ScoreMap>& maps) {
  if (maps.size() != test.size()) throw ArgumentError("evaluate_category: one score map per test image required");
  EvalResult result;
  result.category = test.category;
  result.n_images = test.size();
  result.n_anomalous = test.anomalous_count();

  std::vector<double> image_scores;
  std::vector<std::uint8_t> image_labels;
  std::vector<double> pixel_scores;
  std::vector<std::uint8_t> pixel_labels;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& s = test.samples[i];
    image_scores.push_back(maps[i].image_score);
    image_labels.push_back(static_cast<std::uint8_t>(s.label));
    const Plane& pm = maps[i].pixel_map;
    const Mask mask = s.mask ? *s.mask : Mask::Zero(pm.rows(), pm.cols());
    if (mask.rows() != pm.rows() || mask.cols() != pm.cols()) throw ArgumentError("evaluate_category: mask dims differ from score map");
    for (Index k = 0; k < pm.size(); ++k) {
      pixel_scores.push_back(pm.data()[k]);
      pixel_labels.push_back(mask.data()[k]);
    }
  }
  result.image_auroc = auroc(image_scores, image_labels);
  const bool any_positive = std::find(pixel_labels.begin(), pixel_labels.end(), 1) != pixel_labels.end();
  if (any_positive) {
    result.pixel_auroc = auroc(pixel_scores, pixel_labels);
  } else {
    std::clog << "warning: " << test.category << " has no anomalous pixels; pixel AUROC omitted\n";
  }
  return result;
}

}  // namespace tocoad
