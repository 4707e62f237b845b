#pragma once

#include "tocoad/nn.hpp"

#include <array>
#include <set>
#include <string>
#include <vector>

namespace tocoad {

// Four-stage convolutional extractor with a 4/8/16/32 stride schedule.
// Each stage is a stride-2 3x3 conv followed by a stride-1 3x3 conv, both
// ReLU-activated; a stride-2 stem precedes stage 1.
struct BackboneSpec {
  Index input_channels = 3;
  Index stem_width = 16;
  std::array<Index, 4> widths{16, 32, 64, 128};
  // Per-channel input normalization (x - mean) / std. Identity by default.
  std::array<Scalar, 3> mean{0, 0, 0};
  std::array<Scalar, 3> std{1, 1, 1};

  std::string architecture_id() const;
  Index width(int level) const { return widths.at(static_cast<std::size_t>(level - 1)); }
};

// One forward pass worth of per-level maps, level l at stride 2^(l+1).
struct FeaturePyramid {
  std::array<ag::Var, 4> levels;
  Index source_height = 0;
  Index source_width = 0;

  const ag::Var& level(int l) const { return levels.at(static_cast<std::size_t>(l - 1)); }
  Index batch() const { return levels[0]->value.shape().n; }
};

// Locally aggregated patch descriptors of one image, row-major over the grid.
struct PatchFeatureSet {
  RowMatrix<Scalar> features;  // (grid_h * grid_w) x d
  Index grid_h = 0;
  Index grid_w = 0;
  std::string provenance;
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneSpec& spec, std::uint64_t seed);

  // images: raw (n, c, h, w) in [0, 1]; h and w divisible by 32.
  FeaturePyramid extract(const Tensor& images) const;

  // Stage ids: 0 = stem, 1..4 = pyramid levels.
  void set_trainable(const std::set<int>& stages) const;
  void freeze() const { set_trainable({}); }
  bool initialized() const { return !stages_.empty(); }

  nn::ParameterSet parameters() const;
  const BackboneSpec& spec() const { return spec_; }

 private:
  struct Stage {
    nn::Conv2d down, refine;
  };
  nn::ParameterSet stage_parameters(int stage) const;

  BackboneSpec spec_;
  nn::Conv2d stem_;
  std::vector<Stage> stages_;
};

// Global average pool of each requested level, one (n, c_l) vector per level.
std::vector<ag::Var> pooled_views(const FeaturePyramid& pyramid, const std::vector<int>& levels);

// Level-3 map resized onto the level-2 grid, channel concatenation, then a
// neighborhood x neighborhood mean filter (padding excluded from the mean).
// One set per image in the batch.
std::vector<PatchFeatureSet> aggregate_patches(const FeaturePyramid& pyramid, int neighborhood,
                                               std::array<int, 2> levels = {2, 3});

}  // namespace tocoad
