#include "tocoad/backbone.hpp"

#include <algorithm>
#include <sstream>

namespace tocoad {

std::string BackboneSpec::architecture_id() const {
  std::ostringstream os;
  os << "plain4-c" << input_channels << "-s" << stem_width;
  for (Index w : widths) os << "-" << w;
  return os.str();
}

Backbone::Backbone(const BackboneSpec& spec, std::uint64_t seed) : spec_(spec) {
  Rng rng(seed);
  stem_ = nn::Conv2d(spec.input_channels, spec.stem_width, 3, 2, 1, rng);
  Index in = spec.stem_width;
  for (Index width : spec.widths) {
    Stage s;
    s.down = nn::Conv2d(in, width, 3, 2, 1, rng);
    s.refine = nn::Conv2d(width, width, 3, 1, 1, rng);
    stages_.push_back(s);
    in = width;
  }
}

FeaturePyramid Backbone::extract(const Tensor& images) const {
  if (!initialized()) throw StateError("backbone weights are not initialized");
  const Shape s = images.shape();
  if (s.c != spec_.input_channels) throw ArgumentError("backbone expects " + std::to_string(spec_.input_channels) + " channels");
  if (s.h % 32 != 0 || s.w % 32 != 0) throw ArgumentError("backbone input dims must be divisible by 32, got " + s.str());

  Tensor normalized = images;
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c && c < 3; ++c) {
      const auto i = static_cast<std::size_t>(c);
      if (spec_.mean[i] != 0 || spec_.std[i] != 1)
        normalized.plane(n, c) = (normalized.plane(n, c).array() - spec_.mean[i]) / spec_.std[i];
    }

  FeaturePyramid pyramid;
  pyramid.source_height = s.h;
  pyramid.source_width = s.w;
  ag::Var x = ag::relu(stem_(ag::constant(std::move(normalized))));
  for (std::size_t l = 0; l < stages_.size(); ++l) {
    x = ag::relu(stages_[l].down(x));
    x = ag::relu(stages_[l].refine(x));
    pyramid.levels[l] = x;
  }
  return pyramid;
}

nn::ParameterSet Backbone::stage_parameters(int stage) const {
  nn::ParameterSet set;
  if (stage == 0) {
    stem_.collect(set, "stem");
  } else {
    const auto& s = stages_.at(static_cast<std::size_t>(stage - 1));
    const std::string prefix = "layer" + std::to_string(stage);
    s.down.collect(set, prefix + ".down");
    s.refine.collect(set, prefix + ".refine");
  }
  return set;
}

nn::ParameterSet Backbone::parameters() const {
  nn::ParameterSet set;
  for (int stage = 0; stage <= static_cast<int>(stages_.size()); ++stage) set.append(stage_parameters(stage));
  return set;
}

void Backbone::set_trainable(const std::set<int>& stages) const {
  for (int stage = 0; stage <= static_cast<int>(stages_.size()); ++stage)
    stage_parameters(stage).set_trainable(stages.count(stage) > 0);
}

std::vector<ag::Var> pooled_views(const FeaturePyramid& pyramid, const std::vector<int>& levels) {
  if (levels.empty()) throw ArgumentError("pooled_views: empty level set");
  std::vector<ag::Var> out;
  for (int l : levels) {
    if (l < 1 || l > 4) throw ArgumentError("pooled_views: level " + std::to_string(l) + " outside 1..4");
    out.push_back(ag::global_avg_pool(pyramid.level(l)));
  }
  return out;
}

namespace {

// Mean over a k x k window clipped to the plane.
RowMatrix<Scalar> box_mean(const Eigen::Ref<const RowMatrix<Scalar>>& plane, int k) {
  if (k == 1) return plane;
  const Index h = plane.rows(), w = plane.cols(), r = k / 2;
  RowMatrix<Scalar> out(h, w);
  for (Index y = 0; y < h; ++y) {
    const Index y0 = std::max<Index>(0, y - r), y1 = std::min<Index>(h - 1, y + r);
    for (Index x = 0; x < w; ++x) {
      const Index x0 = std::max<Index>(0, x - r), x1 = std::min<Index>(w - 1, x + r);
      out(y, x) = plane.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1).mean();
    }
  }
  return out;
}

}  // namespace

std::vector<PatchFeatureSet> aggregate_patches(const FeaturePyramid& pyramid, int neighborhood, std::array<int, 2> levels) {
  if (neighborhood < 1 || neighborhood % 2 == 0) throw ArgumentError("aggregate_patches: neighborhood must be odd and >= 1");
  const ag::Var& fine = pyramid.level(levels[0]);
  const Shape fs = fine->value.shape();
  const ag::Var coarse = ag::resize_bilinear(ag::detach(pyramid.level(levels[1])), fs.h, fs.w);
  const ag::Var joined = ag::concat_channels({ag::detach(fine), coarse});
  const Tensor& t = joined->value;
  const Index d = t.shape().c;

  std::vector<PatchFeatureSet> out;
  for (Index n = 0; n < t.shape().n; ++n) {
    PatchFeatureSet set;
    set.grid_h = fs.h;
    set.grid_w = fs.w;
    set.features.resize(fs.h * fs.w, d);
    for (Index c = 0; c < d; ++c) {
      const RowMatrix<Scalar> pooled = box_mean(t.plane(n, c), neighborhood);
      set.features.col(c) = Eigen::Map<const Eigen::VectorXd>(pooled.data(), pooled.size());
    }
    out.push_back(std::move(set));
  }
  return out;
}

}  // namespace tocoad
