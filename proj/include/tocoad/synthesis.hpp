#pragma once

#include "tocoad/common.hpp"
#include "tocoad/data.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tocoad {

enum class GeneratorKind { perlin, cutpaste, nsa };
enum class TextureSource { external_corpus, self };

std::string to_string(GeneratorKind kind);
GeneratorKind parse_generator(const std::string& name);

struct RotationConfig {
  Scalar slight_min_degrees = -5;
  Scalar slight_max_degrees = 5;
  std::vector<int> right_angles{0, 90, 180, 270};
};

struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::perlin;
  Scalar perlin_threshold = 0.5;
  int period_exponent_min = 2;
  int period_exponent_max = 5;
  Scalar opacity_min = 0.15;
  Scalar opacity_max = 1.0;
  RotationConfig rotation;
  TextureSource texture_source = TextureSource::self;
  int retry_cap = 10;
  // Rectangle sampling for cutpaste / nsa, as a fraction of image area.
  Scalar patch_area_min = 0.02;
  Scalar patch_area_max = 0.15;
  Scalar patch_aspect_min = 0.3;
  Scalar patch_aspect_max = 3.3;

  void validate() const;
};

// Gradient-lattice noise. Zero at every lattice point, bounded by sqrt(2)/2.
struct NoiseField {
  Plane values;
  std::uint64_t seed = 0;
  int period_x = 1;
  int period_y = 1;
};

struct SyntheticAnomaly {
  Image image;
  Mask mask;
  Image rotated;  // the base after geometric augmentation; equals image where mask == 0
  GeneratorKind generator = GeneratorKind::perlin;
  std::string source;
};

struct Rect {
  Index top = 0, left = 0, height = 0, width = 0;
  Index area() const { return height * width; }
};

NoiseField perlin_field(Index height, Index width, int period_x, int period_y, std::uint64_t seed);

// mask = |field| > threshold
Mask binarize(const NoiseField& field, Scalar threshold);

// I_G = (1 - beta m) I_R + beta m A. Returns nullopt for an empty mask.
std::optional<SyntheticAnomaly> compose_anomaly(const Image& rotated, const Image& texture, const Mask& mask, Scalar beta);

// Slight rotation then a right angle drawn from the configured set. Quarter
// turns that would change the dims of a non-square image are skipped.
Image rotate_base(const Image& image, const RotationConfig& cfg, Rng& rng);

SyntheticAnomaly synthesize_perlin(const ImageSample& base, const Image& texture, const GeneratorConfig& cfg,
                                   std::uint64_t seed);

// Copies `source` to (dst_top, dst_left). Mask marks the destination.
SyntheticAnomaly cutpaste_at(const ImageSample& base, const Rect& source, Index dst_top, Index dst_left);
SyntheticAnomaly synthesize_cutpaste(const ImageSample& base, const GeneratorConfig& cfg, std::uint64_t seed);

// Gradient-domain blend of donor[source] into base at (dst_top, dst_left):
// solves lap(u) = lap(donor) inside the rectangle with u = base outside.
// Both rectangles need a one-pixel margin inside their images.
SyntheticAnomaly poisson_blend(const ImageSample& base, const Image& donor, const Rect& source, Index dst_top,
                               Index dst_left);
SyntheticAnomaly synthesize_nsa(const ImageSample& base, const ImageSample& donor, const GeneratorConfig& cfg,
                                std::uint64_t seed);

// Dispatches on cfg.kind. `partner` is the texture (perlin) or donor (nsa);
// cutpaste ignores it.
SyntheticAnomaly synthesize(const ImageSample& base, const ImageSample& partner, const GeneratorConfig& cfg,
                            std::uint64_t seed);

}  // namespace tocoad
