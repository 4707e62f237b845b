#include "tocoad/synthesis.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <cmath>
#include <iostream>
#include <numbers>

namespace tocoad {

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::perlin: return "perlin";
    case GeneratorKind::cutpaste: return "cutpaste";
    case GeneratorKind::nsa: return "nsa";
  }
  return "unknown";
}

GeneratorKind parse_generator(const std::string& name) {
  if (name == "perlin") return GeneratorKind::perlin;
  if (name == "cutpaste") return GeneratorKind::cutpaste;
  if (name == "nsa") return GeneratorKind::nsa;
  throw ConfigError("unknown generator '" + name + "'");
}

void GeneratorConfig::validate() const {
  if (!(perlin_threshold > 0 && perlin_threshold < 1)) throw ConfigError("perlin threshold must lie in (0,1)");
  if (!(opacity_min > 0 && opacity_min <= opacity_max && opacity_max <= 1)) throw ConfigError("opacity range must lie in (0,1]");
  if (period_exponent_min < 0 || period_exponent_min > period_exponent_max) throw ConfigError("bad period exponent range");
  if (retry_cap < 1) throw ConfigError("retry cap must be positive");
  if (!(patch_area_min > 0 && patch_area_min <= patch_area_max && patch_area_max < 1)) throw ConfigError("bad patch area range");
  if (!(patch_aspect_min > 0 && patch_aspect_min <= patch_aspect_max)) throw ConfigError("bad patch aspect range");
  if (rotation.slight_min_degrees > rotation.slight_max_degrees) throw ConfigError("bad rotation range");
  for (int a : rotation.right_angles)
    if (a % 90 != 0) throw ConfigError("right-angle set may only hold multiples of 90");
}

NoiseField perlin_field(Index height, Index width, int period_x, int period_y, std::uint64_t seed) {
  if (height <= 0 || width <= 0) throw ArgumentError("perlin_field: dims must be positive");
  if (period_x <= 0 || period_y <= 0) throw ArgumentError("perlin_field: periods must be positive");

  // Lattice padded to cover the output, then evaluated only where needed.
  const Index cells_y = (height + period_y - 1) / period_y;
  const Index cells_x = (width + period_x - 1) / period_x;
  Rng rng(seed);
  RowArray<Scalar> gx(cells_y + 1, cells_x + 1), gy(cells_y + 1, cells_x + 1);
  for (Index i = 0; i <= cells_y; ++i)
    for (Index j = 0; j <= cells_x; ++j) {
      const Scalar angle = uniform(rng, 0.0, 2 * std::numbers::pi);
      gx(i, j) = std::cos(angle);
      gy(i, j) = std::sin(angle);
    }

  auto fade = [](Scalar t) { return t * t * t * (t * (t * 6 - 15) + 10); };
  NoiseField field{Plane(height, width), seed, period_x, period_y};
  for (Index y = 0; y < height; ++y) {
    const Index cy = y / period_y;
    const Scalar fy = static_cast<Scalar>(y % period_y) / period_y;
    const Scalar wy = fade(fy);
    for (Index x = 0; x < width; ++x) {
      const Index cx = x / period_x;
      const Scalar fx = static_cast<Scalar>(x % period_x) / period_x;
      const Scalar wx = fade(fx);
      const Scalar n00 = gx(cy, cx) * fx + gy(cy, cx) * fy;
      const Scalar n01 = gx(cy, cx + 1) * (fx - 1) + gy(cy, cx + 1) * fy;
      const Scalar n10 = gx(cy + 1, cx) * fx + gy(cy + 1, cx) * (fy - 1);
      const Scalar n11 = gx(cy + 1, cx + 1) * (fx - 1) + gy(cy + 1, cx + 1) * (fy - 1);
      const Scalar top = n00 + wx * (n01 - n00);
      const Scalar bottom = n10 + wx * (n11 - n10);
      field.values(y, x) = top + wy * (bottom - top);
    }
  }
  return field;
}

Mask binarize(const NoiseField& field, Scalar threshold) {
  if (!(threshold > 0 && threshold < 1)) throw ArgumentError("binarize: threshold must lie in (0,1)");
  return (field.values.abs() > threshold).cast<std::uint8_t>();
}

std::optional<SyntheticAnomaly> compose_anomaly(const Image& rotated, const Image& texture, const Mask& mask, Scalar beta) {
  if (!rotated.same_dims(texture)) throw ArgumentError("compose_anomaly: texture dims differ from base");
  if (mask.rows() != rotated.height() || mask.cols() != rotated.width()) throw ArgumentError("compose_anomaly: mask dims differ");
  if ((mask == 0).all()) return std::nullopt;
  SyntheticAnomaly out;
  out.rotated = rotated;
  out.mask = mask;
  const Plane weight = beta * mask.cast<Scalar>();
  for (Index c = 0; c < rotated.channel_count(); ++c)
    out.image.channels.push_back((1 - weight) * rotated.channels[c] + weight * texture.channels[c]);
  return out;
}

Image rotate_base(const Image& image, const RotationConfig& cfg, Rng& rng) {
  const Scalar angle = cfg.slight_min_degrees == cfg.slight_max_degrees
                           ? cfg.slight_min_degrees
                           : uniform(rng, cfg.slight_min_degrees, cfg.slight_max_degrees);
  Image out = rotate_degrees(image, angle);
  if (cfg.right_angles.empty()) return out;
  int right = cfg.right_angles[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(cfg.right_angles.size()) - 1))];
  int quarters = ((right / 90) % 4 + 4) % 4;
  if (image.height() != image.width() && quarters % 2 == 1) quarters = 0;
  return rotate_quarter(out, quarters);
}

namespace {

Image match_channels(const Image& texture, Index channels) {
  if (texture.channel_count() == channels) return texture;
  if (texture.channel_count() == 1) {
    Image out;
    for (Index c = 0; c < channels; ++c) out.channels.push_back(texture.channels[0]);
    return out;
  }
  if (channels == 1) {
    Image out;
    out.channels.push_back(luminance(texture));
    return out;
  }
  throw ArgumentError("texture channel count incompatible with base");
}

Rect sample_rect(Index height, Index width, Index margin, const GeneratorConfig& cfg, Rng& rng) {
  const Scalar area = uniform(rng, cfg.patch_area_min, cfg.patch_area_max) * static_cast<Scalar>(height * width);
  const Scalar log_aspect = uniform(rng, std::log(cfg.patch_aspect_min), std::log(cfg.patch_aspect_max));
  const Scalar aspect = std::exp(log_aspect);
  const Index max_h = height - 2 * margin, max_w = width - 2 * margin;
  Rect r;
  r.height = std::clamp<Index>(static_cast<Index>(std::lround(std::sqrt(area / aspect))), 1, max_h);
  r.width = std::clamp<Index>(static_cast<Index>(std::lround(std::sqrt(area * aspect))), 1, max_w);
  r.top = uniform_int(rng, static_cast<int>(margin), static_cast<int>(height - margin - r.height));
  r.left = uniform_int(rng, static_cast<int>(margin), static_cast<int>(width - margin - r.width));
  return r;
}

}  // namespace

SyntheticAnomaly synthesize_perlin(const ImageSample& base, const Image& texture, const GeneratorConfig& cfg,
                                   std::uint64_t seed) {
  cfg.validate();
  if (base.label != 0) throw ArgumentError("synthesize_perlin: base sample must be normal");
  Rng rng(seed);
  const Image rotated = rotate_base(base.pixels, cfg.rotation, rng);
  const Image tex = match_channels(resize_bilinear(texture, rotated.height(), rotated.width()), rotated.channel_count());

  for (int attempt = 0; attempt < cfg.retry_cap; ++attempt) {
    const int period_y = 1 << uniform_int(rng, cfg.period_exponent_min, cfg.period_exponent_max);
    const int period_x = 1 << uniform_int(rng, cfg.period_exponent_min, cfg.period_exponent_max);
    const NoiseField field = perlin_field(rotated.height(), rotated.width(), period_x, period_y, rng());
    const Scalar beta = uniform(rng, cfg.opacity_min, cfg.opacity_max);
    auto result = compose_anomaly(rotated, tex, binarize(field, cfg.perlin_threshold), beta);
    if (result) {
      result->generator = GeneratorKind::perlin;
      result->source = base.path;
      return std::move(*result);
    }
  }
  throw SynthesisError("perlin synthesis produced an empty mask " + std::to_string(cfg.retry_cap) + " times; threshold " +
                       std::to_string(cfg.perlin_threshold) + " is degenerate");
}

SyntheticAnomaly cutpaste_at(const ImageSample& base, const Rect& source, Index dst_top, Index dst_left) {
  const Index h = base.pixels.height(), w = base.pixels.width();
  if (source.height <= 0 || source.width <= 0 || source.height > h || source.width > w)
    throw ArgumentError("cutpaste: patch larger than image");
  if (source.top < 0 || source.left < 0 || source.top + source.height > h || source.left + source.width > w ||
      dst_top < 0 || dst_left < 0 || dst_top + source.height > h || dst_left + source.width > w)
    throw ArgumentError("cutpaste: patch outside image");
  if (source.top == dst_top && source.left == dst_left)
    std::clog << "warning: cutpaste pasted patch onto its own source location (" << base.path << ")\n";

  SyntheticAnomaly out;
  out.rotated = base.pixels;
  out.image = base.pixels;
  for (Index c = 0; c < base.pixels.channel_count(); ++c)
    out.image.channels[c].block(dst_top, dst_left, source.height, source.width) =
        base.pixels.channels[c].block(source.top, source.left, source.height, source.width);
  out.mask = Mask::Zero(h, w);
  out.mask.block(dst_top, dst_left, source.height, source.width).setOnes();
  out.generator = GeneratorKind::cutpaste;
  out.source = base.path;
  return out;
}

SyntheticAnomaly synthesize_cutpaste(const ImageSample& base, const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (base.label != 0) throw ArgumentError("synthesize_cutpaste: base sample must be normal");
  Rng rng(seed);
  const Rect src = sample_rect(base.pixels.height(), base.pixels.width(), 0, cfg, rng);
  const Index top = uniform_int(rng, 0, static_cast<int>(base.pixels.height() - src.height));
  const Index left = uniform_int(rng, 0, static_cast<int>(base.pixels.width() - src.width));
  return cutpaste_at(base, src, top, left);
}

SyntheticAnomaly poisson_blend(const ImageSample& base, const Image& donor, const Rect& source, Index dst_top,
                               Index dst_left) {
  const Index h = base.pixels.height(), w = base.pixels.width();
  if (!base.pixels.same_dims(donor)) throw ArgumentError("poisson_blend: donor dims differ from base");
  const Index rh = source.height, rw = source.width;
  auto inside_with_margin = [&](Index top, Index left) {
    return rh > 0 && rw > 0 && top >= 1 && left >= 1 && top + rh <= h - 1 && left + rw <= w - 1;
  };
  if (!inside_with_margin(source.top, source.left) || !inside_with_margin(dst_top, dst_left))
    throw ArgumentError("poisson_blend: rectangles need a one-pixel margin inside the image");

  // Unknown k = y * rw + x over the destination rectangle; 5-point stencil.
  const Index n = rh * rw;
  std::vector<Eigen::Triplet<Scalar>> triplets;
  triplets.reserve(static_cast<std::size_t>(5 * n));
  for (Index y = 0; y < rh; ++y)
    for (Index x = 0; x < rw; ++x) {
      const Index k = y * rw + x;
      triplets.emplace_back(k, k, 4.0);
      if (y > 0) triplets.emplace_back(k, k - rw, -1.0);
      if (y + 1 < rh) triplets.emplace_back(k, k + rw, -1.0);
      if (x > 0) triplets.emplace_back(k, k - 1, -1.0);
      if (x + 1 < rw) triplets.emplace_back(k, k + 1, -1.0);
    }
  Eigen::SparseMatrix<Scalar> laplacian(n, n);
  laplacian.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::ConjugateGradient<Eigen::SparseMatrix<Scalar>, Eigen::Lower | Eigen::Upper> solver;
  solver.setTolerance(1e-12);
  solver.setMaxIterations(std::max<Index>(1000, 10 * n));
  solver.compute(laplacian);
  if (solver.info() != Eigen::Success) throw SynthesisError("poisson_blend: factorization failed");

  SyntheticAnomaly out;
  out.rotated = base.pixels;
  out.image = base.pixels;
  constexpr Index dy[4] = {-1, 1, 0, 0};
  constexpr Index dx[4] = {0, 0, -1, 1};
  for (Index c = 0; c < base.pixels.channel_count(); ++c) {
    const Plane& b = base.pixels.channels[c];
    const Plane& d = donor.channels[c];
    Eigen::VectorXd rhs(n);
    for (Index y = 0; y < rh; ++y)
      for (Index x = 0; x < rw; ++x) {
        const Scalar dp = d(source.top + y, source.left + x);
        Scalar r = 0;
        for (int t = 0; t < 4; ++t) {
          const Index ny = y + dy[t], nx = x + dx[t];
          r += dp - d(source.top + ny, source.left + nx);
          if (ny < 0 || ny >= rh || nx < 0 || nx >= rw) r += b(dst_top + ny, dst_left + nx);
        }
        rhs[y * rw + x] = r;
      }
    Eigen::VectorXd guess(n);
    for (Index y = 0; y < rh; ++y)
      for (Index x = 0; x < rw; ++x) guess[y * rw + x] = b(dst_top + y, dst_left + x);
    const Eigen::VectorXd u = solver.solveWithGuess(rhs, guess);
    if (solver.info() != Eigen::Success)
      throw SynthesisError("poisson_blend: conjugate gradient did not converge (error " + std::to_string(solver.error()) + ")");
    for (Index y = 0; y < rh; ++y)
      for (Index x = 0; x < rw; ++x) out.image.channels[c](dst_top + y, dst_left + x) = u[y * rw + x];
  }
  out.mask = Mask::Zero(h, w);
  out.mask.block(dst_top, dst_left, rh, rw).setOnes();
  out.generator = GeneratorKind::nsa;
  out.source = base.path;
  return out;
}

SyntheticAnomaly synthesize_nsa(const ImageSample& base, const ImageSample& donor, const GeneratorConfig& cfg,
                                std::uint64_t seed) {
  cfg.validate();
  if (base.label != 0 || donor.label != 0) throw ArgumentError("synthesize_nsa: base and donor must be normal");
  if (!base.pixels.same_dims(donor.pixels)) throw ArgumentError("synthesize_nsa: base and donor dims differ");
  Rng rng(seed);
  const Rect src = sample_rect(base.pixels.height(), base.pixels.width(), 1, cfg, rng);
  const Index top = uniform_int(rng, 1, static_cast<int>(base.pixels.height() - 1 - src.height));
  const Index left = uniform_int(rng, 1, static_cast<int>(base.pixels.width() - 1 - src.width));
  return poisson_blend(base, donor.pixels, src, top, left);
}

SyntheticAnomaly synthesize(const ImageSample& base, const ImageSample& partner, const GeneratorConfig& cfg,
                            std::uint64_t seed) {
  switch (cfg.kind) {
    case GeneratorKind::perlin: return synthesize_perlin(base, partner.pixels, cfg, seed);
    case GeneratorKind::cutpaste: return synthesize_cutpaste(base, cfg, seed);
    case GeneratorKind::nsa: return synthesize_nsa(base, partner, cfg, seed);
  }
  throw ConfigError("unknown generator");
}

}  // namespace tocoad
