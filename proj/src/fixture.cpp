#include "tocoad/fixture.hpp"

#include <cmath>
#include <numbers>

namespace tocoad {

namespace fs = std::filesystem;

namespace {

std::string numbered(int i, const std::string& suffix = "") {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%03d%s.png", i, suffix.c_str());
  return buf;
}

struct PatternStyle {
  double period;
  double angle;   // stripes
  double radius;  // dots
};

PatternStyle normal_style(const std::string& category) {
  return category == "dots" ? PatternStyle{10, 0, 2.6} : PatternStyle{8, 0.5, 0};
}

// Perpendicular stripes, or oversized dots that merge into a lattice.
PatternStyle defect_style(const std::string& category) {
  return category == "dots" ? PatternStyle{10, 0, 4.2} : PatternStyle{8, 0.5 + std::numbers::pi / 2, 0};
}

// Periodic field in [0, 1], 1 on stripe crests and dot interiors.
Plane pattern_field(const std::string& category, int size, const PatternStyle& style, Rng& rng) {
  Plane t(size, size);
  if (category == "dots") {
    const double oy = uniform(rng, 0, style.period), ox = uniform(rng, 0, style.period);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dy = std::fmod(y + 0.5 + oy, style.period) - style.period / 2;
        const double dx = std::fmod(x + 0.5 + ox, style.period) - style.period / 2;
        t(y, x) = std::clamp(style.radius + 0.5 - std::sqrt(dy * dy + dx * dx), 0.0, 1.0);
      }
  } else {
    const double phase = uniform(rng, 0, 2 * std::numbers::pi);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double u = std::cos(style.angle) * x + std::sin(style.angle) * y;
        t(y, x) = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * u / style.period + phase);
      }
  }
  return t;
}

// Foreground and background colors under a per-image gain and tint, the
// nuisance variation of the fixture.
struct Palette {
  std::array<Scalar, 3> fg, bg;
};

Palette draw_palette(Rng& rng) {
  Palette p{{0.25, 0.35, 0.6}, {0.75, 0.75, 0.7}};
  const double gain = uniform(rng, 0.95, 1.05);
  for (std::size_t c = 0; c < 3; ++c) {
    const double tint = uniform(rng, -0.02, 0.02);
    p.fg[c] = std::clamp(gain * p.fg[c] + tint, 0.0, 1.0);
    p.bg[c] = std::clamp(gain * p.bg[c] + tint, 0.0, 1.0);
  }
  return p;
}

Image colorize(const Plane& field, const Palette& p, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 0.02);
  Image img(3, field.rows(), field.cols());
  for (std::size_t c = 0; c < 3; ++c)
    for (Index y = 0; y < field.rows(); ++y)
      for (Index x = 0; x < field.cols(); ++x)
        img.channels[c](y, x) = std::clamp(field(y, x) * p.fg[c] + (1 - field(y, x)) * p.bg[c] + noise(rng), 0.0, 1.0);
  return img;
}

Mask square_mask(int size, Rng& rng) {
  const int side = uniform_int(rng, size / 5, size / 4);
  const int top = uniform_int(rng, 2, size - side - 2);
  const int left = uniform_int(rng, 2, size - side - 2);
  Mask m = Mask::Zero(size, size);
  m.block(top, left, side, side).setOnes();
  return m;
}

Mask blob_mask(int size, Rng& rng) {
  Mask m = Mask::Zero(size, size);
  const double cy = uniform(rng, size * 0.25, size * 0.75), cx = uniform(rng, size * 0.25, size * 0.75);
  for (int k = 0; k < 3; ++k) {
    const double r = uniform(rng, size / 14.0, size / 9.0);
    const double y0 = cy + uniform(rng, -r, r), x0 = cx + uniform(rng, -r, r);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if ((y + 0.5 - y0) * (y + 0.5 - y0) + (x + 0.5 - x0) * (x + 0.5 - x0) <= r * r) m(y, x) = 1;
  }
  return m;
}

Image render_texture(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(3, size, size);
  for (auto& ch : img.channels) {
    ch.setConstant(uniform(rng, 0.2, 0.8));
    for (int k = 0; k < 4; ++k) {
      const double fy = uniform(rng, 0.5, 4), fx = uniform(rng, 0.5, 4), ph = uniform(rng, 0, 2 * std::numbers::pi);
      const double amp = uniform(rng, 0.05, 0.15);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) ch(y, x) += amp * std::sin(2 * std::numbers::pi * (fy * y + fx * x) / size + ph);
    }
    ch = ch.cwiseMax(0.0).cwiseMin(1.0);
  }
  return img;
}

// Square: the pattern inside is replaced by the defect style. Blob: a solid
// blot in the foreground color.
Image render_defect(const std::string& category, const std::string& kind, int size, Rng& rng, Mask& mask) {
  const Palette palette = draw_palette(rng);
  Plane field = pattern_field(category, size, normal_style(category), rng);
  if (kind == "square") {
    mask = square_mask(size, rng);
    const Plane other = pattern_field(category, size, defect_style(category), rng);
    field = (mask > 0).select(other, field);
  } else {
    mask = blob_mask(size, rng);
    field = (mask > 0).select(Plane::Constant(size, size, 1.0), field);
  }
  return colorize(field, palette, rng);
}

}  // namespace

Image render_pattern(const std::string& category, int size, std::uint64_t seed) {
  Rng rng(seed);
  const Palette palette = draw_palette(rng);
  return colorize(pattern_field(category, size, normal_style(category), rng), palette, rng);
}

std::size_t make_fixture(const fs::path& root, const FixtureOptions& options) {
  if (options.size < 32 || options.train_count < 2 || options.test_good_count < 1 || options.test_defect_count < 1)
    throw ArgumentError("make_fixture: size >= 32, train >= 2 and nonempty test splits required");
  std::size_t written = 0;
  for (std::size_t ci = 0; ci < options.categories.size(); ++ci) {
    const std::string& cat = options.categories[ci];
    const fs::path dir = root / cat;
    fs::create_directories(dir / "train" / "good");
    fs::create_directories(dir / "test" / "good");
    for (int i = 0; i < options.train_count; ++i, ++written)
      write_image(dir / "train" / "good" / numbered(i), render_pattern(cat, options.size, mix_seed(options.seed, ci, 0, i)));
    for (int i = 0; i < options.test_good_count; ++i, ++written)
      write_image(dir / "test" / "good" / numbered(i), render_pattern(cat, options.size, mix_seed(options.seed, ci, 1, i)));
    for (const std::string kind : {"square", "blob"}) {
      fs::create_directories(dir / "test" / kind);
      fs::create_directories(dir / "ground_truth" / kind);
      for (int i = 0; i < options.test_defect_count; ++i, ++written) {
        Rng rng(mix_seed(options.seed, ci, kind == "square" ? 2 : 3, i));
        Mask mask;
        const Image img = render_defect(cat, kind, options.size, rng, mask);
        write_image(dir / "test" / kind / numbered(i), img);
        write_mask(dir / "ground_truth" / kind / numbered(i, "_mask"), mask);
      }
    }
  }
  fs::create_directories(root / "textures");
  for (int i = 0; i < options.texture_count; ++i, ++written)
    write_image(root / "textures" / numbered(i), render_texture(options.size, mix_seed(options.seed, 99, i)));
  return written;
}

}  // namespace tocoad
