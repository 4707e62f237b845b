#pragma once

#include "tocoad/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tocoad {

using Plane = RowArray<Scalar>;
using Mask = RowArray<std::uint8_t>;

// Planar color image, values nominally in [0, 1].
struct Image {
  std::vector<Plane> channels;

  Image() = default;
  Image(Index channel_count, Index height, Index width, Scalar fill = 0);

  Index height() const { return channels.empty() ? 0 : channels.front().rows(); }
  Index width() const { return channels.empty() ? 0 : channels.front().cols(); }
  Index channel_count() const { return static_cast<Index>(channels.size()); }
  bool same_dims(const Image& other) const;
};

// Half-pixel-centered bilinear resample.
Image resize_bilinear(const Image& image, Index height, Index width);
Plane resize_bilinear(const Plane& plane, Index height, Index width);
Mask resize_nearest(const Mask& mask, Index height, Index width);

Image center_crop(const Image& image, Index height, Index width);
Mask center_crop(const Mask& mask, Index height, Index width);
Image crop(const Image& image, Index top, Index left, Index height, Index width);

// Counter-clockwise rotation by quarter turns; exact index permutation.
Image rotate_quarter(const Image& image, int quarter_turns);
// Rotation about the image center with bilinear sampling and reflected
// borders. Zero degrees returns the input unchanged.
Image rotate_degrees(const Image& image, Scalar degrees);

// Separable Gaussian with reflected borders; sigma <= 0 returns the input.
Plane gaussian_blur(const Plane& plane, Scalar sigma);

Plane luminance(const Image& image);

// Stack images into an (n, c, h, w) tensor; all must share dims.
Tensor to_tensor(const std::vector<const Image*>& images);
Tensor to_tensor(const Image& image);
Tensor mask_tensor(const std::vector<const Mask*>& masks);

// 8-bit file IO. Grayscale files are expanded to three channels on read.
Image read_image(const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);
void write_mask(const std::filesystem::path& path, const Mask& mask);

}  // namespace tocoad
