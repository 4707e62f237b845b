#include "tocoad/image.hpp"

#include "tocoad/common.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tocoad {

namespace {

Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

Scalar sample_reflect(const Plane& p, Scalar y, Scalar x) {
  const Index y0 = static_cast<Index>(std::floor(y));
  const Index x0 = static_cast<Index>(std::floor(x));
  const Scalar fy = y - static_cast<Scalar>(y0);
  const Scalar fx = x - static_cast<Scalar>(x0);
  const Index h = p.rows(), w = p.cols();
  const Index ya = reflect(y0, h), yb = reflect(y0 + 1, h);
  const Index xa = reflect(x0, w), xb = reflect(x0 + 1, w);
  return (1 - fy) * ((1 - fx) * p(ya, xa) + fx * p(ya, xb)) + fy * ((1 - fx) * p(yb, xa) + fx * p(yb, xb));
}

}  // namespace

Image::Image(Index channel_count, Index height, Index width, Scalar fill)
    : channels(static_cast<std::size_t>(channel_count), Plane::Constant(height, width, fill)) {}

bool Image::same_dims(const Image& other) const {
  return channel_count() == other.channel_count() && height() == other.height() && width() == other.width();
}

Plane resize_bilinear(const Plane& plane, Index height, Index width) {
  if (plane.rows() == height && plane.cols() == width) return plane;
  Plane out(height, width);
  const Scalar ry = static_cast<Scalar>(plane.rows()) / static_cast<Scalar>(height);
  const Scalar rx = static_cast<Scalar>(plane.cols()) / static_cast<Scalar>(width);
  for (Index y = 0; y < height; ++y) {
    Scalar sy = std::max<Scalar>(0, (static_cast<Scalar>(y) + 0.5) * ry - 0.5);
    const Index y0 = std::min<Index>(static_cast<Index>(sy), plane.rows() - 1);
    const Index y1 = std::min<Index>(y0 + 1, plane.rows() - 1);
    const Scalar fy = sy - static_cast<Scalar>(y0);
    for (Index x = 0; x < width; ++x) {
      Scalar sx = std::max<Scalar>(0, (static_cast<Scalar>(x) + 0.5) * rx - 0.5);
      const Index x0 = std::min<Index>(static_cast<Index>(sx), plane.cols() - 1);
      const Index x1 = std::min<Index>(x0 + 1, plane.cols() - 1);
      const Scalar fx = sx - static_cast<Scalar>(x0);
      out(y, x) = (1 - fy) * ((1 - fx) * plane(y0, x0) + fx * plane(y0, x1)) +
                  fy * ((1 - fx) * plane(y1, x0) + fx * plane(y1, x1));
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, Index height, Index width) {
  Image out;
  for (const auto& c : image.channels) out.channels.push_back(resize_bilinear(c, height, width));
  return out;
}

Mask resize_nearest(const Mask& mask, Index height, Index width) {
  if (mask.rows() == height && mask.cols() == width) return mask;
  Mask out(height, width);
  for (Index y = 0; y < height; ++y) {
    const Index sy = std::min<Index>(mask.rows() - 1, static_cast<Index>(std::floor((y + 0.5) * mask.rows() / static_cast<double>(height))));
    for (Index x = 0; x < width; ++x) {
      const Index sx = std::min<Index>(mask.cols() - 1, static_cast<Index>(std::floor((x + 0.5) * mask.cols() / static_cast<double>(width))));
      out(y, x) = mask(sy, sx);
    }
  }
  return out;
}

Image crop(const Image& image, Index top, Index left, Index height, Index width) {
  if (top < 0 || left < 0 || top + height > image.height() || left + width > image.width())
    throw ArgumentError("crop window outside image");
  Image out;
  for (const auto& c : image.channels) out.channels.push_back(c.block(top, left, height, width));
  return out;
}

Image center_crop(const Image& image, Index height, Index width) {
  return crop(image, (image.height() - height) / 2, (image.width() - width) / 2, height, width);
}

Mask center_crop(const Mask& mask, Index height, Index width) {
  if (height > mask.rows() || width > mask.cols()) throw ArgumentError("crop window outside mask");
  return mask.block((mask.rows() - height) / 2, (mask.cols() - width) / 2, height, width);
}

Image rotate_quarter(const Image& image, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return image;
  Image out;
  for (const auto& p : image.channels) {
    const Index h = p.rows(), w = p.cols();
    Plane r;
    if (q == 2) {
      r = p.reverse();
    } else {
      r.resize(w, h);
      for (Index y = 0; y < w; ++y)
        for (Index x = 0; x < h; ++x) r(y, x) = q == 1 ? p(x, w - 1 - y) : p(h - 1 - x, y);
    }
    out.channels.push_back(std::move(r));
  }
  return out;
}

Image rotate_degrees(const Image& image, Scalar degrees) {
  if (degrees == 0) return image;
  const Scalar rad = degrees * std::numbers::pi / 180.0;
  const Scalar c = std::cos(rad), s = std::sin(rad);
  const Scalar cy = (static_cast<Scalar>(image.height()) - 1) / 2;
  const Scalar cx = (static_cast<Scalar>(image.width()) - 1) / 2;
  Image out(image.channel_count(), image.height(), image.width());
  for (Index y = 0; y < image.height(); ++y) {
    for (Index x = 0; x < image.width(); ++x) {
      const Scalar dy = static_cast<Scalar>(y) - cy, dx = static_cast<Scalar>(x) - cx;
      const Scalar sx = c * dx - s * dy + cx;
      const Scalar sy = s * dx + c * dy + cy;
      for (Index ch = 0; ch < image.channel_count(); ++ch)
        out.channels[ch](y, x) = sample_reflect(image.channels[ch], sy, sx);
    }
  }
  return out;
}

Plane gaussian_blur(const Plane& plane, Scalar sigma) {
  if (sigma <= 0) return plane;
  const Index radius = static_cast<Index>(std::ceil(4 * sigma));
  Eigen::ArrayXd kernel(2 * radius + 1);
  for (Index i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  kernel /= kernel.sum();

  const Index h = plane.rows(), w = plane.cols();
  Plane tmp(h, w), out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      Scalar acc = 0;
      for (Index k = -radius; k <= radius; ++k) acc += kernel[k + radius] * plane(y, reflect(x + k, w));
      tmp(y, x) = acc;
    }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      Scalar acc = 0;
      for (Index k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(reflect(y + k, h), x);
      out(y, x) = acc;
    }
  return out;
}

Plane luminance(const Image& image) {
  if (image.channel_count() == 1) return image.channels[0];
  if (image.channel_count() != 3) throw ArgumentError("luminance needs 1 or 3 channels");
  return 0.299 * image.channels[0] + 0.587 * image.channels[1] + 0.114 * image.channels[2];
}

Tensor to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ArgumentError("to_tensor: no images");
  const Image& first = *images.front();
  Tensor t(Shape{static_cast<Index>(images.size()), first.channel_count(), first.height(), first.width()});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (!images[n]->same_dims(first)) throw ArgumentError("to_tensor: images differ in dims");
    for (Index c = 0; c < first.channel_count(); ++c) t.plane(static_cast<Index>(n), c) = images[n]->channels[c].matrix();
  }
  return t;
}

Tensor to_tensor(const Image& image) { return to_tensor(std::vector<const Image*>{&image}); }

Tensor mask_tensor(const std::vector<const Mask*>& masks) {
  if (masks.empty()) throw ArgumentError("mask_tensor: no masks");
  const Index h = masks.front()->rows(), w = masks.front()->cols();
  Tensor t(Shape{static_cast<Index>(masks.size()), 1, h, w});
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n]->rows() != h || masks[n]->cols() != w) throw ArgumentError("mask_tensor: masks differ in dims");
    t.plane(static_cast<Index>(n), 0) = masks[n]->cast<Scalar>().matrix();
  }
  return t;
}

Image read_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw IntegrityError("cannot decode image " + path.string());
  Image out(3, raw.rows, raw.cols);
  for (int y = 0; y < raw.rows; ++y) {
    const auto* row = raw.ptr<cv::Vec3b>(y);
    for (int x = 0; x < raw.cols; ++x)
      for (int c = 0; c < 3; ++c) out.channels[static_cast<std::size_t>(c)](y, x) = row[x][2 - c] / 255.0;
  }
  return out;
}

Mask read_mask(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (raw.empty()) throw IntegrityError("cannot decode mask " + path.string());
  Mask out(raw.rows, raw.cols);
  for (int y = 0; y < raw.rows; ++y) {
    const auto* row = raw.ptr<std::uint8_t>(y);
    for (int x = 0; x < raw.cols; ++x) out(y, x) = row[x] > 0 ? 1 : 0;
  }
  return out;
}

void write_image(const std::filesystem::path& path, const Image& image) {
  const bool gray = image.channel_count() == 1;
  cv::Mat raw(static_cast<int>(image.height()), static_cast<int>(image.width()), gray ? CV_8UC1 : CV_8UC3);
  auto to8 = [](Scalar v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  for (int y = 0; y < raw.rows; ++y)
    for (int x = 0; x < raw.cols; ++x) {
      if (gray) {
        raw.at<std::uint8_t>(y, x) = to8(image.channels[0](y, x));
      } else {
        for (int c = 0; c < 3; ++c) raw.at<cv::Vec3b>(y, x)[2 - c] = to8(image.channels[static_cast<std::size_t>(c)](y, x));
      }
    }
  if (!cv::imwrite(path.string(), raw)) throw IntegrityError("cannot write image " + path.string());
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
  cv::Mat raw(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), CV_8UC1);
  for (int y = 0; y < raw.rows; ++y)
    for (int x = 0; x < raw.cols; ++x) raw.at<std::uint8_t>(y, x) = mask(y, x) ? 255 : 0;
  if (!cv::imwrite(path.string(), raw)) throw IntegrityError("cannot write mask " + path.string());
}

}  // namespace tocoad
