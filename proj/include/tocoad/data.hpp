#pragma once

#include "tocoad/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tocoad {

enum class SplitKind { train, test };

struct ImageSample {
  Image pixels;
  int label = 0;  // 0 normal, 1 anomalous
  std::optional<Mask> mask;
  std::string category;
  std::string path;
  bool preprocessed = false;
};

struct DatasetSplit {
  std::vector<ImageSample> samples;
  SplitKind split = SplitKind::train;
  std::string category;

  std::size_t size() const { return samples.size(); }
  std::size_t anomalous_count() const;
};

struct TextureCorpus {
  std::vector<Image> images;
  std::filesystem::path source;
};

// Reads <root>/<category>/{train/good, test/<defect>, ground_truth/<defect>}.
// Ordering is lexicographic by path. Test `good` images get all-zero masks;
// anomalous images are paired with <stem>_mask.png.
DatasetSplit load_category(const std::filesystem::path& root, const std::string& category, SplitKind split);

// All decodable images in a flat directory, sorted by name.
TextureCorpus load_texture_corpus(const std::filesystem::path& dir);

// Bilinear resize of the shorter square to `resize`, center crop to `crop`.
// Masks use nearest-neighbor so they stay binary. A sample already produced
// by preprocess at this crop size is returned unchanged.
ImageSample preprocess(const ImageSample& sample, int resize, int crop);
DatasetSplit preprocess(const DatasetSplit& split, int resize, int crop);

// Content checksum over paths, labels, pixels and masks.
std::string split_checksum(const DatasetSplit& split);

enum class SourceLayout { btad, visa };

// Rewrites a BTAD or VisA category into the MVTec directory schema under
// dst/<category>. Returns the number of images written.
std::size_t convert_layout(const std::filesystem::path& src_root, const std::string& category, SourceLayout layout,
                           const std::filesystem::path& dst_root);

}  // namespace tocoad
