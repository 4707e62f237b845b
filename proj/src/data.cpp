#include "tocoad/data.hpp"

#include "tocoad/common.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace tocoad {

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

void require_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetLayoutError("missing directory " + dir.string());
}

ImageSample load_sample(const fs::path& file, const std::string& category, int label) {
  ImageSample s;
  s.pixels = read_image(file);
  s.label = label;
  s.category = category;
  s.path = file.string();
  return s;
}

}  // namespace

std::size_t DatasetSplit::anomalous_count() const {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [](const ImageSample& s) { return s.label == 1; }));
}

DatasetSplit load_category(const fs::path& root, const std::string& category, SplitKind split) {
  const fs::path base = root / category;
  require_dir(base);
  DatasetSplit out;
  out.split = split;
  out.category = category;

  if (split == SplitKind::train) {
    const fs::path good = base / "train" / "good";
    require_dir(good);
    for (const auto& file : sorted_images(good)) out.samples.push_back(load_sample(file, category, 0));
    return out;
  }

  const fs::path test = base / "test";
  require_dir(test);
  for (const auto& defect_dir : sorted_subdirs(test)) {
    const std::string defect = defect_dir.filename().string();
    const auto files = sorted_images(defect_dir);
    if (defect == "good") {
      for (const auto& file : files) {
        ImageSample s = load_sample(file, category, 0);
        s.mask = Mask::Zero(s.pixels.height(), s.pixels.width());
        out.samples.push_back(std::move(s));
      }
      continue;
    }
    const fs::path gt_dir = base / "ground_truth" / defect;
    require_dir(gt_dir);
    const auto masks = sorted_images(gt_dir);
    if (masks.size() != files.size())
      throw IntegrityError(defect_dir.string() + ": " + std::to_string(files.size()) + " images but " +
                           std::to_string(masks.size()) + " masks");
    for (const auto& file : files) {
      const fs::path mask_path = gt_dir / (file.stem().string() + "_mask.png");
      if (!fs::exists(mask_path)) throw IntegrityError("missing ground-truth mask " + mask_path.string());
      ImageSample s = load_sample(file, category, 1);
      Mask m = read_mask(mask_path);
      if (m.rows() != s.pixels.height() || m.cols() != s.pixels.width())
        throw IntegrityError("mask dims differ from image " + file.string());
      if ((m == 0).all()) throw IntegrityError("empty ground-truth mask " + mask_path.string());
      s.mask = std::move(m);
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

TextureCorpus load_texture_corpus(const fs::path& dir) {
  require_dir(dir);
  TextureCorpus corpus;
  corpus.source = dir;
  for (const auto& file : sorted_images(dir)) corpus.images.push_back(read_image(file));
  if (corpus.images.empty()) throw DatasetLayoutError("texture corpus " + dir.string() + " holds no images");
  return corpus;
}

ImageSample preprocess(const ImageSample& sample, int resize, int crop) {
  if (crop <= 0 || resize <= 0) throw ConfigError("preprocess: sizes must be positive");
  if (crop > resize) throw ConfigError("preprocess: crop " + std::to_string(crop) + " exceeds resize " + std::to_string(resize));
  if (sample.preprocessed && sample.pixels.height() == crop && sample.pixels.width() == crop) return sample;

  ImageSample out = sample;
  out.pixels = center_crop(resize_bilinear(sample.pixels, resize, resize), crop, crop);
  if (sample.mask) out.mask = center_crop(resize_nearest(*sample.mask, resize, resize), crop, crop);
  out.preprocessed = true;
  return out;
}

DatasetSplit preprocess(const DatasetSplit& split, int resize, int crop) {
  DatasetSplit out;
  out.split = split.split;
  out.category = split.category;
  out.samples.reserve(split.samples.size());
  for (const auto& s : split.samples) out.samples.push_back(preprocess(s, resize, crop));
  return out;
}

std::string split_checksum(const DatasetSplit& split) {
  Fnv1a h;
  for (const auto& s : split.samples) {
    h.update(fs::path(s.path).filename().string());
    h.update(&s.label, sizeof(s.label));
    for (const auto& c : s.pixels.channels) {
      // Quantize so the checksum is insensitive to the float path taken.
      const RowArray<std::uint8_t> q = (c * 255.0).round().cast<std::uint8_t>();
      h.update(q.data(), static_cast<std::size_t>(q.size()));
    }
    if (s.mask) h.update(s.mask->data(), static_cast<std::size_t>(s.mask->size()));
  }
  return h.hex();
}

namespace {

std::size_t copy_images(const fs::path& from, const fs::path& to) {
  require_dir(from);
  fs::create_directories(to);
  std::size_t n = 0;
  for (const auto& file : sorted_images(from)) {
    write_image(to / (file.stem().string() + ".png"), read_image(file));
    ++n;
  }
  return n;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace

std::size_t convert_layout(const fs::path& src_root, const std::string& category, SourceLayout layout, const fs::path& dst_root) {
  const fs::path dst = dst_root / category;
  std::size_t written = 0;

  if (layout == SourceLayout::btad) {
    const fs::path src = src_root / category;
    require_dir(src);
    written += copy_images(src / "train" / "ok", dst / "train" / "good");
    written += copy_images(src / "test" / "ok", dst / "test" / "good");
    written += copy_images(src / "test" / "ko", dst / "test" / "ko");
    const fs::path gt_src = src / "ground_truth" / "ko";
    require_dir(gt_src);
    fs::create_directories(dst / "ground_truth" / "ko");
    for (const auto& file : sorted_images(gt_src))
      write_mask(dst / "ground_truth" / "ko" / (file.stem().string() + "_mask.png"), read_mask(file));
    return written;
  }

  // VisA: split_csv/1cls.csv with columns object,split,label,image,mask.
  const fs::path csv = src_root / "split_csv" / "1cls.csv";
  std::ifstream in(csv);
  if (!in) throw DatasetLayoutError("missing split file " + csv.string());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto cells = split_csv_line(line);
    if (cells.size() < 4) continue;
    if (cells[0] != category) continue;
    const bool train = cells[1] == "train";
    const bool anomalous = cells[2] == "anomaly";
    const fs::path image_path = src_root / cells[3];
    const std::string stem = image_path.stem().string();
    fs::path out_dir = dst / (train ? "train" : "test") / (anomalous ? "anomaly" : "good");
    fs::create_directories(out_dir);
    write_image(out_dir / (stem + ".png"), read_image(image_path));
    ++written;
    if (anomalous) {
      if (cells.size() < 5 || cells[4].empty()) throw IntegrityError("VisA anomaly without mask: " + cells[3]);
      fs::create_directories(dst / "ground_truth" / "anomaly");
      write_mask(dst / "ground_truth" / "anomaly" / (stem + "_mask.png"), read_mask(src_root / cells[4]));
    }
  }
  if (written == 0) throw DatasetLayoutError("no VisA rows for category " + category);
  return written;
}

}  // namespace tocoad
