#include "support.hpp"

#include "tocoad/data.hpp"
#include "tocoad/fixture.hpp"

#include <doctest.h>

#include <fstream>

using namespace testing;
namespace fs = std::filesystem;

namespace {

Image gradient_image(Index h, Index w, Scalar offset = 0) {
  Image img(3, h, w);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        img.channels[static_cast<std::size_t>(c)](y, x) = std::fmod(offset + 0.1 * c + 0.003 * y + 0.005 * x, 1.0);
  return img;
}

Mask box_mask(Index h, Index w, Index top, Index left, Index side) {
  Mask m = Mask::Zero(h, w);
  m.block(top, left, side, side).setOnes();
  return m;
}

// <root>/widget with 3 train images, 2 good and 1 crack test images.
fs::path small_category(const std::string& name) {
  const fs::path root = scratch(name);
  const fs::path cat = root / "widget";
  fs::create_directories(cat / "train" / "good");
  fs::create_directories(cat / "test" / "good");
  fs::create_directories(cat / "test" / "crack");
  fs::create_directories(cat / "ground_truth" / "crack");
  for (int i = 0; i < 3; ++i) write_image(cat / "train" / "good" / ("00" + std::to_string(i) + ".png"), gradient_image(20, 24, 0.1 * i));
  for (int i = 0; i < 2; ++i) write_image(cat / "test" / "good" / ("00" + std::to_string(i) + ".png"), gradient_image(20, 24, 0.5 + 0.1 * i));
  write_image(cat / "test" / "crack" / "000.png", gradient_image(20, 24, 0.9));
  write_mask(cat / "ground_truth" / "crack" / "000_mask.png", box_mask(20, 24, 4, 6, 5));
  return root;
}

}  // namespace

TEST_CASE("train split holds only normal samples in path order") {
  const fs::path root = small_category("data_train");
  const DatasetSplit train = load_category(root, "widget", SplitKind::train);
  REQUIRE(train.size() == 3);
  CHECK(train.anomalous_count() == 0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(train.samples[i].label == 0);
    CHECK(fs::path(train.samples[i].path).filename() == "00" + std::to_string(i) + ".png");
    CHECK(train.samples[i].pixels.channel_count() == 3);
  }
}

TEST_CASE("test split pairs defects with masks") {
  const fs::path root = small_category("data_test");
  const DatasetSplit test = load_category(root, "widget", SplitKind::test);
  REQUIRE(test.size() == 3);
  // "crack" sorts before "good".
  CHECK(test.samples[0].label == 1);
  CHECK(test.samples[1].label == 0);
  CHECK(test.samples[2].label == 0);
  REQUIRE(test.samples[0].mask);
  CHECK((*test.samples[0].mask == box_mask(20, 24, 4, 6, 5)).all());
  REQUIRE(test.samples[1].mask);
  CHECK((test.samples[1].mask->cast<int>() == 0).all());
}

TEST_CASE("layout errors") {
  const fs::path root = small_category("data_errors");
  CHECK_THROWS_AS(load_category(root, "missing", SplitKind::train), DatasetLayoutError);
  CHECK_THROWS_AS(load_texture_corpus(root / "nowhere"), DatasetLayoutError);

  write_image(root / "widget" / "test" / "crack" / "001.png", gradient_image(20, 24));
  CHECK_THROWS_AS(load_category(root, "widget", SplitKind::test), IntegrityError);
  write_mask(root / "widget" / "ground_truth" / "crack" / "001_mask.png", Mask::Zero(20, 24));
  CHECK_THROWS_AS(load_category(root, "widget", SplitKind::test), IntegrityError);
  write_mask(root / "widget" / "ground_truth" / "crack" / "001_mask.png", box_mask(10, 10, 1, 1, 3));
  CHECK_THROWS_AS(load_category(root, "widget", SplitKind::test), IntegrityError);
  fs::remove_all(root / "widget" / "ground_truth");
  CHECK_THROWS_AS(load_category(root, "widget", SplitKind::test), DatasetLayoutError);
}

TEST_CASE("grayscale files are expanded to three channels") {
  const fs::path dir = scratch("data_gray");
  Image gray(1, 8, 8, 0.5);
  write_image(dir / "g.png", gray);
  const Image back = read_image(dir / "g.png");
  REQUIRE(back.channel_count() == 3);
  CHECK((back.channels[0] - back.channels[2]).abs().maxCoeff() == 0);
  CHECK(std::abs(back.channels[1](3, 3) - 128.0 / 255.0) < 1e-12);
}

TEST_CASE("preprocess resizes then center-crops") {
  ImageSample s;
  s.pixels = gradient_image(900, 900);
  s.mask = box_mask(900, 900, 400, 400, 90);
  const ImageSample out = preprocess(s, 256, 224);
  CHECK(out.pixels.height() == 224);
  CHECK(out.pixels.width() == 224);
  REQUIRE(out.mask);
  CHECK(out.mask->rows() == 224);
  CHECK(((*out.mask == 0) || (*out.mask == 1)).all());
  CHECK(out.mask->cast<int>().sum() > 0);

  // resize == crop: nothing is cropped away.
  const ImageSample same = preprocess(s, 224, 224);
  const Image direct = resize_bilinear(s.pixels, 224, 224);
  CHECK((same.pixels.channels[1] - direct.channels[1]).abs().maxCoeff() == 0);

  CHECK_THROWS_AS(preprocess(s, 200, 224), ConfigError);
}

TEST_CASE("preprocess is idempotent") {
  ImageSample s;
  s.pixels = gradient_image(70, 90);
  s.mask = box_mask(70, 90, 10, 10, 20);
  const ImageSample once = preprocess(s, 64, 32);
  const ImageSample twice = preprocess(once, 64, 32);
  for (std::size_t c = 0; c < 3; ++c) CHECK((once.pixels.channels[c] == twice.pixels.channels[c]).all());
  CHECK((*once.mask == *twice.mask).all());
}

TEST_CASE("nearest-neighbor mask resize keeps masks binary") {
  Mask m = Mask::Zero(17, 23);
  m(3, 4) = 1;
  m.block(8, 8, 5, 9).setOnes();
  for (auto [h, w] : {std::pair{64, 64}, std::pair{7, 5}, std::pair{33, 41}}) {
    const Mask r = resize_nearest(m, h, w);
    CHECK(((r == 0) || (r == 1)).all());
  }
}

TEST_CASE("split checksum tracks content") {
  const fs::path root = small_category("data_checksum");
  const DatasetSplit a = load_category(root, "widget", SplitKind::train);
  const DatasetSplit b = load_category(root, "widget", SplitKind::train);
  CHECK(split_checksum(a) == split_checksum(b));
  DatasetSplit c = a;
  c.samples[1].pixels.channels[0](2, 2) += 0.5;
  CHECK(split_checksum(a) != split_checksum(c));
}

TEST_CASE("btad layout conversion") {
  const fs::path src = scratch("data_btad_src");
  const fs::path dst = scratch("data_btad_dst");
  const fs::path cat = src / "01";
  for (const char* d : {"train/ok", "test/ok", "test/ko", "ground_truth/ko"}) fs::create_directories(cat / d);
  write_image(cat / "train" / "ok" / "0000.png", gradient_image(32, 32));
  write_image(cat / "train" / "ok" / "0001.png", gradient_image(32, 32, 0.2));
  write_image(cat / "test" / "ok" / "0000.png", gradient_image(32, 32, 0.4));
  write_image(cat / "test" / "ko" / "0000.png", gradient_image(32, 32, 0.6));
  write_mask(cat / "ground_truth" / "ko" / "0000.png", box_mask(32, 32, 2, 2, 4));
  CHECK(convert_layout(src, "01", SourceLayout::btad, dst) == 4);
  CHECK(load_category(dst, "01", SplitKind::train).size() == 2);
  const DatasetSplit test = load_category(dst, "01", SplitKind::test);
  CHECK(test.size() == 2);
  CHECK(test.anomalous_count() == 1);
}

TEST_CASE("visa layout conversion") {
  const fs::path src = scratch("data_visa_src");
  const fs::path dst = scratch("data_visa_dst");
  fs::create_directories(src / "split_csv");
  fs::create_directories(src / "candle" / "img");
  fs::create_directories(src / "candle" / "mask");
  write_image(src / "candle" / "img" / "a.png", gradient_image(32, 32));
  write_image(src / "candle" / "img" / "b.png", gradient_image(32, 32, 0.3));
  write_image(src / "candle" / "img" / "c.png", gradient_image(32, 32, 0.6));
  write_mask(src / "candle" / "mask" / "c.png", box_mask(32, 32, 5, 5, 6));
  std::ofstream(src / "split_csv" / "1cls.csv") << "object,split,label,image,mask\n"
                                                 << "candle,train,normal,candle/img/a.png,\n"
                                                 << "candle,test,normal,candle/img/b.png,\n"
                                                 << "candle,test,anomaly,candle/img/c.png,candle/mask/c.png\n"
                                                 << "other,train,normal,other/x.png,\n";
  CHECK(convert_layout(src, "candle", SourceLayout::visa, dst) == 3);
  CHECK(load_category(dst, "candle", SplitKind::train).size() == 1);
  CHECK(load_category(dst, "candle", SplitKind::test).anomalous_count() == 1);
  CHECK_THROWS_AS(convert_layout(src, "capsules", SourceLayout::visa, dst), DatasetLayoutError);
}

TEST_CASE("shipped desk fixture loads with the expected counts") {
  const fs::path root = source_dir() / "fixtures" / "desk";
  for (const char* cat : {"stripes", "dots"}) {
    CAPTURE(cat);
    const DatasetSplit train = load_category(root, cat, SplitKind::train);
    const DatasetSplit test = load_category(root, cat, SplitKind::test);
    CHECK(train.size() == 64);
    CHECK(test.size() == 20);
    CHECK(test.anomalous_count() == 12);
    CHECK(train.samples.front().pixels.height() == 64);
  }
  CHECK(load_texture_corpus(root / "textures").images.size() == 8);
}

TEST_CASE("fixture generation is deterministic") {
  const fs::path a = scratch("fixture_a"), b = scratch("fixture_b");
  FixtureOptions small;
  small.size = 32;
  small.train_count = 3;
  small.test_good_count = 1;
  small.test_defect_count = 1;
  small.texture_count = 1;
  CHECK(make_fixture(a, small) == 2 * (3 + 1 + 2) + 1);
  make_fixture(b, small);
  for (const char* cat : {"stripes", "dots"})
    CHECK(split_checksum(load_category(a, cat, SplitKind::test)) == split_checksum(load_category(b, cat, SplitKind::test)));
}
