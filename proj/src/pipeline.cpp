#include "tocoad/pipeline.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace tocoad {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IntegrityError("cannot write " + path.string());
  os << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string fmt_loss(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.8g", v);
  return buf;
}

}  // namespace

Image heatmap_colors(const Plane& map) {
  const double lo = map.minCoeff(), hi = map.maxCoeff();
  cv::Mat gray(static_cast<int>(map.rows()), static_cast<int>(map.cols()), CV_8UC1);
  for (Index y = 0; y < map.rows(); ++y)
    for (Index x = 0; x < map.cols(); ++x) {
      const double t = hi > lo ? (map(y, x) - lo) / (hi - lo) : 0.0;
      gray.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) = static_cast<std::uint8_t>(std::lround(255 * t));
    }
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  Image out(3, map.rows(), map.cols());
  for (Index y = 0; y < map.rows(); ++y)
    for (Index x = 0; x < map.cols(); ++x) {
      const auto& bgr = color.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (int c = 0; c < 3; ++c) out.channels[static_cast<std::size_t>(c)](y, x) = bgr[2 - c] / 255.0;
    }
  return out;
}

std::vector<fs::path> export_heatmaps(const DatasetSplit& test, const std::vector<ScoreMap>& maps, const fs::path& dir) {
  if (maps.size() != test.size()) throw ArgumentError("export_heatmaps: one score map per test image required");
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const ImageSample& s = test.samples[i];
    const Index h = s.pixels.height(), w = s.pixels.width();
    const Image heat = heatmap_colors(maps[i].pixel_map);
    Image panel(3, h, 3 * w);
    for (std::size_t c = 0; c < 3; ++c) {
      panel.channels[c].block(0, 0, h, w) = s.pixels.channels[c];
      if (s.mask) panel.channels[c].block(0, w, h, w) = s.mask->cast<Scalar>();
      else panel.channels[c].block(0, w, h, w).setZero();
      panel.channels[c].block(0, 2 * w, h, w) = 0.5 * s.pixels.channels[c] + 0.5 * heat.channels[c];
    }
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu_", i);
    const fs::path path = dir / (name + fs::path(s.path).stem().string() + ".png");
    write_image(path, panel);
    written.push_back(path);
  }
  return written;
}

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)) {
  config_.validate();
  hash_ = config_.hash();
  fs::create_directories(config_.output_dir);
  if (fs::exists(manifest_path())) {
    manifest_ = RunManifest::load(manifest_path());
    if (manifest_.config_hash != hash_)
      throw ConfigError(config_.output_dir.string() + " holds a run of config " + manifest_.config_hash +
                        "; this config hashes to " + hash_ + ". Use a fresh run.output");
  } else {
    manifest_.config_hash = hash_;
    manifest_.seed = config_.seed;
    manifest_.started_at = utc_timestamp();
    manifest_.save(manifest_path());
  }
  write_text(config_.output_dir / "config.ini", config_.to_ini());
}

fs::path Pipeline::category_dir(const std::string& category) const { return config_.output_dir / category; }

std::uint64_t Pipeline::category_seed(const std::string& category, std::uint64_t tag) const {
  Fnv1a h;
  h.update(category);
  return mix_seed(config_.seed, h.digest(), tag);
}

const Pipeline::Data& Pipeline::data(const std::string& category) {
  auto it = data_.find(category);
  if (it != data_.end()) return it->second;
  Data d;
  d.train = preprocess(load_category(config_.dataset_root, category, SplitKind::train), config_.resize, config_.crop);
  d.test = preprocess(load_category(config_.dataset_root, category, SplitKind::test), config_.resize, config_.crop);
  if (config_.generator.texture_source == TextureSource::external_corpus) {
    TextureCorpus corpus = load_texture_corpus(config_.texture_dir);
    for (auto& img : corpus.images) img = resize_bilinear(img, config_.crop, config_.crop);
    d.textures = std::move(corpus);
  }
  return data_.emplace(category, std::move(d)).first->second;
}

Backbone Pipeline::initial_backbone() const { return Backbone(config_.backbone, mix_seed(config_.seed, 10)); }

Backbone Pipeline::current_backbone(const std::string& category) const {
  Backbone backbone = initial_backbone();
  if (config_.mode == RunMode::frozen) return backbone;
  if (!manifest_.completed(category + "/stage2")) throw StateError(category + ": stage2 has not completed");
  const fs::path weights = category_dir(category) / "backbone.bin";
  const CheckpointMeta meta = CheckpointMeta::load(weights);
  if (meta.architecture != config_.backbone.architecture_id() || meta.config_hash != hash_)
    throw IntegrityError(weights.string() + " was produced by a different architecture or config");
  backbone.parameters().load(weights);
  return backbone;
}

Decoder Pipeline::load_decoder(const std::string& category) const {
  if (!manifest_.completed(category + "/stage1")) throw StateError(category + ": stage1 has not completed");
  const fs::path weights = category_dir(category) / "decoder.bin";
  const CheckpointMeta meta = CheckpointMeta::load(weights);
  if (meta.architecture != config_.backbone.architecture_id() || meta.config_hash != hash_)
    throw IntegrityError(weights.string() + " was produced by a different architecture or config");
  Decoder decoder(config_.backbone, category_seed(category, 11));
  decoder.parameters().load(weights);
  decoder.freeze();
  return decoder;
}

void Pipeline::record(const std::string& category, std::string_view stage, std::string status, const std::string& artifact,
                      const std::string& message) {
  StageRecord& rec = manifest_.stages[category + "/" + std::string(stage)];
  rec.status = std::move(status);
  rec.artifact = artifact;
  rec.config_hash = hash_;
  rec.finished_at = utc_timestamp();
  rec.message = message;
  manifest_.save(manifest_path());
}

void Pipeline::synth_check(const std::string& category) {
  const Data& d = data(category);
  const fs::path dir = category_dir(category) / "synth";
  fs::create_directories(dir);
  Rng rng(category_seed(category, 30));
  const std::size_t count = std::min<std::size_t>(4, d.train.size());
  for (std::size_t i = 0; i < count; ++i) {
    const ImageSample partner = pick_partner(d.train, d.textures ? &*d.textures : nullptr, config_.generator, i, rng);
    const SyntheticAnomaly a = synthesize(d.train.samples[i], partner, config_.generator, category_seed(category, 31 + i));
    char name[32];
    std::snprintf(name, sizeof(name), "%03zu", i);
    write_image(dir / (std::string(name) + "_image.png"), a.image);
    write_mask(dir / (std::string(name) + "_mask.png"), a.mask);
  }
  record(category, "synth_check", "done", dir.string());
}

void Pipeline::train_stage1(const std::string& category) {
  if (config_.mode != RunMode::full) {
    record(category, "stage1", "skipped", "", "mode " + to_string(config_.mode) + " has no decoder");
    return;
  }
  const Data& d = data(category);
  const Backbone backbone = initial_backbone();
  Decoder decoder(config_.backbone, category_seed(category, 11));
  std::string csv = "epoch,mean_loss\n";
  const auto losses = ::tocoad::train_stage1(d.train, d.textures ? &*d.textures : nullptr, config_.generator, backbone, decoder,
                                             config_.stage1, category_seed(category, 21), [&](const EpochLoss& e) {
                                               std::clog << category << " stage1 epoch " << e.epoch << " loss " << fmt_loss(e.mean_loss) << "\n";
                                             });
  for (const auto& e : losses) csv += std::to_string(e.epoch) + "," + fmt_loss(e.mean_loss) + "\n";
  const fs::path dir = category_dir(category);
  fs::create_directories(dir);
  write_text(dir / "loss_stage1.csv", csv);
  const fs::path weights = dir / "decoder.bin";
  decoder.parameters().save(weights);
  CheckpointMeta{config_.backbone.architecture_id(), "stage1", config_.stage1.epochs, hash_, to_hex(decoder.parameters().checksum())}.save(weights);
  record(category, "stage1", "done", weights.string());
}

void Pipeline::train_stage2(const std::string& category) {
  if (config_.mode == RunMode::frozen) {
    record(category, "stage2", "skipped", "", "mode frozen keeps the initial extractor");
    return;
  }
  const Data& d = data(category);
  NclConfig ncl = config_.ncl;
  if (config_.mode == RunMode::ncl_only) ncl.lambda = 1;
  Backbone backbone = initial_backbone();
  ContrastiveHead head(config_.backbone, ncl, category_seed(category, 12));
  const Decoder decoder = ncl.lambda < 1 ? load_decoder(category) : Decoder();
  std::string csv = "epoch,L_sym,L_neg,L_ncl\n";
  const auto losses = ::tocoad::train_stage2(
      d.train, d.textures ? &*d.textures : nullptr, config_.generator, ncl, backbone, head, decoder, config_.stage2,
      category_seed(category, 22), [&](const Stage2EpochLoss& e) {
        std::clog << category << " stage2 epoch " << e.epoch << " sym " << fmt_loss(e.sym) << " neg " << fmt_loss(e.neg)
                  << " ncl " << fmt_loss(e.ncl) << "\n";
      });
  for (const auto& e : losses)
    csv += std::to_string(e.epoch) + "," + fmt_loss(e.sym) + "," + fmt_loss(e.neg) + "," + fmt_loss(e.ncl) + "\n";
  const fs::path dir = category_dir(category);
  fs::create_directories(dir);
  write_text(dir / "loss_stage2.csv", csv);
  const fs::path weights = dir / "backbone.bin";
  backbone.parameters().save(weights);
  CheckpointMeta{config_.backbone.architecture_id(), "stage2", config_.stage2.epochs, hash_, to_hex(backbone.parameters().checksum())}.save(weights);
  const fs::path head_weights = dir / "head.bin";
  head.parameters().save(head_weights);
  CheckpointMeta{config_.backbone.architecture_id(), "stage2-head", config_.stage2.epochs, hash_, to_hex(head.parameters().checksum())}.save(head_weights);
  record(category, "stage2", "done", weights.string());
}

void Pipeline::build_bank(const std::string& category) {
  const Data& d = data(category);
  const Backbone backbone = current_backbone(category);
  BankOptions options;
  options.ratio = config_.coreset_ratio;
  options.neighbor_count = config_.scoring.b;
  options.neighborhood = config_.neighborhood;
  options.batch_size = config_.stage1.batch_size;
  const Bank bank = ::tocoad::build_bank(d.train, backbone, options, category_seed(category, 40),
                                         to_hex(backbone.parameters().checksum()));
  const fs::path dir = category_dir(category);
  fs::create_directories(dir);
  const fs::path path = dir / "bank.bin";
  bank.save(path);
  CheckpointMeta{config_.backbone.architecture_id(), "bank", 0, hash_, bank.extractor_hash()}.save(path);
  record(category, "build_bank", "done", path.string());
}

std::vector<ScoreMap> Pipeline::infer(const std::string& category, bool write_heatmaps) {
  if (!manifest_.completed(category + "/build_bank")) throw StateError(category + ": build_bank has not completed");
  const Data& d = data(category);
  const Backbone backbone = current_backbone(category);
  const Bank bank = Bank::load(category_dir(category) / "bank.bin");
  if (bank.extractor_hash() != to_hex(backbone.parameters().checksum()))
    throw IntegrityError(category + ": memory bank was built with a different extractor");
  auto maps = score_split(d.test, bank, backbone, config_.scoring, config_.neighborhood, config_.stage1.batch_size);
  if (write_heatmaps) export_heatmaps(d.test, maps, category_dir(category) / "heatmaps");
  return maps;
}

EvalResult Pipeline::evaluate(const std::string& category) {
  const auto maps = infer(category, config_.heatmaps);
  const EvalResult result = evaluate_category(data(category).test, maps);
  const fs::path path = category_dir(category) / "metrics.csv";
  write_text(path, results_csv({result}));
  record(category, "evaluate", "done", path.string());
  write_metrics();
  return result;
}

void Pipeline::write_metrics() {
  std::string csv = "category,image_auroc,pixel_auroc\n";
  for (const auto& category : config_.categories) {
    const fs::path path = category_dir(category) / "metrics.csv";
    if (!manifest_.completed(category + "/evaluate") || !fs::exists(path)) continue;
    const std::string text = read_text(path);
    csv += text.substr(text.find('\n') + 1);
  }
  write_text(metrics_path(), csv);
  manifest_.metrics_csv = metrics_path().string();
  manifest_.save(manifest_path());
}

void Pipeline::run_stage(const std::string& category, std::string_view stage) {
  const std::string key = category + "/" + std::string(stage);
  if (manifest_.completed(key)) {
    const auto& rec = manifest_.stages.at(key);
    if (rec.artifact.empty() || fs::exists(rec.artifact)) {
      std::clog << key << ": complete, skipped\n";
      return;
    }
  }
  try {
    if (stage == "synth_check") synth_check(category);
    else if (stage == "stage1") train_stage1(category);
    else if (stage == "stage2") train_stage2(category);
    else if (stage == "build_bank") build_bank(category);
    else if (stage == "evaluate") evaluate(category);
    else throw ArgumentError("unknown stage '" + std::string(stage) + "'");
  } catch (const std::exception& e) {
    record(category, stage, "failed", "", e.what());
    throw;
  }
}

const RunManifest& Pipeline::run_full() {
  for (const auto& category : config_.categories)
    for (const auto stage : kStageOrder) run_stage(category, stage);
  write_metrics();
  manifest_.finished_at = utc_timestamp();
  manifest_.save(manifest_path());
  return manifest_;
}

}  // namespace tocoad
