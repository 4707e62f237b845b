#pragma once

#include "tocoad/config.hpp"
#include "tocoad/data.hpp"
#include "tocoad/inference.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string_view>

namespace tocoad {

inline constexpr std::array<std::string_view, 5> kStageOrder{"synth_check", "stage1", "stage2", "build_bank", "evaluate"};

// Jet colors of a min-max normalized map; a constant map maps to one color.
Image heatmap_colors(const Plane& map);

// Per image: original | ground-truth mask | jet overlay of the min-max
// normalized pixel map, side by side. Returns the written paths in split order.
std::vector<std::filesystem::path> export_heatmaps(const DatasetSplit& test, const std::vector<ScoreMap>& maps,
                                                   const std::filesystem::path& dir);

// Owns one output directory. Each stage reads its inputs from disk, so any
// stage can run on its own once its predecessors have completed.
class Pipeline {
 public:
  explicit Pipeline(RunConfig config);

  const RunConfig& config() const { return config_; }
  const RunManifest& manifest() const { return manifest_; }
  std::filesystem::path category_dir(const std::string& category) const;
  std::filesystem::path manifest_path() const { return config_.output_dir / "manifest.ini"; }
  std::filesystem::path metrics_path() const { return config_.output_dir / "metrics.csv"; }

  void synth_check(const std::string& category);
  void train_stage1(const std::string& category);
  void train_stage2(const std::string& category);
  void build_bank(const std::string& category);
  std::vector<ScoreMap> infer(const std::string& category, bool write_heatmaps);
  EvalResult evaluate(const std::string& category);

  // Runs every stage of every category in order, skipping stages the
  // manifest records as complete for this config hash. A failing stage is
  // recorded before the error propagates.
  const RunManifest& run_full();

  // Runs a single named stage (with the same resume check) for one category.
  void run_stage(const std::string& category, std::string_view stage);

 private:
  struct Data {
    DatasetSplit train, test;
    std::optional<TextureCorpus> textures;
  };

  const Data& data(const std::string& category);
  Backbone initial_backbone() const;
  Backbone current_backbone(const std::string& category) const;
  Decoder load_decoder(const std::string& category) const;
  std::uint64_t category_seed(const std::string& category, std::uint64_t tag) const;
  void record(const std::string& category, std::string_view stage, std::string status, const std::string& artifact,
              const std::string& message = {});
  void write_metrics();

  RunConfig config_;
  std::string hash_;
  RunManifest manifest_;
  std::map<std::string, Data> data_;
  std::map<std::string, EvalResult> results_;
};

}  // namespace tocoad
