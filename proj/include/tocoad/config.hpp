#pragma once

#include "tocoad/backbone.hpp"
#include "tocoad/contrastive.hpp"
#include "tocoad/discriminative.hpp"
#include "tocoad/memory_bank.hpp"
#include "tocoad/synthesis.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tocoad {

enum class RunMode { full, frozen, ncl_only };

std::string to_string(RunMode mode);

// Everything a run depends on. Serialized as an INI file of `section.key`
// entries; every key has a default and appears in to_ini().
struct RunConfig {
  std::filesystem::path dataset_root = "data";
  std::vector<std::string> categories;
  std::filesystem::path texture_dir;
  int resize = 256;
  int crop = 224;

  BackboneSpec backbone;
  GeneratorConfig generator;
  NclConfig ncl;
  Stage1Options stage1;
  Stage2Options stage2;
  double coreset_ratio = 0.1;
  int neighborhood = 3;
  ScoringConfig scoring;

  RunMode mode = RunMode::full;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  bool heatmaps = false;

  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& ini_text);

  // `section.key` assignment from text; unknown keys raise ConfigError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  std::string to_ini() const;
  // Hash of every key that can change results (run.output and run.heatmaps
  // are excluded).
  std::string hash() const;
  void validate() const;
};

struct StageRecord {
  std::string status;  // done | skipped | failed
  std::string artifact;
  std::string config_hash;
  std::string finished_at;
  std::string message;
};

// Lineage of one output directory. Stage keys are "<category>/<stage>".
struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::string metrics_csv;
  std::map<std::string, StageRecord> stages;

  bool completed(const std::string& key) const;
  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

// Sidecar written next to every weight file.
struct CheckpointMeta {
  std::string architecture;
  std::string stage;
  int epoch = 0;
  std::string config_hash;
  std::string checksum;

  void save(const std::filesystem::path& weights) const;
  static CheckpointMeta load(const std::filesystem::path& weights);
};

std::string utc_timestamp();

}  // namespace tocoad
