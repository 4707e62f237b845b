#include "tocoad/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <sstream>

namespace tocoad {

namespace pt = boost::property_tree;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError(key + ": cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

template <typename Range, typename Fn>
std::string join(const Range& items, Fn&& to_text) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += ",";
    out += to_text(item);
  }
  return out;
}

template <typename T>
std::vector<T> parse_number_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

std::string augmentation_name(Augmentation a) {
  switch (a) {
    case Augmentation::random_resized_crop: return "crop";
    case Augmentation::color_jitter: return "jitter";
    case Augmentation::grayscale: return "grayscale";
  }
  return "?";
}

Augmentation parse_augmentation(const std::string& name) {
  if (name == "crop") return Augmentation::random_resized_crop;
  if (name == "jitter") return Augmentation::color_jitter;
  if (name == "grayscale") return Augmentation::grayscale;
  throw ConfigError("ncl.augmentations: unknown augmentation '" + name + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field number(std::string key, T RunConfig::*member) {
  return {key, [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.*member);
            else return std::to_string(c.*member);
          },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); }};
}

template <typename Get, typename Set>
Field field(std::string key, Get get, Set set) {
  return {key, get, [set, key](RunConfig& c, const std::string& v) { set(c, key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(field("data.root", [](const RunConfig& c) { return c.dataset_root.string(); },
                      [](RunConfig& c, const std::string&, const std::string& v) { c.dataset_root = v; }));
    f.push_back(field("data.categories", [](const RunConfig& c) { return join(c.categories, [](const auto& s) { return s; }); },
                      [](RunConfig& c, const std::string&, const std::string& v) { c.categories = split_list(v); }));
    f.push_back(field("data.textures", [](const RunConfig& c) { return c.texture_dir.string(); },
                      [](RunConfig& c, const std::string&, const std::string& v) { c.texture_dir = v; }));
    f.push_back(number("data.resize", &RunConfig::resize));
    f.push_back(number("data.crop", &RunConfig::crop));

    f.push_back(field("backbone.stem_width", [](const RunConfig& c) { return std::to_string(c.backbone.stem_width); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.backbone.stem_width = parse_number<Index>(k, v); }));
    f.push_back(field("backbone.widths", [](const RunConfig& c) { return join(c.backbone.widths, [](Index w) { return std::to_string(w); }); },
                      [](RunConfig& c, const std::string& k, const std::string& v) {
                        const auto w = parse_number_list<Index>(k, v);
                        if (w.size() != 4) throw ConfigError(k + ": four widths required");
                        std::copy(w.begin(), w.end(), c.backbone.widths.begin());
                      }));

    f.push_back(field("generator.kind", [](const RunConfig& c) { return to_string(c.generator.kind); },
                      [](RunConfig& c, const std::string&, const std::string& v) { c.generator.kind = parse_generator(v); }));
    f.push_back(field("generator.texture_source",
                      [](const RunConfig& c) { return c.generator.texture_source == TextureSource::self ? "self" : "external"; },
                      [](RunConfig& c, const std::string& k, const std::string& v) {
                        if (v == "self") c.generator.texture_source = TextureSource::self;
                        else if (v == "external") c.generator.texture_source = TextureSource::external_corpus;
                        else throw ConfigError(k + ": expected self or external");
                      }));
    f.push_back(field("generator.threshold", [](const RunConfig& c) { return fmt(c.generator.perlin_threshold); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.generator.perlin_threshold = parse_number<double>(k, v); }));
    f.push_back(field("generator.period_exponent_min", [](const RunConfig& c) { return std::to_string(c.generator.period_exponent_min); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.generator.period_exponent_min = parse_number<int>(k, v); }));
    f.push_back(field("generator.period_exponent_max", [](const RunConfig& c) { return std::to_string(c.generator.period_exponent_max); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.generator.period_exponent_max = parse_number<int>(k, v); }));
    f.push_back(field("generator.opacity_min", [](const RunConfig& c) { return fmt(c.generator.opacity_min); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.generator.opacity_min = parse_number<double>(k, v); }));
    f.push_back(field("generator.opacity_max", [](const RunConfig& c) { return fmt(c.generator.opacity_max); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.generator.opacity_max = parse_number<double>(k, v); }));
    f.push_back(field("generator.right_angles", [](const RunConfig& c) { return join(c.generator.rotation.right_angles, [](int a) { return std::to_string(a); }); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.generator.rotation.right_angles = parse_number_list<int>(k, v); }));
    f.push_back(field("generator.slight_degrees", [](const RunConfig& c) { return fmt(c.generator.rotation.slight_max_degrees); },
                      [](RunConfig& c, const std::string& k, const std::string& v) {
                        const double d = parse_number<double>(k, v);
                        c.generator.rotation.slight_min_degrees = -d;
                        c.generator.rotation.slight_max_degrees = d;
                      }));

    f.push_back(field("ncl.lambda", [](const RunConfig& c) { return fmt(c.ncl.lambda); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.ncl.lambda = parse_number<double>(k, v); }));
    f.push_back(field("ncl.levels", [](const RunConfig& c) { return join(c.ncl.levels, [](int l) { return std::to_string(l); }); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.ncl.levels = parse_number_list<int>(k, v); }));
    f.push_back(field("ncl.views", [](const RunConfig& c) { return std::to_string(c.ncl.views); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.ncl.views = parse_number<int>(k, v); }));
    f.push_back(field("ncl.neg_loss", [](const RunConfig& c) { return c.ncl.neg_loss == NegativeLoss::focal ? "focal" : "ce"; },
                      [](RunConfig& c, const std::string& k, const std::string& v) {
                        if (v == "focal") c.ncl.neg_loss = NegativeLoss::focal;
                        else if (v == "ce") c.ncl.neg_loss = NegativeLoss::cross_entropy;
                        else throw ConfigError(k + ": expected focal or ce");
                      }));
    f.push_back(field("ncl.concat_levels", [](const RunConfig& c) { return c.ncl.concat_levels ? "true" : "false"; },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.ncl.concat_levels = parse_bool(k, v); }));
    f.push_back(field("ncl.architecture",
                      [](const RunConfig& c) { return c.ncl.architecture == ContrastiveArchitecture::simsiam ? "simsiam" : "byol"; },
                      [](RunConfig& c, const std::string& k, const std::string& v) {
                        if (v == "simsiam") c.ncl.architecture = ContrastiveArchitecture::simsiam;
                        else if (v == "byol") c.ncl.architecture = ContrastiveArchitecture::byol;
                        else throw ConfigError(k + ": expected simsiam or byol");
                      }));
    f.push_back(field("ncl.augmentations", [](const RunConfig& c) { return join(c.ncl.augmentations, augmentation_name); },
                      [](RunConfig& c, const std::string&, const std::string& v) {
                        c.ncl.augmentations.clear();
                        for (const auto& name : split_list(v)) c.ncl.augmentations.push_back(parse_augmentation(name));
                      }));
    f.push_back(field("ncl.projector_hidden", [](const RunConfig& c) { return std::to_string(c.ncl.projector_hidden); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.ncl.projector_hidden = parse_number<Index>(k, v); }));
    f.push_back(field("ncl.projector_out", [](const RunConfig& c) { return std::to_string(c.ncl.projector_out); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.ncl.projector_out = parse_number<Index>(k, v); }));
    f.push_back(field("ncl.predictor_hidden", [](const RunConfig& c) { return std::to_string(c.ncl.predictor_hidden); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.ncl.predictor_hidden = parse_number<Index>(k, v); }));

    f.push_back(field("focal.alpha", [](const RunConfig& c) { return fmt(c.stage1.focal.alpha_anomalous); },
                      [](RunConfig& c, const std::string& k, const std::string& v) {
                        c.stage1.focal.alpha_anomalous = c.stage2.focal.alpha_anomalous = parse_number<double>(k, v);
                      }));
    f.push_back(field("focal.gamma", [](const RunConfig& c) { return fmt(c.stage1.focal.gamma); },
                      [](RunConfig& c, const std::string& k, const std::string& v) {
                        c.stage1.focal.gamma = c.stage2.focal.gamma = parse_number<double>(k, v);
                      }));

    f.push_back(field("stage1.epochs", [](const RunConfig& c) { return std::to_string(c.stage1.epochs); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage1.epochs = parse_number<int>(k, v); }));
    f.push_back(field("stage1.batch_size", [](const RunConfig& c) { return std::to_string(c.stage1.batch_size); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage1.batch_size = parse_number<int>(k, v); }));
    f.push_back(field("stage1.lr", [](const RunConfig& c) { return fmt(c.stage1.lr); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage1.lr = parse_number<double>(k, v); }));
    f.push_back(field("stage1.milestones", [](const RunConfig& c) { return join(c.stage1.milestones, [](int m) { return std::to_string(m); }); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage1.milestones = parse_number_list<int>(k, v); }));
    f.push_back(field("stage1.decay", [](const RunConfig& c) { return fmt(c.stage1.decay); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage1.decay = parse_number<double>(k, v); }));

    f.push_back(field("stage2.epochs", [](const RunConfig& c) { return std::to_string(c.stage2.epochs); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage2.epochs = parse_number<int>(k, v); }));
    f.push_back(field("stage2.batch_size", [](const RunConfig& c) { return std::to_string(c.stage2.batch_size); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage2.batch_size = parse_number<int>(k, v); }));
    f.push_back(field("stage2.lr", [](const RunConfig& c) { return fmt(c.stage2.lr); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage2.lr = parse_number<double>(k, v); }));
    f.push_back(field("stage2.momentum", [](const RunConfig& c) { return fmt(c.stage2.momentum); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage2.momentum = parse_number<double>(k, v); }));
    f.push_back(field("stage2.weight_decay", [](const RunConfig& c) { return fmt(c.stage2.weight_decay); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.stage2.weight_decay = parse_number<double>(k, v); }));
    f.push_back(field("stage2.trainable_layers", [](const RunConfig& c) { return join(c.stage2.trainable_stages, [](int s) { return std::to_string(s); }); },
                      [](RunConfig& c, const std::string& k, const std::string& v) {
                        const auto s = parse_number_list<int>(k, v);
                        c.stage2.trainable_stages = {s.begin(), s.end()};
                      }));

    f.push_back(number("bank.ratio", &RunConfig::coreset_ratio));
    f.push_back(number("bank.neighborhood", &RunConfig::neighborhood));
    f.push_back(field("scoring.b", [](const RunConfig& c) { return std::to_string(c.scoring.b); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.scoring.b = parse_number<Index>(k, v); }));
    f.push_back(field("scoring.sigma", [](const RunConfig& c) { return fmt(c.scoring.smoothing_sigma); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.scoring.smoothing_sigma = parse_number<double>(k, v); }));

    f.push_back(field("run.mode", [](const RunConfig& c) { return to_string(c.mode); },
                      [](RunConfig& c, const std::string& k, const std::string& v) {
                        if (v == "full") c.mode = RunMode::full;
                        else if (v == "frozen") c.mode = RunMode::frozen;
                        else if (v == "ncl_only") c.mode = RunMode::ncl_only;
                        else throw ConfigError(k + ": expected full, frozen or ncl_only");
                      }));
    f.push_back(number("run.seed", &RunConfig::seed));
    f.push_back(field("run.output", [](const RunConfig& c) { return c.output_dir.string(); },
                      [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }));
    f.push_back(field("run.heatmaps", [](const RunConfig& c) { return c.heatmaps ? "true" : "false"; },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.heatmaps = parse_bool(k, v); }));
    return f;
  }();
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

bool affects_results(const std::string& key) { return key != "run.output" && key != "run.heatmaps"; }

}  // namespace

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::full: return "full";
    case RunMode::frozen: return "frozen";
    case RunMode::ncl_only: return "ncl_only";
  }
  return "?";
}

void RunConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

RunConfig RunConfig::parse(const std::string& ini_text) {
  pt::ptree tree;
  std::istringstream is(ini_text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [name, value] : body) cfg.set(section + "." + name, value.data());
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << "\n";
      os << "[" << s << "]\n";
      section = s;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(*this) << "\n";
  }
  return os.str();
}

std::string RunConfig::hash() const {
  Fnv1a h;
  for (const auto& f : fields()) {
    if (!affects_results(f.key)) continue;
    h.update(f.key);
    h.update("=");
    h.update(f.get(*this));
    h.update("\n");
  }
  return h.hex();
}

void RunConfig::validate() const {
  if (categories.empty()) throw ConfigError("data.categories is empty");
  if (resize < 1 || crop < 1) throw ConfigError("data.resize and data.crop must be positive");
  if (crop > resize) throw ConfigError("data.crop exceeds data.resize");
  if (crop % 32 != 0) throw ConfigError("data.crop must be a multiple of 32");
  generator.validate();
  ncl.validate();
  stage1.focal.validate();
  if (generator.texture_source == TextureSource::external_corpus && texture_dir.empty())
    throw ConfigError("generator.texture_source = external requires data.textures");
  if (stage1.epochs < 0 || stage2.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (stage1.batch_size < 1 || stage2.batch_size < 1) throw ConfigError("batch sizes must be positive");
  if (!(coreset_ratio > 0 && coreset_ratio <= 1)) throw ConfigError("bank.ratio must lie in (0, 1]");
  if (neighborhood < 1 || neighborhood % 2 == 0) throw ConfigError("bank.neighborhood must be odd and positive");
  if (scoring.b < 2) throw ConfigError("scoring.b must be >= 2 (b = 1 collapses every score to zero)");
  if (scoring.smoothing_sigma < 0) throw ConfigError("scoring.sigma must be >= 0");
  for (int s : stage2.trainable_stages)
    if (s < 0 || s > 4) throw ConfigError("stage2.trainable_layers entries must lie in 0..4");
}

bool RunManifest::completed(const std::string& key) const {
  const auto it = stages.find(key);
  return it != stages.end() && (it->second.status == "done" || it->second.status == "skipped") &&
         it->second.config_hash == config_hash;
}

void RunManifest::save(const std::filesystem::path& path) const {
  pt::ptree tree;
  pt::ptree run;
  run.put("config_hash", config_hash);
  run.put("seed", seed);
  run.put("started_at", started_at);
  run.put("finished_at", finished_at);
  run.put("metrics_csv", metrics_csv);
  tree.add_child("run", run);
  for (const auto& [key, rec] : stages) {
    pt::ptree s;
    s.put("status", rec.status);
    s.put("artifact", rec.artifact);
    s.put("config_hash", rec.config_hash);
    s.put("finished_at", rec.finished_at);
    if (!rec.message.empty()) s.put("message", rec.message);
    tree.push_back({key, s});
  }
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  pt::write_ini(tmp.string(), tree);
  std::filesystem::rename(tmp, path);
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw IntegrityError(std::string("manifest: ") + e.what());
  }
  RunManifest m;
  for (const auto& [section, body] : tree) {
    if (section == "run") {
      m.config_hash = body.get<std::string>("config_hash", "");
      m.seed = body.get<std::uint64_t>("seed", 0);
      m.started_at = body.get<std::string>("started_at", "");
      m.finished_at = body.get<std::string>("finished_at", "");
      m.metrics_csv = body.get<std::string>("metrics_csv", "");
      continue;
    }
    StageRecord rec;
    rec.status = body.get<std::string>("status", "");
    rec.artifact = body.get<std::string>("artifact", "");
    rec.config_hash = body.get<std::string>("config_hash", "");
    rec.finished_at = body.get<std::string>("finished_at", "");
    rec.message = body.get<std::string>("message", "");
    m.stages[section] = rec;
  }
  return m;
}

void CheckpointMeta::save(const std::filesystem::path& weights) const {
  std::ofstream os(std::filesystem::path(weights).concat(".meta"));
  if (!os) throw IntegrityError("cannot write checkpoint sidecar for " + weights.string());
  os << "architecture=" << architecture << "\n"
     << "stage=" << stage << "\n"
     << "epoch=" << epoch << "\n"
     << "config_hash=" << config_hash << "\n"
     << "checksum=" << checksum << "\n";
}

CheckpointMeta CheckpointMeta::load(const std::filesystem::path& weights) {
  const auto path = std::filesystem::path(weights).concat(".meta");
  std::ifstream is(path);
  if (!is) throw IntegrityError("missing checkpoint sidecar " + path.string());
  CheckpointMeta m;
  for (std::string line; std::getline(is, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "architecture") m.architecture = value;
    else if (key == "stage") m.stage = value;
    else if (key == "epoch") m.epoch = parse_number<int>("epoch", value);
    else if (key == "config_hash") m.config_hash = value;
    else if (key == "checksum") m.checksum = value;
  }
  return m;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace tocoad
