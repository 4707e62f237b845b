#include "tocoad/fixture.hpp"
#include "tocoad/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace tocoad;

namespace {

// Options shared by every subcommand that operates on a run.
struct RunArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::string> categories;
  std::string output, mode, lambda, levels, neg_loss, generator, architecture;
  std::string seed;
  bool concat = false;
  bool heatmaps = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "INI run config")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a config key, e.g. --set stage1.epochs=5");
    app->add_option("--category", categories, "Restrict to these categories");
    app->add_option("-o,--out", output, "run.output");
    app->add_option("--seed", seed, "run.seed");
    app->add_option("--mode", mode, "run.mode: full, frozen or ncl_only");
    app->add_option("--lambda", lambda, "ncl.lambda");
    app->add_option("--levels", levels, "ncl.levels, e.g. 3,4");
    app->add_option("--neg-loss", neg_loss, "ncl.neg_loss: focal or ce");
    app->add_option("--generator", generator, "generator.kind: perlin, cutpaste or nsa");
    app->add_option("--architecture", architecture, "ncl.architecture: simsiam or byol");
    app->add_flag("--concat", concat, "ncl.concat_levels = true");
    app->add_flag("--heatmaps", heatmaps, "run.heatmaps = true");
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    const std::pair<const char*, const std::string*> mirrored[] = {
        {"run.output", &output}, {"run.seed", &seed}, {"run.mode", &mode}, {"ncl.lambda", &lambda},
        {"ncl.levels", &levels}, {"ncl.neg_loss", &neg_loss}, {"generator.kind", &generator},
        {"ncl.architecture", &architecture}};
    for (const auto& [key, value] : mirrored)
      if (!value->empty()) cfg.set(key, *value);
    if (concat) cfg.ncl.concat_levels = true;
    if (heatmaps) cfg.heatmaps = true;
    return cfg;
  }

  std::vector<std::string> selected(const RunConfig& cfg) const {
    if (categories.empty()) return cfg.categories;
    for (const auto& c : categories)
      if (std::find(cfg.categories.begin(), cfg.categories.end(), c) == cfg.categories.end())
        throw ConfigError("category '" + c + "' is not listed in data.categories");
    return categories;
  }
};

int run_stage_command(const RunArgs& args, std::string_view stage) {
  Pipeline pipeline(args.resolve());
  for (const auto& category : args.selected(pipeline.config())) pipeline.run_stage(category, stage);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage contrastive anomaly detection: training, memory bank, scoring and evaluation"};
  app.require_subcommand(1);

  RunArgs args;
  std::map<std::string, CLI::App*> stage_commands;
  const std::pair<const char*, const char*> stages[] = {
      {"synth", "synth_check"}, {"train-stage1", "stage1"}, {"train-stage2", "stage2"}, {"build-bank", "build_bank"}, {"eval", "evaluate"}};
  const std::map<std::string, std::string> stage_help{
      {"synth", "Write sample synthetic anomalies and check the generator"},
      {"train-stage1", "Train the discriminative decoder on synthetic anomalies"},
      {"train-stage2", "Fine-tune the extractor with the contrastive and negative losses"},
      {"build-bank", "Extract training patch features and build the coreset memory bank"},
      {"eval", "Score the test split and write metrics.csv"}};
  for (const auto& [name, stage] : stages) {
    auto* sub = app.add_subcommand(name, stage_help.at(name));
    args.attach(sub);
    stage_commands[name] = sub;
  }

  auto* run_full = app.add_subcommand("run-full", "Run every stage for every category, resuming completed stages");
  args.attach(run_full);

  auto* infer = app.add_subcommand("infer", "Score the test split, write heatmaps and print per-image scores");
  args.attach(infer);
  bool as_json = false;
  infer->add_flag("--json", as_json, "Print scores as JSON");

  auto* show = app.add_subcommand("show-config", "Print the resolved config with every default");
  args.attach(show);

  auto* fixture = app.add_subcommand("make-fixture", "Generate the procedural desk dataset");
  std::string fixture_out = "fixtures/desk";
  FixtureOptions fixture_options;
  fixture->add_option("-o,--out", fixture_out, "Output root");
  fixture->add_option("--seed", fixture_options.seed, "Generator seed");
  fixture->add_option("--size", fixture_options.size, "Image side in pixels");
  fixture->add_option("--train", fixture_options.train_count, "Training images per category");

  auto* convert = app.add_subcommand("convert", "Rewrite a BTAD or VisA category into the MVTec layout");
  std::string convert_src, convert_dst, convert_category, convert_layout_name;
  convert->add_option("--src", convert_src, "Source dataset root")->required()->check(CLI::ExistingDirectory);
  convert->add_option("--dst", convert_dst, "Destination root")->required();
  convert->add_option("--category", convert_category, "Category name")->required();
  convert->add_option("--layout", convert_layout_name, "btad or visa")->required()->check(CLI::IsMember({"btad", "visa"}));

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [name, stage] : stages)
      if (stage_commands[name]->parsed()) return run_stage_command(args, stage);

    if (run_full->parsed()) {
      RunConfig cfg = args.resolve();
      cfg.categories = args.selected(cfg);
      Pipeline pipeline(cfg);
      pipeline.run_full();
      std::ifstream is(pipeline.metrics_path());
      std::stringstream ss;
      ss << is.rdbuf();
      std::cout << results_table(parse_results_csv(ss.str()));
      return 0;
    }
    if (infer->parsed()) {
      Pipeline pipeline(args.resolve());
      nlohmann::json out = nlohmann::json::object();
      for (const auto& category : args.selected(pipeline.config())) {
        const auto maps = pipeline.infer(category, true);
        const auto test = preprocess(load_category(pipeline.config().dataset_root, category, SplitKind::test),
                                     pipeline.config().resize, pipeline.config().crop);
        for (std::size_t i = 0; i < maps.size(); ++i) {
          if (as_json) out[category].push_back({{"path", test.samples[i].path}, {"score", maps[i].image_score}});
          else std::cout << test.samples[i].path << "," << maps[i].image_score << "\n";
        }
      }
      if (as_json) std::cout << out.dump(2) << "\n";
      return 0;
    }
    if (show->parsed()) {
      std::cout << args.resolve().to_ini();
      return 0;
    }
    if (fixture->parsed()) {
      const std::size_t n = make_fixture(fixture_out, fixture_options);
      std::cout << "wrote " << n << " images under " << fixture_out << "\n";
      return 0;
    }
    if (convert->parsed()) {
      const auto layout = convert_layout_name == "btad" ? SourceLayout::btad : SourceLayout::visa;
      const std::size_t n = convert_layout(convert_src, convert_category, layout, convert_dst);
      std::cout << "wrote " << n << " images under " << (fs::path(convert_dst) / convert_category).string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
