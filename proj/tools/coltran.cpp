// coltran: train the three stages, colorize grayscale images, write
// probability maps and evaluation reports.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <cstdio>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coltran/errors.h"
#include "coltran/image_io.h"
#include "coltran/pipeline.h"
#include "coltran/run_config.h"
#include "coltran/training.h"

namespace fs = std::filesystem;
using namespace coltran;

namespace {

WeightSet parse_weights(const std::string& name) {
  if (name == "ema") return WeightSet::ema;
  if (name == "raw") return WeightSet::raw;
  throw ConfigError("--weights must be raw or ema, got '" + name + "'");
}

int cmd_train(const std::string& stage_arg, const fs::path& config, const std::vector<std::string>& sets,
              const fs::path& out) {
  const Stage stage = parse_stage(stage_arg);
  const auto cfg = RunConfig::load(config, sets);
  const auto spec = cfg.data();
  if (spec.source.empty()) throw ConfigError("data.source is not set");
  const auto split = load_dataset(spec);
  fs::create_directories(out);
  const std::string name(stage_name(stage));
  std::ofstream log(out / (name + ".log"));
  log << log_header() << '\n';
  std::cout << log_header() << '\n';
  const auto result = train_stage(stage, cfg.model(stage), split.train, cfg.train(stage), [&](const LogRow& row) {
    const auto line = format_log_row(row);
    log << line << '\n' << std::flush;
    std::cout << line << '\n' << std::flush;
  });
  save_checkpoint(result.checkpoint, out / (name + ".ckpt"));
  std::cout << "wrote " << (out / (name + ".ckpt")).string() << '\n';
  return 0;
}

int cmd_colorize(const fs::path& gray_path, const fs::path& core_path, const fs::path& color_path,
                 const fs::path& spatial_path, std::size_t samples, std::optional<std::size_t> top_k,
                 std::uint64_t seed, const std::string& weights, const fs::path& out) {
  const auto set = parse_weights(weights);
  const auto core = load_core(core_path, set);
  const auto color = load_upsampler(color_path, Stage::color_up, set);
  const auto spatial = load_upsampler(spatial_path, Stage::spatial_up, set);
  const auto gray = read_png_gray(gray_path);
  const auto images = colorize(*core, *color, *spatial, gray, samples, top_k, seed);
  fs::create_directories(out);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto path = out / ("sample_" + std::to_string(i) + ".png");
    write_png_atomic(path, images[i]);
    std::cout << "wrote " << path.string() << '\n';
  }
  return 0;
}

int cmd_probmap(const fs::path& gray_path, const std::optional<fs::path>& coarse_path, const fs::path& core_path,
                std::uint64_t seed, const std::string& weights, const fs::path& out) {
  const auto core = load_core(core_path, parse_weights(weights));
  const auto gray = read_png_gray(gray_path);
  std::optional<CoarseImage> coarse;
  if (coarse_path) coarse = quantize_coarse(read_png_rgb(*coarse_path));
  const auto map = probmap(*core, gray, coarse ? &*coarse : nullptr, seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_png_atomic(out, map);
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int cmd_eval(const std::optional<fs::path>& core_path, const std::optional<fs::path>& color_path,
             const std::optional<fs::path>& spatial_path, const std::optional<fs::path>& config,
             const std::vector<std::string>& sets, const std::optional<fs::path>& data_dir,
             std::optional<std::size_t> holdout, bool sweep, std::vector<std::string> presets,
             const std::string& weights, const std::optional<fs::path>& out) {
  std::ostringstream report;
  if (sweep) {
    if (!config) throw ConfigError("--ablation-sweep needs --config");
    auto cfg = RunConfig::load(*config, sets);
    auto spec = cfg.data();
    if (data_dir) spec.source = *data_dir;
    if (holdout) spec.holdout_count = *holdout;
    if (spec.source.empty()) throw ConfigError("data.source is not set");
    const auto split = load_dataset(spec);
    if (presets.empty()) presets = ablation_preset_names();
    report << "preset\tnll_ar\tnll_parallel\n";
    report.setf(std::ios::fixed);
    report.precision(6);
    for (const auto& row : ablation_sweep(cfg.model(Stage::core), split, cfg.train(Stage::core), presets)) {
      report << row.preset << '\t' << row.holdout.autoregressive << '\t' << row.holdout.parallel << '\n';
      std::cerr << "finished " << row.preset << '\n';
    }
  } else {
    if (!core_path && !color_path && !spatial_path) throw ConfigError("eval needs at least one --ckpt-* option");
    const auto set = parse_weights(weights);
    std::unique_ptr<ColTranCore<float>> core;
    std::unique_ptr<Upsampler<float>> color, spatial;
    if (core_path) core = load_core(*core_path, set);
    if (color_path) color = load_upsampler(*color_path, Stage::color_up, set);
    if (spatial_path) spatial = load_upsampler(*spatial_path, Stage::spatial_up, set);
    const ModelConfig& m = core ? core->config() : color ? color->config() : spatial->config();

    DatasetSpec spec;
    std::size_t batch = 8;
    if (config) {
      const auto cfg = RunConfig::load(*config, sets);
      spec = cfg.data();
      batch = cfg.train(Stage::core).batch_size;
    }
    spec.core_height = m.core_height;
    spec.core_width = m.core_width;
    spec.image_height = m.image_height;
    spec.image_width = m.image_width;
    if (data_dir) spec.source = *data_dir;
    if (holdout) spec.holdout_count = *holdout;
    if (spec.source.empty()) throw ConfigError("eval needs --data or a config with data.source");
    const auto split = load_dataset(spec);
    // Without a holdout split the whole directory is the evaluation set.
    const Dataset& data = spec.holdout_count > 0 ? split.holdout : split.train;
    if (data.empty()) throw ConfigError("evaluation set is empty");
    report << format_report(evaluate({core.get(), color.get(), spatial.get()}, data, batch));
  }
  std::cout << report.str();
  if (out) {
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    std::ofstream f(*out);
    f << report.str();
    if (!f) throw ConfigError("cannot write " + out->string());
  }
  return 0;
}

int cmd_synth(const fs::path& out, std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed) {
  fs::create_directories(out);
  const auto images = synthetic_images(count, height, width, seed);
  std::ofstream manifest(out / "manifest.txt");
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.png", i);
    write_png_atomic(out / name, images[i]);
    manifest << name << '\n';
  }
  std::cout << "wrote " << images.size() << " images to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine colorization: autoregressive coarse colors, parallel color and spatial upsampling.\n"
               "eval reports teacher-forced NLL in nats per pixel; FID is not computed."};
  app.require_subcommand(1);

  std::string stage;
  fs::path config, out;
  std::vector<std::string> sets;
  auto* train = app.add_subcommand("train", "Train one stage (core, color_up, spatial_up)");
  train->add_option("--stage", stage, "Stage to train")->required();
  train->add_option("--config", config, "key=value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--set", sets, "Override a config key (key=value), repeatable");
  train->add_option("--out", out, "Output directory for checkpoint and log")->required();

  fs::path gray, ckpt_core_req, ckpt_color_req, ckpt_spatial_req;
  std::size_t samples = 1;
  std::optional<std::size_t> top_k;
  std::uint64_t seed = 0;
  std::string weights = "ema";
  auto* color = app.add_subcommand("colorize", "Colorize a grayscale PNG at the model's H x W");
  color->add_option("--gray", gray, "Grayscale PNG")->required()->check(CLI::ExistingFile);
  color->add_option("--ckpt-core", ckpt_core_req)->required()->check(CLI::ExistingFile);
  color->add_option("--ckpt-color", ckpt_color_req)->required()->check(CLI::ExistingFile);
  color->add_option("--ckpt-spatial", ckpt_spatial_req)->required()->check(CLI::ExistingFile);
  color->add_option("--samples", samples, "Number of colorizations")->check(CLI::PositiveNumber);
  color->add_option("--topk", top_k, "Restrict coarse sampling to the K most probable colors");
  color->add_option("--seed", seed);
  color->add_option("--weights", weights, "raw or ema")->check(CLI::IsMember({"raw", "ema"}));
  color->add_option("--out", out, "Output directory for sample_<i>.png")->required();

  std::optional<fs::path> coarse_png;
  auto* prob = app.add_subcommand("probmap", "Per-pixel max predicted coarse-color probability as a PNG");
  prob->add_option("--gray", gray, "Grayscale PNG at H x W or M x N")->required()->check(CLI::ExistingFile);
  prob->add_option("--coarse", coarse_png, "RGB PNG at M x N used for teacher forcing; sampled if absent")
      ->check(CLI::ExistingFile);
  prob->add_option("--ckpt-core", ckpt_core_req)->required()->check(CLI::ExistingFile);
  prob->add_option("--seed", seed);
  prob->add_option("--weights", weights, "raw or ema")->check(CLI::IsMember({"raw", "ema"}));
  prob->add_option("--out", out, "Output PNG path")->required();

  std::optional<fs::path> ckpt_core, ckpt_color, ckpt_spatial, eval_config, data_dir, eval_out;
  std::optional<std::size_t> holdout;
  bool sweep = false;
  std::vector<std::string> presets;
  auto* eval = app.add_subcommand("eval", "Teacher-forced NLL report (nats per pixel), tab-separated");
  eval->add_option("--ckpt-core", ckpt_core)->check(CLI::ExistingFile);
  eval->add_option("--ckpt-color", ckpt_color)->check(CLI::ExistingFile);
  eval->add_option("--ckpt-spatial", ckpt_spatial)->check(CLI::ExistingFile);
  eval->add_option("--config", eval_config)->check(CLI::ExistingFile);
  eval->add_option("--set", sets, "Override a config key (key=value), repeatable");
  eval->add_option("--data", data_dir, "Image directory")->check(CLI::ExistingDirectory);
  eval->add_option("--holdout", holdout, "Evaluate the last N shuffled images only");
  eval->add_flag("--ablation-sweep", sweep, "Train and evaluate a core per ablation preset");
  eval->add_option("--presets", presets, "Presets for the sweep (default: all)");
  eval->add_option("--weights", weights, "raw or ema")->check(CLI::IsMember({"raw", "ema"}));
  eval->add_option("--out", eval_out, "Also write the report here");

  std::size_t count = 16, height = 16, width = 16;
  auto* synth = app.add_subcommand("synth", "Write a synthetic toy image corpus");
  synth->add_option("--out", out)->required();
  synth->add_option("--count", count)->check(CLI::PositiveNumber);
  synth->add_option("--height", height)->check(CLI::PositiveNumber);
  synth->add_option("--width", width)->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(stage, config, sets, out);
    if (*color) {
      return cmd_colorize(gray, ckpt_core_req, ckpt_color_req, ckpt_spatial_req, samples, top_k, seed, weights, out);
    }
    if (*prob) return cmd_probmap(gray, coarse_png, ckpt_core_req, seed, weights, out);
    if (*eval) {
      return cmd_eval(ckpt_core, ckpt_color, ckpt_spatial, eval_config, sets, data_dir, holdout, sweep, presets,
                      weights, eval_out);
    }
    if (*synth) return cmd_synth(out, count, height, width, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
