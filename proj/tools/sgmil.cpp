#include <iostream>
#include <optional>
#include <string>

#include <omp.h>

#include <cli11/CLI11.hpp>

#include "sgmil/checkpoint.hpp"
#include "sgmil/config.hpp"
#include "sgmil/dataset.hpp"
#include "sgmil/error.hpp"
#include "sgmil/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sgmil;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string magnification;
  int jobs = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "TOML config file");
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--out-dir", c.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--magnification", c.magnification, "5, 10, 20 or all")
      ->check(CLI::IsMember({"5", "10", "20", "all"}));
  cmd->add_option("--jobs", c.jobs, "worker thread cap (results do not depend on it)")->check(CLI::NonNegativeNumber);
}

PipelineConfig resolve(const Common& c, bool seed_required) {
  PipelineConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else if (seed_required && !c.seed) {
    fail(ErrorKind::Config, "seed is mandatory: pass --seed or a --config with seed");
  }
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.train.seed = *c.seed;
    cfg.synth.seed = *c.seed;
  }
  if (!c.magnification.empty()) cfg.scales = parse_scale_selection(c.magnification);
  if (c.jobs > 0) omp_set_num_threads(c.jobs);
  return cfg;
}

RunContext context(const Common& c, PipelineConfig cfg) {
  return {std::move(cfg), fs::path(c.out_dir), [](const std::string& m) { std::cerr << m << '\n'; }};
}

fs::path require(const std::string& flag_value, const std::optional<fs::path>& from_config, const char* what) {
  if (!flag_value.empty()) return flag_value;
  if (from_config) return *from_config;
  fail(ErrorKind::Config, std::string(what) + " is required");
}

std::vector<PatientLabel> load_patients(const RunContext& ctx, const std::string& labels_flag,
                                        const std::vector<ManifestEntry>& entries) {
  if (!labels_flag.empty()) return read_labels_csv(labels_flag, ctx.config.evaluate.tmb_cutoff);
  if (ctx.config.labels) return read_labels_csv(*ctx.config.labels, ctx.config.evaluate.tmb_cutoff);
  if (!entries.empty()) return labels_from_manifest(entries, ctx.config.evaluate.tmb_cutoff);
  fail(ErrorKind::Config, "--labels is required");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale graph-attention MIL for slide-level TMB prediction"};
  app.require_subcommand(1);
  std::string command;

  Common c;
  std::string manifest, tiles_dir, bags_dir, labels, checkpoint, predictions, bag, image, normalization;
  double opacity = -1.0;
  int downscale = 0;
  bool tile_probs = false, images = false;

  auto* tile = app.add_subcommand("tile", "segment tissue and list 256x256 tiles per slide");
  tile->add_option("--manifest", manifest, "slide manifest (JSON)");
  auto* embed = app.add_subcommand("embed", "embed listed tiles into feature bags");
  embed->add_option("--manifest", manifest, "slide manifest (JSON)");
  embed->add_option("--tiles-dir", tiles_dir, "directory of tiles CSVs (default <out-dir>/tiles)");
  auto* graph = app.add_subcommand("graph", "dump kNN graphs of feature bags");
  graph->add_option("--bags-dir", bags_dir, "directory of .sgmb bags");
  auto* train = app.add_subcommand("train", "stratified k-fold training with out-of-fold predictions");
  train->add_option("--bags-dir", bags_dir, "directory of .sgmb bags");
  train->add_option("--labels", labels, "labels CSV");
  auto* predict = app.add_subcommand("predict", "patient-level predictions from one checkpoint");
  predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict->add_option("--bags-dir", bags_dir, "directory of .sgmb bags");
  predict->add_option("--labels", labels, "labels CSV");
  auto* evaluate = app.add_subcommand("evaluate", "AUC, CI, operating point, survival and subgroup report");
  evaluate->add_option("--predictions", predictions, "predictions CSV")->required();
  auto* heatmap = app.add_subcommand("heatmap", "attention heatmap of one bag");
  heatmap->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  heatmap->add_option("--bag", bag, "feature bag (.sgmb)")->required();
  heatmap->add_option("--image", image, "base slide image to blend over");
  heatmap->add_option("--normalization", normalization, "minmax or percentile")
      ->check(CLI::IsMember({"minmax", "percentile"}));
  heatmap->add_option("--opacity", opacity, "overlay opacity in [0, 1]");
  heatmap->add_option("--downscale", downscale, "raster downscale factor");
  heatmap->add_flag("--tile-probs", tile_probs, "add per-tile fused-head probabilities to heatmap.csv");
  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  synth->add_flag("--images", images, "also render slide images and a manifest");
  auto* pipeline = app.add_subcommand("pipeline", "run every stage with caching");

  for (auto* cmd : {tile, embed, graph, train, predict, evaluate, heatmap, synth, pipeline}) add_common(cmd, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code_for(ErrorKind::Config);
  }
  command = app.get_subcommands().front()->get_name();

  try {
    if (command == "tile" || command == "embed") {
      const auto ctx = context(c, resolve(c, false));
      const auto entries = read_manifest(require(manifest, ctx.config.manifest, "--manifest"));
      const auto rep = command == "tile"
                           ? run_tile_stage(ctx, entries, nullptr)
                           : run_embed_stage(ctx, entries, tiles_dir.empty() ? ctx.out_dir / "tiles" : fs::path(tiles_dir),
                                             nullptr);
      std::cerr << rep.describe() << '\n';
    } else if (command == "graph") {
      const auto ctx = context(c, resolve(c, false));
      const auto files = select_bag_files(require(bags_dir, ctx.config.bags_dir, "--bags-dir"), ctx.config.scales);
      std::cerr << run_graph_stage(ctx, files, nullptr).describe() << '\n';
    } else if (command == "train") {
      const auto ctx = context(c, resolve(c, true));
      const auto files = select_bag_files(require(bags_dir, ctx.config.bags_dir, "--bags-dir"), ctx.config.scales);
      const auto patients = load_patients(ctx, labels, {});
      std::cerr << run_train_stage(ctx, patients, files, nullptr).describe() << '\n';
    } else if (command == "predict") {
      const auto ctx = context(c, resolve(c, false));
      const auto ckpt = load_checkpoint(checkpoint);
      const auto files = select_bag_files(require(bags_dir, ctx.config.bags_dir, "--bags-dir"), ctx.config.scales);
      const auto patients = load_patients(ctx, labels, {});
      const auto rows = predict_with_checkpoint(ckpt, patients, files, ctx.config.train.knn_k);
      fs::create_directories(ctx.out_dir);
      write_predictions_csv(rows, patients, ctx.out_dir / "predictions.csv");
      std::cerr << "wrote " << rows.size() << " predictions\n";
    } else if (command == "evaluate") {
      const auto ctx = context(c, resolve(c, true));
      fs::create_directories(ctx.out_dir);
      run_evaluate_stage(ctx, predictions, nullptr);
    } else if (command == "heatmap") {
      auto cfg = resolve(c, false);
      if (!normalization.empty()) cfg.heatmap.normalization = parse_normalization(normalization);
      if (opacity >= 0.0) cfg.heatmap.opacity = opacity;
      if (downscale > 0) cfg.heatmap.downscale = downscale;
      if (tile_probs) cfg.heatmap.tile_probs = true;
      const fs::path out_dir = c.out_dir;
      fs::create_directories(out_dir);
      HeatmapRequest req;
      req.checkpoint = checkpoint;
      req.bag = bag;
      if (!image.empty()) req.image = fs::path(image);
      req.out_png = out_dir / (fs::path(bag).stem().string() + ".png");
      req.out_csv = out_dir / "heatmap.csv";
      render_bag_heatmap(req, cfg.heatmap, cfg.train.knn_k);
      std::cerr << "wrote " << req.out_png.string() << " and " << req.out_csv.string() << '\n';
    } else if (command == "synth") {
      const auto ctx = context(c, resolve(c, true));
      write_synthetic_cohort(ctx.config.synth, ctx.out_dir, images, images ? Logger{} : ctx.log);
      std::cerr << "wrote synthetic cohort of " << ctx.config.synth.n_patients << " patients to "
                << ctx.out_dir.string() << '\n';
    } else if (command == "pipeline") {
      if (c.config.empty()) fail(ErrorKind::Config, "pipeline needs --config");
      const auto ctx = context(c, resolve(c, true));
      run_pipeline(ctx);
    }
  } catch (const Error& e) {
    std::cerr << "sgmil " << command << ": " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "sgmil " << command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
