#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sgmil/cache.hpp"
#include "sgmil/config.hpp"
#include "sgmil/dataset.hpp"

namespace sgmil {

using Logger = std::function<void(const std::string&)>;

struct StageReport {
  std::string stage;
  std::size_t computed = 0;
  std::size_t cached = 0;
  bool skipped = false;

  std::string describe() const;
};

struct RunContext {
  PipelineConfig config;
  std::filesystem::path out_dir;
  Logger log;
};

// Output layout under out_dir:
//   tiles/<slide>_x<mag>.csv        bags/<slide>_x<mag>.sgmb
//   graphs/<slide>_x<mag>.csv       checkpoints/fold<f>.sgmck
//   logs/fold<f>_x<mag>.csv         folds.csv, predictions.csv
//   report.json, roc.csv, km.csv    heatmaps/<slide>_x<mag>.{png,csv}
//   .cache/<stage>/<item>.key
// Every stage runs standalone when cache is null.

StageReport run_tile_stage(const RunContext& ctx, const std::vector<ManifestEntry>& entries, const StageCache* cache);
StageReport run_embed_stage(const RunContext& ctx, const std::vector<ManifestEntry>& entries,
                            const std::filesystem::path& tiles_dir, const StageCache* cache);
StageReport run_graph_stage(const RunContext& ctx, const std::vector<std::filesystem::path>& bag_files,
                            const StageCache* cache);
StageReport run_train_stage(const RunContext& ctx, const std::vector<PatientLabel>& patients,
                            const std::vector<std::filesystem::path>& bag_files, const StageCache* cache);
StageReport run_evaluate_stage(const RunContext& ctx, const std::filesystem::path& predictions,
                               const StageCache* cache);
/// Renders the configured number of top-scoring TMB-H patients, using the
/// checkpoint of the fold in which each patient was held out.
StageReport run_heatmap_stage(const RunContext& ctx, const std::filesystem::path& predictions,
                              const std::vector<std::filesystem::path>& bag_files,
                              const std::vector<ManifestEntry>& entries, const StageCache* cache);

/// Runs tile, embed, graph, train, evaluate and heatmap in order with
/// caching under out_dir/.cache. Failures are rethrown prefixed with the
/// stage name.
std::vector<StageReport> run_pipeline(const RunContext& ctx);

/// Scale-filtered bag files of a directory.
std::vector<std::filesystem::path> select_bag_files(const std::filesystem::path& dir, std::array<bool, 3> scales);

/// Single-checkpoint inference on bags: one row per patient and scale plus
/// the ensemble, fold -1.
std::vector<PredictionRow> predict_with_checkpoint(const Checkpoint& ckpt, const std::vector<PatientLabel>& patients,
                                                   const std::vector<std::filesystem::path>& bag_files, int knn_k);

struct HeatmapRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path bag;
  std::optional<std::filesystem::path> image;
  std::filesystem::path out_png;
  std::filesystem::path out_csv;
};

/// Attention (EMA parameters) for one bag, rendered and written to disk.
void render_bag_heatmap(const HeatmapRequest& request, const HeatmapConfig& config, int knn_k);

/// Writes bags/, labels.csv and signal.csv; with images also images/ and
/// manifest.json for the raster pipeline.
void write_synthetic_cohort(const SyntheticCohortSpec& spec, const std::filesystem::path& out_dir, bool images,
                            const Logger& log);

}  // namespace sgmil
