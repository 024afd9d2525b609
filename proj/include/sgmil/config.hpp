#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgmil/heatmap.hpp"
#include "sgmil/slide_ingest.hpp"
#include "sgmil/synth.hpp"
#include "sgmil/training.hpp"

namespace sgmil {

struct EvaluateConfig {
  int n_boot = 2000;
  double tmb_cutoff = 10.0;
  /// Metadata keys for subgroup AUCs; cancer_type is always reported.
  std::vector<std::string> subgroups;
};

struct HeatmapConfig {
  HeatmapNormalization normalization = HeatmapNormalization::Percentile;
  double opacity = 0.5;
  int downscale = 8;
  /// Number of slides rendered by the pipeline: the highest-probability
  /// TMB-H patients' slides at every scale.
  int slides = 2;
  bool tile_probs = false;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  /// Exactly one of manifest (raster images) or bags_dir (feature bags).
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> bags_dir;
  /// Optional with a manifest carrying label fields.
  std::optional<std::filesystem::path> labels;
  std::array<bool, 3> scales = {true, true, true};
  IngestOptions ingest;
  TrainConfig train;
  EvaluateConfig evaluate;
  HeatmapConfig heatmap;
  SyntheticCohortSpec synth;
};

/// Parses a TOML config. `seed` is mandatory; unknown keys are rejected.
/// Relative paths are resolved against the config file's directory.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                            const std::string& source = "<config>");

/// "5", "10", "20" or "all".
std::array<bool, 3> parse_scale_selection(const std::string& text);

}  // namespace sgmil
