#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgmil/image.hpp"
#include "sgmil/slide_ingest.hpp"
#include "sgmil/types.hpp"

namespace sgmil {

enum class HeatmapNormalization { MinMax, Percentile };

HeatmapNormalization parse_normalization(const std::string& text);
std::string to_string(HeatmapNormalization n);

struct HeatmapSpec {
  std::string slide_id;
  Magnification magnification = Magnification::X20;
  HeatmapNormalization normalization = HeatmapNormalization::Percentile;
  double opacity = 0.5;
  int tile_size = kTileSize;
  /// Raster pixels per slide pixel is 1 / downscale.
  int downscale = 1;
};

/// Maps attention to [0, 1]. Percentile mode stretches the 1st..99th
/// percentile range and clamps; it falls back to min-max when that range
/// collapses. A constant vector (max - min < 1e-12) maps to 0.5.
std::vector<double> normalize_attention(std::span<const double> alpha, HeatmapNormalization mode);

/// Linear blue (0) to red (1) ramp.
Rgb ramp_color(double v);

struct Heatmap {
  RgbImage raster;
  std::vector<double> normalized;
  /// Slide coordinate of raster pixel (0, 0), in slide pixels.
  std::int32_t origin_x = 0, origin_y = 0;
};

/// Paints each tile footprint with the ramp colour of its normalised weight.
/// With a base image the colour is alpha-blended at spec.opacity and every
/// footprint must lie inside the base; without one the raster covers the
/// bounding box of the footprints on a white background.
Heatmap render_heatmap(std::span<const std::array<std::int32_t, 2>> coords, std::span<const double> alpha,
                       const RgbImage* base, const HeatmapSpec& spec);

/// Columns x, y, alpha_raw, alpha_normalized and, when given, tile_prob.
void write_heatmap_csv(std::span<const std::array<std::int32_t, 2>> coords, std::span<const double> alpha,
                       std::span<const double> normalized, const std::optional<std::vector<double>>& tile_probs,
                       const std::filesystem::path& path);

}  // namespace sgmil
