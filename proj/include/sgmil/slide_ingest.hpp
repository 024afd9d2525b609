#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sgmil/image.hpp"
#include "sgmil/types.hpp"

namespace sgmil {

inline constexpr int kTileSize = 256;

struct SlideImage {
  std::string slide_id;
  std::string patient_id;
  Magnification magnification = Magnification::X20;
  RgbImage pixels;
};

/// Tissue mask at downscaled resolution; cell (i, j) covers the
/// downscale_factor x downscale_factor block of source pixels starting at
/// (i * factor, j * factor).
struct ForegroundMask {
  int width = 0;
  int height = 0;
  int downscale_factor = 1;
  std::vector<std::uint8_t> bits;

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const;
};

struct Tile {
  std::string slide_id;
  Magnification magnification = Magnification::X20;
  int x = 0;
  int y = 0;
  RgbImage pixels;
};

struct IngestOptions {
  int downscale_factor = 16;
  double min_foreground_fraction = 0.5;
  /// Slides whose downscaled luma variance is below this are all background.
  double min_luma_variance = 1.0;
};

/// Otsu threshold over a 256-bin histogram: the t maximising the
/// between-class variance of {0..t} vs {t+1..255}, smallest t on ties.
/// Only splits with both classes non-empty are candidates; a histogram with a
/// single occupied bin returns that bin.
int otsu_threshold(std::span<const std::uint64_t> histogram);

/// Box-averaged luma at downscale resolution (ceil(W/f) x ceil(H/f)).
std::vector<double> downscaled_luma(const RgbImage& image, int factor, int& out_w, int& out_h);

/// Foreground = downscaled luma quantised to 8 bits falling in the dark
/// Otsu class.
ForegroundMask segment_foreground(const SlideImage& image, int downscale_factor,
                                  double min_luma_variance = 1.0);

/// Fraction of the size x size window at (x, y) covered by foreground cells.
double foreground_fraction(const ForegroundMask& mask, int x, int y, int size = kTileSize);

/// Every aligned, fully contained 256 x 256 window whose foreground
/// fraction reaches min_foreground_fraction, in row-major order.
std::vector<Tile> tile_slide(const SlideImage& image, const ForegroundMask& mask,
                             double min_foreground_fraction = 0.5);

/// Box-downsamples by an integer factor (used to synthesise x10 / x5 from x20).
RgbImage downsample_image(const RgbImage& image, int factor);

struct TileRecord {
  std::string slide_id;
  Magnification magnification = Magnification::X20;
  int x = 0;
  int y = 0;
};

void write_tiles_csv(std::span<const Tile> tiles, const std::filesystem::path& path);
std::vector<TileRecord> read_tiles_csv(const std::filesystem::path& path);

/// Crops the tiles named by a tiles.csv listing out of the slide raster.
std::vector<Tile> crop_tiles(const SlideImage& image, std::span<const TileRecord> records);

}  // namespace sgmil
