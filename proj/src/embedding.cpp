#include "sgmil/embedding.hpp"

#include <cmath>
#include <numbers>

#include "sgmil/error.hpp"

namespace sgmil {

void validate(const FeatureBag& bag) {
  if (bag.size() == 0) fail(ErrorKind::EmptyBag, "bag " + bag.slide_id + " has no instances");
  if (bag.dim == 0) fail(ErrorKind::InvalidInput, "bag " + bag.slide_id + " has zero feature dimension");
  if (bag.features.size() != bag.size() * bag.dim) {
    fail(ErrorKind::InvalidInput, "bag " + bag.slide_id + ": feature count does not match N x D");
  }
  for (float v : bag.features) {
    if (!std::isfinite(v)) fail(ErrorKind::InvalidInput, "bag " + bag.slide_id + " has non-finite features");
  }
}

std::vector<double> embed_tile(const Tile& tile) {
  const RgbImage& px = tile.pixels;
  if (px.width() != kTileSize || px.height() != kTileSize) {
    fail(ErrorKind::InvalidInput, "embed_tile: tile must be 256x256, got " + std::to_string(px.width()) + "x" +
                                      std::to_string(px.height()));
  }
  std::vector<double> out(kBuiltinEmbeddingDim, 0.0);
  constexpr double kPixels = static_cast<double>(kTileSize) * kTileSize;

  std::array<std::array<std::uint64_t, kHistogramBins>, 3> hist{};
  std::array<double, 3> sum{}, sum_sq{};
  std::vector<double> lum(static_cast<std::size_t>(kTileSize) * kTileSize);
  for (int y = 0; y < kTileSize; ++y) {
    for (int x = 0; x < kTileSize; ++x) {
      const Rgb c = px.at(x, y);
      const std::array<int, 3> ch = {c.r, c.g, c.b};
      for (int k = 0; k < 3; ++k) {
        ++hist[k][ch[k] / 16];
        sum[k] += ch[k];
        sum_sq[k] += static_cast<double>(ch[k]) * ch[k];
      }
      lum[static_cast<std::size_t>(y) * kTileSize + x] = luma(c);
    }
  }
  for (int k = 0; k < 3; ++k) {
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
      out[k * kHistogramBins + b] = static_cast<double>(hist[k][b]) / kPixels;
    }
    const double mean = sum[k] / kPixels;
    out[48 + k] = mean / 255.0;
    out[51 + k] = std::max(0.0, sum_sq[k] / kPixels - mean * mean) / (255.0 * 255.0);
  }

  const double sector = std::numbers::pi / 4.0;
  std::array<double, kOrientationBins> orient{};
  auto L = [&](int x, int y) { return lum[static_cast<std::size_t>(y) * kTileSize + x]; };
  for (int y = 1; y < kTileSize - 1; ++y) {
    for (int x = 1; x < kTileSize - 1; ++x) {
      const double gx = L(x + 1, y) - L(x - 1, y);
      const double gy = L(x, y + 1) - L(x, y - 1);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      long bin = std::lround(std::atan2(gy, gx) / sector) % 8;
      if (bin < 0) bin += 8;
      orient[static_cast<std::size_t>(bin)] += mag;
    }
  }
  constexpr double kInterior = static_cast<double>(kTileSize - 2) * (kTileSize - 2);
  for (std::size_t b = 0; b < kOrientationBins; ++b) out[54 + b] = orient[b] / (255.0 * kInterior);
  return out;
}

FeatureBag embed_slide(std::span<const Tile> tiles, const SlideMeta& meta) {
  if (tiles.empty()) fail(ErrorKind::EmptyBag, "embed_slide: slide has no foreground tiles");
  FeatureBag bag;
  bag.slide_id = tiles.front().slide_id;
  bag.patient_id = meta.patient_id;
  bag.cancer_type = meta.cancer_type;
  bag.magnification = tiles.front().magnification;
  bag.dim = kBuiltinEmbeddingDim;
  for (const auto& t : tiles) {
    if (t.slide_id != bag.slide_id || t.magnification != bag.magnification) {
      fail(ErrorKind::InvalidInput, "embed_slide: tiles must share slide id and magnification");
    }
    // embed_tile must not throw inside the parallel region
    if (t.pixels.width() != kTileSize || t.pixels.height() != kTileSize) {
      fail(ErrorKind::InvalidInput, "embed_slide: tile at (" + std::to_string(t.x) + "," + std::to_string(t.y) +
                                        ") is not 256x256");
    }
  }
  bag.features.assign(tiles.size() * bag.dim, 0.0f);
  bag.coords.resize(tiles.size());
  const long n = static_cast<long>(tiles.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto& tile = tiles[static_cast<std::size_t>(i)];
    const auto v = embed_tile(tile);
    auto row = bag.row(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < v.size(); ++j) row[j] = static_cast<float>(v[j]);
    bag.coords[static_cast<std::size_t>(i)] = {tile.x, tile.y};
  }
  return bag;
}

std::string bag_file_name(const std::string& slide_id, Magnification m) {
  return slide_id + "_x" + to_string(m) + ".sgmb";
}

}  // namespace sgmil
