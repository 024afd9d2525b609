#include "sgmil/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "sgmil/csv.hpp"
#include "sgmil/error.hpp"
#include "sgmil/evaluation.hpp"

namespace sgmil {

namespace {

constexpr double kConstantGuard = 1e-12;

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

}  // namespace

HeatmapNormalization parse_normalization(const std::string& text) {
  if (text == "minmax") return HeatmapNormalization::MinMax;
  if (text == "percentile") return HeatmapNormalization::Percentile;
  fail(ErrorKind::Config, "unknown heatmap normalization '" + text + "' (expected minmax or percentile)");
}

std::string to_string(HeatmapNormalization n) {
  return n == HeatmapNormalization::MinMax ? "minmax" : "percentile";
}

std::vector<double> normalize_attention(std::span<const double> alpha, HeatmapNormalization mode) {
  if (alpha.empty()) fail(ErrorKind::InvalidInput, "normalize_attention: empty attention vector");
  for (double a : alpha) {
    if (!std::isfinite(a)) fail(ErrorKind::InvalidInput, "normalize_attention: non-finite attention weight");
  }
  const auto [mn, mx] = std::minmax_element(alpha.begin(), alpha.end());
  if (*mx - *mn < kConstantGuard) return std::vector<double>(alpha.size(), 0.5);
  double lo = *mn, hi = *mx;
  if (mode == HeatmapNormalization::Percentile) {
    std::vector<double> sorted(alpha.begin(), alpha.end());
    std::sort(sorted.begin(), sorted.end());
    const double plo = quantile_sorted(sorted, 0.01);
    const double phi = quantile_sorted(sorted, 0.99);
    if (phi - plo >= kConstantGuard) {
      lo = plo;
      hi = phi;
    }
  }
  std::vector<double> out(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = std::clamp((alpha[i] - lo) / (hi - lo), 0.0, 1.0);
  return out;
}

Rgb ramp_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return {to_byte(255.0 * v), 0, to_byte(255.0 * (1.0 - v))};
}

Heatmap render_heatmap(std::span<const std::array<std::int32_t, 2>> coords, std::span<const double> alpha,
                       const RgbImage* base, const HeatmapSpec& spec) {
  if (coords.size() != alpha.size()) {
    fail(ErrorKind::InvalidInput, "render_heatmap: " + std::to_string(coords.size()) + " coordinates but " +
                                      std::to_string(alpha.size()) + " attention weights");
  }
  if (!(spec.opacity >= 0.0 && spec.opacity <= 1.0)) fail(ErrorKind::Config, "heatmap opacity must lie in [0, 1]");
  if (spec.tile_size < 1 || spec.downscale < 1) fail(ErrorKind::Config, "heatmap tile size and downscale must be >= 1");
  double sum = 0.0;
  for (double a : alpha) sum += a;
  if (!(std::abs(sum - 1.0) < 1e-6)) {
    fail(ErrorKind::InvalidInput, "render_heatmap: attention weights sum to " + csv::format_double(sum) + ", not 1");
  }

  Heatmap hm;
  hm.normalized = normalize_attention(alpha, spec.normalization);
  const int d = spec.downscale;
  auto footprint = [&](std::size_t i, std::int32_t ox, std::int32_t oy) {
    const int x0 = (coords[i][0] - ox) / d, y0 = (coords[i][1] - oy) / d;
    const int x1 = (coords[i][0] - ox + spec.tile_size) / d, y1 = (coords[i][1] - oy + spec.tile_size) / d;
    return std::array<int, 4>{x0, y0, x1, y1};
  };

  if (base != nullptr) {
    hm.raster = *base;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const auto [x0, y0, x1, y1] = footprint(i, 0, 0);
      if (coords[i][0] < 0 || coords[i][1] < 0 || x1 > base->width() || y1 > base->height()) {
        fail(ErrorKind::InvalidInput, "render_heatmap: tile at (" + std::to_string(coords[i][0]) + ", " +
                                          std::to_string(coords[i][1]) + ") lies outside the " +
                                          std::to_string(base->width()) + "x" + std::to_string(base->height()) +
                                          " base image");
      }
      const Rgb c = ramp_color(hm.normalized[i]);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const Rgb b = base->at(x, y);
          hm.raster.set(x, y, {to_byte((1.0 - spec.opacity) * b.r + spec.opacity * c.r),
                               to_byte((1.0 - spec.opacity) * b.g + spec.opacity * c.g),
                               to_byte((1.0 - spec.opacity) * b.b + spec.opacity * c.b)});
        }
      }
    }
    return hm;
  }

  std::int32_t min_x = std::numeric_limits<std::int32_t>::max(), min_y = min_x;
  std::int32_t max_x = std::numeric_limits<std::int32_t>::min(), max_y = max_x;
  for (const auto& c : coords) {
    min_x = std::min(min_x, c[0]);
    min_y = std::min(min_y, c[1]);
    max_x = std::max(max_x, c[0]);
    max_y = std::max(max_y, c[1]);
  }
  hm.origin_x = min_x;
  hm.origin_y = min_y;
  const int w = (max_x - min_x + spec.tile_size) / d;
  const int h = (max_y - min_y + spec.tile_size) / d;
  hm.raster = RgbImage(std::max(w, 1), std::max(h, 1), Rgb{255, 255, 255});
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto [x0, y0, x1, y1] = footprint(i, min_x, min_y);
    const Rgb c = ramp_color(hm.normalized[i]);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) hm.raster.set(x, y, c);
    }
  }
  return hm;
}

void write_heatmap_csv(std::span<const std::array<std::int32_t, 2>> coords, std::span<const double> alpha,
                       std::span<const double> normalized, const std::optional<std::vector<double>>& tile_probs,
                       const std::filesystem::path& path) {
  if (alpha.size() != coords.size() || normalized.size() != coords.size() ||
      (tile_probs && tile_probs->size() != coords.size())) {
    fail(ErrorKind::InvalidInput, "write_heatmap_csv: column lengths differ");
  }
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << "x,y,alpha_raw,alpha_normalized" << (tile_probs ? ",tile_prob" : "") << '\n';
  for (std::size_t i = 0; i < coords.size(); ++i) {
    out << coords[i][0] << ',' << coords[i][1] << ',' << csv::format_double(alpha[i]) << ','
        << csv::format_double(normalized[i]);
    if (tile_probs) out << ',' << csv::format_double((*tile_probs)[i]);
    out << '\n';
  }
}

}  // namespace sgmil
