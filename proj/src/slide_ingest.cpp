#include "sgmil/slide_ingest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "sgmil/csv.hpp"
#include "sgmil/error.hpp"

namespace sgmil {

std::size_t ForegroundMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

namespace {

// Little-endian 64-bit limbs; holds diff^2 * weight for totals below 2^56.
using Wide = std::array<std::uint64_t, 6>;

Wide wide_mul(const Wide& a, unsigned __int128 b) {
  const std::array<std::uint64_t, 2> bl = {static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(b >> 64)};
  Wide out{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    unsigned __int128 carry = 0;
    for (std::size_t j = 0; j < 2 && i + j < out.size(); ++j) {
      const unsigned __int128 cur = static_cast<unsigned __int128>(a[i]) * bl[j] + out[i + j] + carry;
      out[i + j] = static_cast<std::uint64_t>(cur);
      carry = cur >> 64;
    }
    if (i + 2 < out.size()) out[i + 2] += static_cast<std::uint64_t>(carry);
  }
  return out;
}

bool wide_greater(const Wide& a, const Wide& b) {
  for (std::size_t i = a.size(); i-- > 0;) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return false;
}

struct OtsuScore {
  unsigned __int128 diff = 0;  // |S0 * W - S * W0|
  unsigned __int128 weight = 0;  // W0 * W1
};

// diff_a^2 / weight_a > diff_b^2 / weight_b, exactly.
bool score_greater(const OtsuScore& a, const OtsuScore& b) {
  const Wide da = {static_cast<std::uint64_t>(a.diff), static_cast<std::uint64_t>(a.diff >> 64)};
  const Wide db = {static_cast<std::uint64_t>(b.diff), static_cast<std::uint64_t>(b.diff >> 64)};
  return wide_greater(wide_mul(wide_mul(da, a.diff), b.weight), wide_mul(wide_mul(db, b.diff), a.weight));
}

}  // namespace

int otsu_threshold(std::span<const std::uint64_t> histogram) {
  if (histogram.size() != 256) fail(ErrorKind::InvalidInput, "otsu_threshold: histogram must have 256 bins");
  unsigned __int128 total = 0, weighted = 0;
  int occupied = 0, last_bin = -1;
  for (int i = 0; i < 256; ++i) {
    total += histogram[i];
    weighted += static_cast<unsigned __int128>(histogram[i]) * static_cast<unsigned>(i);
    if (histogram[i] != 0) {
      ++occupied;
      last_bin = i;
    }
  }
  if (total == 0) fail(ErrorKind::InvalidInput, "otsu_threshold: empty histogram");
  if (total >> 56) fail(ErrorKind::InvalidInput, "otsu_threshold: histogram total too large");
  if (occupied == 1) return last_bin;

  // sigma_b^2 is proportional to (S0*W - S*W0)^2 / (W0*W1); candidates are
  // compared as exact fractions.
  unsigned __int128 w0 = 0, s0 = 0;
  int best = -1;
  OtsuScore best_score;
  for (int t = 0; t < 255; ++t) {
    w0 += histogram[t];
    s0 += static_cast<unsigned __int128>(histogram[t]) * static_cast<unsigned>(t);
    const unsigned __int128 w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const unsigned __int128 lhs = s0 * total, rhs = weighted * w0;
    const OtsuScore score{lhs > rhs ? lhs - rhs : rhs - lhs, w0 * w1};
    if (best < 0 || score_greater(score, best_score)) {
      best_score = score;
      best = t;
    }
  }
  return best;
}

std::vector<double> downscaled_luma(const RgbImage& image, int factor, int& out_w, int& out_h) {
  if (factor < 1) fail(ErrorKind::InvalidInput, "downscale factor must be >= 1");
  out_w = (image.width() + factor - 1) / factor;
  out_h = (image.height() + factor - 1) / factor;
  std::vector<double> sums(static_cast<std::size_t>(out_w) * out_h, 0.0);
  std::vector<int> counts(sums.size(), 0);
  for (int y = 0; y < image.height(); ++y) {
    const std::size_t row = static_cast<std::size_t>(y / factor) * out_w;
    for (int x = 0; x < image.width(); ++x) {
      const std::size_t cell = row + x / factor;
      sums[cell] += luma(image.at(x, y));
      ++counts[cell];
    }
  }
  for (std::size_t i = 0; i < sums.size(); ++i) sums[i] /= counts[i];
  return sums;
}

ForegroundMask segment_foreground(const SlideImage& image, int downscale_factor, double min_luma_variance) {
  ForegroundMask mask;
  mask.downscale_factor = downscale_factor;
  const auto lum = downscaled_luma(image.pixels, downscale_factor, mask.width, mask.height);
  mask.bits.assign(lum.size(), 0);

  double mean = 0.0;
  for (double v : lum) mean += v;
  mean /= static_cast<double>(lum.size());
  double var = 0.0;
  for (double v : lum) var += (v - mean) * (v - mean);
  var /= static_cast<double>(lum.size());
  if (var < min_luma_variance) return mask;

  std::vector<std::uint8_t> quantized(lum.size());
  std::array<std::uint64_t, 256> hist{};
  for (std::size_t i = 0; i < lum.size(); ++i) {
    const int q = std::clamp(static_cast<int>(std::lround(lum[i])), 0, 255);
    quantized[i] = static_cast<std::uint8_t>(q);
    ++hist[q];
  }
  const int threshold = otsu_threshold(hist);
  // Tissue is darker than the glass background.
  for (std::size_t i = 0; i < quantized.size(); ++i) mask.bits[i] = quantized[i] <= threshold ? 1 : 0;
  return mask;
}

double foreground_fraction(const ForegroundMask& mask, int x, int y, int size) {
  const int f = mask.downscale_factor;
  long long covered = 0;
  for (int cy = y / f; cy * f < y + size && cy < mask.height; ++cy) {
    const int oy = std::min(y + size, (cy + 1) * f) - std::max(y, cy * f);
    for (int cx = x / f; cx * f < x + size && cx < mask.width; ++cx) {
      if (!mask.at(cx, cy)) continue;
      const int ox = std::min(x + size, (cx + 1) * f) - std::max(x, cx * f);
      covered += static_cast<long long>(ox) * oy;
    }
  }
  return static_cast<double>(covered) / (static_cast<double>(size) * size);
}

std::vector<Tile> tile_slide(const SlideImage& image, const ForegroundMask& mask, double min_foreground_fraction) {
  if (!(min_foreground_fraction >= 0.0 && min_foreground_fraction <= 1.0)) {
    fail(ErrorKind::InvalidInput, "min_foreground_fraction must lie in [0, 1]");
  }
  const int f = mask.downscale_factor;
  const int expect_w = (image.pixels.width() + f - 1) / f;
  const int expect_h = (image.pixels.height() + f - 1) / f;
  if (mask.width != expect_w || mask.height != expect_h) {
    fail(ErrorKind::InvalidInput, "mask dimensions do not match image " + image.slide_id);
  }
  std::vector<Tile> tiles;
  for (int y = 0; y + kTileSize <= image.pixels.height(); y += kTileSize) {
    for (int x = 0; x + kTileSize <= image.pixels.width(); x += kTileSize) {
      if (foreground_fraction(mask, x, y) < min_foreground_fraction) continue;
      tiles.push_back({image.slide_id, image.magnification, x, y,
                       image.pixels.crop(x, y, kTileSize, kTileSize)});
    }
  }
  return tiles;
}

RgbImage downsample_image(const RgbImage& image, int factor) {
  if (factor < 1) fail(ErrorKind::InvalidInput, "downsample factor must be >= 1");
  const int w = (image.width() + factor - 1) / factor;
  const int h = (image.height() + factor - 1) / factor;
  RgbImage out(w, h);
  for (int oy = 0; oy < h; ++oy) {
    for (int ox = 0; ox < w; ++ox) {
      unsigned r = 0, g = 0, b = 0, n = 0;
      for (int y = oy * factor; y < std::min(image.height(), (oy + 1) * factor); ++y) {
        for (int x = ox * factor; x < std::min(image.width(), (ox + 1) * factor); ++x) {
          const Rgb c = image.at(x, y);
          r += c.r;
          g += c.g;
          b += c.b;
          ++n;
        }
      }
      out.set(ox, oy, {static_cast<std::uint8_t>((r + n / 2) / n), static_cast<std::uint8_t>((g + n / 2) / n),
                       static_cast<std::uint8_t>((b + n / 2) / n)});
    }
  }
  return out;
}

void write_tiles_csv(std::span<const Tile> tiles, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << "slide_id,magnification,x,y\n";
  for (const auto& t : tiles) {
    out << csv::escape(t.slide_id) << ',' << to_string(t.magnification) << ',' << t.x << ',' << t.y << '\n';
  }
}

std::vector<TileRecord> read_tiles_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_id = table.require_column("slide_id");
  const auto c_mag = table.require_column("magnification");
  const auto c_x = table.require_column("x");
  const auto c_y = table.require_column("y");
  std::vector<TileRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    out.push_back({row[c_id], parse_magnification(row[c_mag]),
                   static_cast<int>(csv::parse_int(row[c_x], table.source)),
                   static_cast<int>(csv::parse_int(row[c_y], table.source))});
  }
  return out;
}

std::vector<Tile> crop_tiles(const SlideImage& image, std::span<const TileRecord> records) {
  std::vector<Tile> tiles;
  tiles.reserve(records.size());
  for (const auto& r : records) {
    if (r.x % kTileSize != 0 || r.y % kTileSize != 0) {
      fail(ErrorKind::InvalidInput, "tile origin not aligned to the 256-pixel grid");
    }
    tiles.push_back({image.slide_id, image.magnification, r.x, r.y,
                     image.pixels.crop(r.x, r.y, kTileSize, kTileSize)});
  }
  return tiles;
}

}  // namespace sgmil
