#include <doctest/doctest.h>

#include <filesystem>

#include "oracle/oracle.hpp"
#include "sgmil/error.hpp"
#include "sgmil/rng.hpp"
#include "sgmil/slide_ingest.hpp"

using namespace sgmil;

namespace {

SlideImage slide_with_block(int w, int h, int bx, int by, int bw, int bh) {
  SlideImage s;
  s.slide_id = "S1";
  s.pixels = RgbImage(w, h, {240, 240, 240});
  for (int y = by; y < by + bh; ++y)
    for (int x = bx; x < bx + bw; ++x) s.pixels.set(x, y, {180, 90, 150});
  return s;
}

}  // namespace

TEST_CASE("otsu splits a two-level histogram between the levels") {
  std::vector<std::uint64_t> hist(256, 0);
  hist[40] = 100;
  hist[200] = 300;
  const int t = otsu_threshold(hist);
  CHECK(t >= 40);
  CHECK(t < 200);
  // smallest t on the plateau of equal scores
  CHECK(t == 40);
}

TEST_CASE("otsu single occupied bin returns that bin") {
  std::vector<std::uint64_t> hist(256, 0);
  hist[77] = 5;
  CHECK(otsu_threshold(hist) == 77);
}

TEST_CASE("otsu rejects empty and mis-sized histograms") {
  std::vector<std::uint64_t> empty(256, 0);
  CHECK_THROWS_AS(otsu_threshold(empty), Error);
  std::vector<std::uint64_t> short_hist(10, 1);
  CHECK_THROWS_AS(otsu_threshold(short_hist), Error);
}

TEST_CASE("otsu agrees with exhaustive search on random histograms") {
  Rng rng(5);
  for (int c = 0; c < 300; ++c) {
    std::vector<std::uint64_t> hist(256, 0);
    const int occupied = 1 + static_cast<int>(rng.below(c % 2 ? 8 : 200));
    for (int j = 0; j < occupied; ++j) hist[rng.below(256)] += 1 + rng.below(20);
    REQUIRE(otsu_threshold(hist) == oracle::otsu(hist));
  }
}

TEST_CASE("otsu handles large totals") {
  std::vector<std::uint64_t> hist(256, 0);
  hist[10] = 1ULL << 40;
  hist[250] = 1ULL << 41;
  CHECK(otsu_threshold(hist) == 10);
}

TEST_CASE("foreground is the dark class and tiles cover the tissue block") {
  const auto slide = slide_with_block(1024, 768, 256, 256, 512, 256);
  const auto mask = segment_foreground(slide, 16);
  CHECK(mask.width == 64);
  CHECK(mask.height == 48);
  CHECK(mask.count() == (512 / 16) * (256 / 16));
  CHECK(foreground_fraction(mask, 256, 256) == doctest::Approx(1.0));
  CHECK(foreground_fraction(mask, 0, 0) == doctest::Approx(0.0));
  CHECK(foreground_fraction(mask, 128, 256) == doctest::Approx(0.5));

  const auto tiles = tile_slide(slide, mask, 0.5);
  REQUIRE(tiles.size() == 2);
  CHECK(tiles[0].x == 256);
  CHECK(tiles[1].x == 512);
  for (const auto& t : tiles) {
    CHECK(t.pixels.width() == kTileSize);
    CHECK(t.pixels.at(0, 0) == Rgb{180, 90, 150});
  }
}

TEST_CASE("uniform slide has no foreground") {
  SlideImage s;
  s.pixels = RgbImage(512, 512, {200, 200, 200});
  const auto mask = segment_foreground(s, 16);
  CHECK(mask.count() == 0);
  CHECK(tile_slide(s, mask).empty());
}

TEST_CASE("tiles never leave the slide") {
  const auto slide = slide_with_block(700, 600, 0, 0, 700, 600);
  auto mask = segment_foreground(slide, 16, 0.0);
  std::fill(mask.bits.begin(), mask.bits.end(), 1);
  const auto tiles = tile_slide(slide, mask, 0.0);
  CHECK(tiles.size() == 4);
  for (const auto& t : tiles) {
    CHECK(t.x + kTileSize <= 700);
    CHECK(t.y + kTileSize <= 600);
  }
}

TEST_CASE("downsample box-averages with rounding") {
  RgbImage img(4, 2);
  img.set(0, 0, {0, 0, 0});
  img.set(1, 0, {1, 10, 255});
  img.set(0, 1, {2, 20, 255});
  img.set(1, 1, {3, 30, 255});
  const auto d = downsample_image(img, 2);
  CHECK(d.width() == 2);
  CHECK(d.height() == 1);
  CHECK(d.at(0, 0) == Rgb{2, 15, 191});
}

TEST_CASE("tiles csv round-trips and crops match") {
  const auto slide = slide_with_block(1024, 512, 0, 0, 1024, 512);
  auto mask = segment_foreground(slide, 16, 0.0);
  std::fill(mask.bits.begin(), mask.bits.end(), 1);
  const auto tiles = tile_slide(slide, mask);
  const auto path = std::filesystem::temp_directory_path() / "sgmil_tiles_test.csv";
  write_tiles_csv(tiles, path);
  const auto recs = read_tiles_csv(path);
  REQUIRE(recs.size() == tiles.size());
  const auto again = crop_tiles(slide, recs);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    CHECK(again[i].x == tiles[i].x);
    CHECK(again[i].pixels == tiles[i].pixels);
  }
  std::vector<TileRecord> bad = {{"S1", Magnification::X20, 3, 0}};
  CHECK_THROWS_AS(crop_tiles(slide, bad), Error);
  std::filesystem::remove(path);
}
