#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sgmil/slide_ingest.hpp"
#include "sgmil/types.hpp"

namespace sgmil {

/// Per-slide instance matrix: N tile embeddings of dimension D (row-major,
/// 32-bit) plus each tile's origin in slide pixels.
struct FeatureBag {
  std::string slide_id;
  std::string patient_id;
  CancerType cancer_type = CancerType::COAD;
  Magnification magnification = Magnification::X20;
  std::size_t dim = 0;
  std::vector<float> features;
  std::vector<std::array<std::int32_t, 2>> coords;

  std::size_t size() const noexcept { return coords.size(); }
  std::span<const float> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {features.data() + i * dim, dim}; }

  friend bool operator==(const FeatureBag&, const FeatureBag&) = default;
};

/// Throws if the bag breaks its invariants (N >= 1, finite rows, shapes).
void validate(const FeatureBag& bag);

inline constexpr std::size_t kHistogramBins = 16;
inline constexpr std::size_t kOrientationBins = 8;
inline constexpr std::size_t kBuiltinEmbeddingDim = 3 * kHistogramBins + 6 + kOrientationBins;  // 62

/// Handcrafted tile descriptor, laid out as
///   [0, 48)  16-bin normalised histograms of R, G, B (bin = value / 16)
///   [48, 51) channel means, [51, 54) channel variances (population)
///   [54, 62) luma gradient orientation histogram,
/// with intensities scaled to [0, 1] for the moment and gradient entries.
/// Gradients are central differences on interior pixels; bin k is centred
/// on angle k * 45 degrees (bin 0 = +x, bin 2 = +y), weighted by magnitude
/// and divided by the number of interior pixels.
std::vector<double> embed_tile(const Tile& tile);

struct SlideMeta {
  std::string patient_id;
  CancerType cancer_type = CancerType::COAD;
};

/// Embeds tiles in parallel; row i is embed_tile(tiles[i]).
FeatureBag embed_slide(std::span<const Tile> tiles, const SlideMeta& meta);

// Binary bag file: magic "SGMB1", slide_id and patient_id as u32 length +
// bytes, cancer_type u8, magnification u8, N u32, D u32, N*D f32, N*2 i32.
// All little-endian.
void save_feature_bag(const FeatureBag& bag, const std::filesystem::path& path);
FeatureBag load_feature_bag(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_feature_bag(const FeatureBag& bag);
FeatureBag decode_feature_bag(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");

/// Conventional file name: <slide_id>_x<mag>.sgmb
std::string bag_file_name(const std::string& slide_id, Magnification m);

}  // namespace sgmil
