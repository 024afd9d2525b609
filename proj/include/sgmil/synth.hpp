#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sgmil/embedding.hpp"
#include "sgmil/image.hpp"
#include "sgmil/training.hpp"

namespace sgmil {

struct SyntheticCohortSpec {
  int n_patients = 200;
  /// Relative cancer-type frequencies (COAD .. UCEC); need not sum to 1.
  std::array<double, kNumCancerTypes> cancer_type_mix = {1, 1, 1, 1, 1, 1, 1};
  double tmb_h_fraction = 0.27;
  /// Fraction of tiles carrying the signal in a TMB-H slide that expresses it.
  double signal_fraction = 0.2;
  /// Mean shift of signal tiles along the scale's direction, in base SDs.
  double shift = 3.0;
  /// Probability that a TMB-H slide expresses its signal at a given scale,
  /// independently per scale.
  double scale_expression = 0.536;
  int min_tiles = 50;
  int max_tiles = 150;
  int feature_dim = 16;
  /// Monthly hazard of TMB-L patients; TMB-H hazard is hazard_ratio times it.
  double baseline_hazard = 1.0 / 30.0;
  double hazard_ratio = 0.75;
  /// Censoring times are uniform on [0, censor_max] months.
  double censor_max = 240.0;
  std::uint64_t seed = 0;
};

/// Throws a config error unless fractions lie in [0, 1], n_patients >= 4
/// and the tile range and dimension are positive.
void validate(const SyntheticCohortSpec& spec);

struct SyntheticSlide {
  FeatureBag bag;
  /// Ground-truth signal flag per tile.
  std::vector<std::uint8_t> signal;
  bool expressed = false;
};

struct SyntheticCohort {
  std::vector<PatientLabel> patients;
  /// One slide per patient and scale, in patient order.
  std::array<std::vector<SyntheticSlide>, 3> slides;
};

/// Tile features are N(0, I). Signal tiles of an expressing TMB-H slide are
/// shifted by spec.shift along a unit direction drawn per scale, and form a
/// spatially contiguous cluster around a random grid cell. Survival is
/// exponential with uniform censoring. Metadata carries an uninformative
/// "grade" column.
SyntheticCohort generate_synthetic_cohort(const SyntheticCohortSpec& spec);

/// Renders a slide image whose tissue tiles sit at bag.coords offset by one
/// tile of background margin. Signal tiles get a scale-specific appearance
/// change (darker stain at x5, horizontal banding at x10, coarser texture
/// at x20) whose strength grows with `strength`.
RgbImage render_synthetic_slide(const SyntheticSlide& slide, double strength, std::uint64_t seed);

/// Coordinates and margin used by render_synthetic_slide.
inline constexpr int kSyntheticMargin = kTileSize;

}  // namespace sgmil
