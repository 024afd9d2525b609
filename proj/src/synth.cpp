#include "sgmil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "sgmil/error.hpp"
#include "sgmil/rng.hpp"

namespace sgmil {

namespace {

enum Stream : std::uint64_t { kTypes = 0, kLabels = 1, kClinical = 2, kDirections = 3, kSlides = 1000 };

// Irwin-Hall sum of four 16-bit uniforms from one draw, scaled to unit variance.
double pixel_noise(Rng& rng) {
  const std::uint64_t bits = rng.next();
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) sum += static_cast<double>((bits >> (16 * i)) & 0xFFFF);
  return (sum / 65536.0 - 2.0) * std::numbers::sqrt3;
}

bool unit_interval(double v) { return v >= 0.0 && v <= 1.0; }

std::vector<CancerType> allocate_types(const SyntheticCohortSpec& spec, Rng& rng) {
  const double total = std::accumulate(spec.cancer_type_mix.begin(), spec.cancer_type_mix.end(), 0.0);
  const auto n = static_cast<std::size_t>(spec.n_patients);
  // Largest remainder apportionment, ties to the lower type index.
  std::array<std::size_t, kNumCancerTypes> counts{};
  std::array<double, kNumCancerTypes> rem{};
  std::size_t assigned = 0;
  for (std::size_t t = 0; t < kNumCancerTypes; ++t) {
    const double exact = static_cast<double>(n) * spec.cancer_type_mix[t] / total;
    counts[t] = static_cast<std::size_t>(std::floor(exact));
    rem[t] = exact - static_cast<double>(counts[t]);
    assigned += counts[t];
  }
  std::array<std::size_t, kNumCancerTypes> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % kNumCancerTypes]];
  std::vector<CancerType> types;
  for (std::size_t t = 0; t < kNumCancerTypes; ++t) types.insert(types.end(), counts[t], cancer_type_from_index(t));
  rng.shuffle(std::span<CancerType>(types));
  return types;
}

std::string patient_name(int i) {
  std::string digits = std::to_string(i + 1);
  return "P" + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
}

}  // namespace

void validate(const SyntheticCohortSpec& spec) {
  auto bad = [](const std::string& what) { fail(ErrorKind::Config, "synthetic cohort: " + what); };
  if (spec.n_patients < 4) bad("n_patients must be >= 4");
  if (!unit_interval(spec.tmb_h_fraction)) bad("tmb_h_fraction must lie in [0, 1]");
  if (!unit_interval(spec.signal_fraction)) bad("signal_fraction must lie in [0, 1]");
  if (!unit_interval(spec.scale_expression)) bad("scale_expression must lie in [0, 1]");
  if (!(spec.shift >= 0.0) || !std::isfinite(spec.shift)) bad("shift must be finite and >= 0");
  if (spec.min_tiles < 1 || spec.max_tiles < spec.min_tiles) bad("tile range must satisfy 1 <= min_tiles <= max_tiles");
  if (spec.feature_dim < 1) bad("feature_dim must be >= 1");
  if (!(spec.baseline_hazard > 0.0) || !(spec.hazard_ratio > 0.0) || !(spec.censor_max > 0.0)) {
    bad("baseline_hazard, hazard_ratio and censor_max must be > 0");
  }
  double total = 0.0;
  for (double w : spec.cancer_type_mix) {
    if (!(w >= 0.0)) bad("cancer_type_mix entries must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) bad("cancer_type_mix must have positive mass");
}

SyntheticCohort generate_synthetic_cohort(const SyntheticCohortSpec& spec) {
  validate(spec);
  const auto n = static_cast<std::size_t>(spec.n_patients);
  const auto dim = static_cast<std::size_t>(spec.feature_dim);

  Rng type_rng(derive_seed(spec.seed, kTypes));
  const auto types = allocate_types(spec, type_rng);

  Rng label_rng(derive_seed(spec.seed, kLabels));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  label_rng.shuffle(std::span<std::size_t>(order));
  const auto n_high = static_cast<std::size_t>(std::lround(spec.tmb_h_fraction * static_cast<double>(n)));
  std::vector<TmbClass> labels(n, TmbClass::Low);
  for (std::size_t i = 0; i < n_high; ++i) labels[order[i]] = TmbClass::High;

  SyntheticCohort cohort;
  Rng clinical(derive_seed(spec.seed, kClinical));
  for (std::size_t i = 0; i < n; ++i) {
    PatientLabel p;
    p.patient_id = patient_name(static_cast<int>(i));
    p.cancer_type = types[i];
    p.label = labels[i];
    const double u = clinical.uniform();
    const double tmb = p.label == TmbClass::High ? 10.0 + 40.0 * (1.0 - u) : 10.0 * u;
    p.tmb = std::round(tmb * 1000.0) / 1000.0;
    if (p.label == TmbClass::High && *p.tmb <= 10.0) p.tmb = 10.001;
    p.total_mutation_count = std::llround(28.0 * *p.tmb);
    const double rate = spec.baseline_hazard * (p.label == TmbClass::High ? spec.hazard_ratio : 1.0);
    const double t_event = clinical.exponential(rate);
    const double t_censor = clinical.uniform(0.0, spec.censor_max);
    SurvivalRecord s;
    s.patient_id = p.patient_id;
    s.time = std::min(t_event, t_censor);
    s.event = t_event <= t_censor;
    s.group = p.label;
    p.survival = s;
    p.metadata["grade"] = "G" + std::to_string(1 + clinical.below(3));
    cohort.patients.push_back(std::move(p));
  }

  Rng dir_rng(derive_seed(spec.seed, kDirections));
  std::array<std::vector<double>, 3> directions;
  for (auto& d : directions) {
    d.resize(dim);
    double norm = 0.0;
    while (norm < 1e-6) {
      norm = 0.0;
      for (double& v : d) {
        v = dir_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (double& v : d) v /= norm;
  }

  for (std::size_t s = 0; s < 3; ++s) {
    cohort.slides[s].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = cohort.patients[i];
      Rng rng(derive_seed(spec.seed, kSlides + 3 * i + s));
      SyntheticSlide slide;
      auto& bag = slide.bag;
      bag.slide_id = p.patient_id + "-01";
      bag.patient_id = p.patient_id;
      bag.cancer_type = p.cancer_type;
      bag.magnification = kAllMagnifications[s];
      bag.dim = dim;
      const auto tiles = static_cast<std::size_t>(rng.between(spec.min_tiles, spec.max_tiles));
      const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(tiles))));
      for (std::size_t t = 0; t < tiles; ++t) {
        bag.coords.push_back({static_cast<std::int32_t>((t % cols) * kTileSize),
                              static_cast<std::int32_t>((t / cols) * kTileSize)});
      }
      bag.features.resize(tiles * dim);
      for (auto& v : bag.features) v = static_cast<float>(rng.normal());

      slide.signal.assign(tiles, 0);
      slide.expressed = p.label == TmbClass::High && rng.uniform() < spec.scale_expression;
      const auto centre = rng.below(tiles);
      if (slide.expressed) {
        const auto m = static_cast<std::size_t>(std::lround(spec.signal_fraction * static_cast<double>(tiles)));
        std::vector<std::pair<std::int64_t, std::size_t>> by_distance;
        for (std::size_t t = 0; t < tiles; ++t) {
          const std::int64_t dx = static_cast<std::int64_t>(t % cols) - static_cast<std::int64_t>(centre % cols);
          const std::int64_t dy = static_cast<std::int64_t>(t / cols) - static_cast<std::int64_t>(centre / cols);
          by_distance.emplace_back(dx * dx + dy * dy, t);
        }
        std::sort(by_distance.begin(), by_distance.end());
        for (std::size_t j = 0; j < m; ++j) {
          const auto t = by_distance[j].second;
          slide.signal[t] = 1;
          auto row = bag.row(t);
          for (std::size_t k = 0; k < dim; ++k) {
            row[k] = static_cast<float>(static_cast<double>(row[k]) + spec.shift * directions[s][k]);
          }
        }
      }
      cohort.slides[s][i] = std::move(slide);
    }
  }
  return cohort;
}

RgbImage render_synthetic_slide(const SyntheticSlide& slide, double strength, std::uint64_t seed) {
  const auto& bag = slide.bag;
  if (bag.size() == 0) fail(ErrorKind::EmptyBag, "render_synthetic_slide: slide has no tiles");
  std::int32_t max_x = 0, max_y = 0;
  for (const auto& c : bag.coords) {
    if (c[0] < 0 || c[1] < 0 || c[0] % kTileSize != 0 || c[1] % kTileSize != 0) {
      fail(ErrorKind::InvalidInput, "render_synthetic_slide: coordinates must be non-negative tile multiples");
    }
    max_x = std::max(max_x, c[0]);
    max_y = std::max(max_y, c[1]);
  }
  const int w = max_x + kTileSize + 2 * kSyntheticMargin;
  const int h = max_y + kTileSize + 2 * kSyntheticMargin;
  Rng rng(seed);
  RgbImage img(w, h);
  auto byte = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = 242.0 + 3.0 * pixel_noise(rng);
      img.set(x, y, {byte(v), byte(v), byte(v)});
    }
  }
  const int scale = scale_index(bag.magnification);
  for (std::size_t t = 0; t < bag.size(); ++t) {
    const bool sig = !slide.signal.empty() && slide.signal[t] != 0;
    const double darken = sig && scale == 0 ? 25.0 * strength : 0.0;
    const double band = sig && scale == 1 ? 20.0 * strength : 0.0;
    const double noise = 10.0 + (sig && scale == 2 ? 10.0 * strength : 0.0);
    const int x0 = bag.coords[t][0] + kSyntheticMargin, y0 = bag.coords[t][1] + kSyntheticMargin;
    for (int y = 0; y < kTileSize; ++y) {
      const double stripe = band * std::sin(2.0 * std::numbers::pi * y / 16.0);
      for (int x = 0; x < kTileSize; ++x) {
        const double n = noise * pixel_noise(rng);
        const double shade = -darken + stripe + n;
        img.set(x0 + x, y0 + y, {byte(215.0 + shade), byte(140.0 + shade), byte(185.0 + shade)});
      }
    }
  }
  return img;
}

}  // namespace sgmil
