#pragma once

#include <numeric>
#include <vector>

#include "sgmil/model.hpp"
#include "sgmil/rng.hpp"
#include "sgmil/wsigraph.hpp"

namespace fixtures {

inline sgmil::FeatureBag random_bag(sgmil::Rng& rng, std::size_t n, std::size_t d, int grid = 40) {
  sgmil::FeatureBag bag;
  bag.slide_id = "S";
  bag.patient_id = "P";
  bag.cancer_type = sgmil::cancer_type_from_index(static_cast<int>(rng.below(sgmil::kNumCancerTypes)));
  bag.dim = d;
  bag.features.resize(n * d);
  for (float& v : bag.features) v = static_cast<float>(rng.normal());
  for (std::size_t i = 0; i < n; ++i) {
    bag.coords.push_back({static_cast<std::int32_t>(256 * rng.below(grid)),
                          static_cast<std::int32_t>(256 * rng.below(grid))});
  }
  return bag;
}

// Initialised weights plus non-trivial norm and bias terms.
inline sgmil::ModelParams random_params(sgmil::Rng& rng, const sgmil::ModelShape& shape) {
  auto p = sgmil::ModelParams::initialize(shape, rng.next());
  for (auto& b : p.blocks) {
    for (double& v : b.norm_scale.values()) v = rng.uniform(0.5, 1.5);
    for (double& v : b.norm_shift.values()) v = rng.uniform(-0.3, 0.3);
    for (double& v : b.conv_bias.values()) v = rng.uniform(-0.3, 0.3);
  }
  for (double& v : p.proj_bias.values()) v = rng.uniform(-0.3, 0.3);
  for (double& v : p.class_bias.values()) v = rng.uniform(-0.3, 0.3);
  for (double& v : p.head_bias.values()) v = rng.uniform(-0.3, 0.3);
  return p;
}

// Same graph with node i moved to position perm[i].
inline sgmil::SlideGraph permute_graph(const sgmil::SlideGraph& g, const std::vector<std::size_t>& perm) {
  const std::size_t n = g.bag.size();
  sgmil::SlideGraph out;
  out.k = g.k;
  out.bag = g.bag;
  for (std::size_t i = 0; i < n; ++i) {
    auto src = g.bag.row(i);
    std::copy(src.begin(), src.end(), out.bag.row(perm[i]).begin());
    out.bag.coords[perm[i]] = g.bag.coords[i];
  }
  for (const auto& e : g.edges) {
    out.edges.push_back({static_cast<std::uint32_t>(perm[e.src]), static_cast<std::uint32_t>(perm[e.dst])});
  }
  out.neighborhood = sgmil::symmetrize(out.edges, n);
  return out;
}

inline std::vector<std::size_t> random_permutation(sgmil::Rng& rng, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  return perm;
}

}  // namespace fixtures
