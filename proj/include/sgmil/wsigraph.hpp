#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sgmil/embedding.hpp"

namespace sgmil {

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Undirected neighbourhoods in CSR form: neighbours of i are
/// indices[offsets[i] .. offsets[i+1]), sorted ascending.
struct Neighborhood {
  std::vector<std::uint32_t> offsets;
  std::vector<std::uint32_t> indices;

  std::size_t nodes() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::span<const std::uint32_t> of(std::size_t i) const {
    return {indices.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

/// A feature bag with its directed kNN edge list. Edges are grouped by
/// source; within a source they are ordered nearest first.
struct SlideGraph {
  FeatureBag bag;
  int k = 8;
  std::vector<Edge> edges;
  /// Union of in- and out-neighbours for message passing.
  Neighborhood neighborhood;
};

using Point = std::array<std::int32_t, 2>;

/// Exact k nearest neighbours of every point (Euclidean, ties to the smaller
/// index, self excluded) via a k-d tree. Out-degree is min(k, N - 1).
std::vector<Edge> knn_edges(std::span<const Point> points, int k);

/// Symmetrises a directed edge list over n nodes.
Neighborhood symmetrize(std::span<const Edge> edges, std::size_t n);

SlideGraph build_knn_graph(FeatureBag bag, int k = 8);

/// Debug dump: src,dst.
void write_graph_csv(const SlideGraph& graph, const std::filesystem::path& path);

namespace reference {
/// O(N^2) scan with the same ordering rule, kept for tests and benchmarks.
std::vector<Edge> knn_edges_brute_force(std::span<const Point> points, int k);
}  // namespace reference

}  // namespace sgmil
