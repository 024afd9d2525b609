#include "sgmil/wsigraph.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "sgmil/error.hpp"

namespace sgmil {

namespace {

// Candidate ordering: squared distance, then node index.
struct Candidate {
  std::int64_t dist2;
  std::uint32_t index;
  bool operator<(const Candidate& o) const { return dist2 != o.dist2 ? dist2 < o.dist2 : index < o.index; }
};

std::int64_t squared_distance(const Point& a, const Point& b) {
  const std::int64_t dx = static_cast<std::int64_t>(a[0]) - b[0];
  const std::int64_t dy = static_cast<std::int64_t>(a[1]) - b[1];
  return dx * dx + dy * dy;
}

class KdTree {
 public:
  explicit KdTree(std::span<const Point> points) : points_(points), order_(points.size()) {
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(points.size());
    if (!points.empty()) root_ = build(0, points.size(), 0);
  }

  /// k best candidates for query point q, excluding q itself, sorted.
  std::vector<Candidate> nearest(std::uint32_t q, std::size_t k) const {
    std::vector<Candidate> heap;
    heap.reserve(k + 1);
    if (k > 0) search(root_, q, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

 private:
  struct Node {
    std::uint32_t point;
    int axis;
    int left = -1;
    int right = -1;
  };

  int build(std::size_t lo, std::size_t hi, int depth) {
    if (lo >= hi) return -1;
    const int axis = depth % 2;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](std::uint32_t a, std::uint32_t b) {
                       return points_[a][axis] != points_[b][axis] ? points_[a][axis] < points_[b][axis] : a < b;
                     });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({order_[mid], axis});
    const int left = build(lo, mid, depth + 1);
    const int right = build(mid + 1, hi, depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void offer(std::vector<Candidate>& heap, std::size_t k, Candidate c) const {
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(int id, std::uint32_t q, std::size_t k, std::vector<Candidate>& heap) const {
    if (id < 0) return;
    const Node& node = nodes_[id];
    const Point& qp = points_[q];
    if (node.point != q) offer(heap, k, {squared_distance(qp, points_[node.point]), node.point});
    const std::int64_t diff = static_cast<std::int64_t>(qp[node.axis]) - points_[node.point][node.axis];
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    search(near, q, k, heap);
    // Points on the far side are at least |diff| away; equal distances must
    // still be visited because the index tie-break may prefer them.
    if (heap.size() < k || diff * diff <= heap.front().dist2) search(far, q, k, heap);
  }

  std::span<const Point> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace

std::vector<Edge> knn_edges(std::span<const Point> points, int k) {
  if (k < 1) fail(ErrorKind::InvalidInput, "knn: k must be >= 1");
  const std::size_t n = points.size();
  if (n <= 1) return {};
  const std::size_t degree = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
  const KdTree tree(points);
  std::vector<Edge> edges(n * degree);
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n > 256)
  for (long i = 0; i < count; ++i) {
    const auto best = tree.nearest(static_cast<std::uint32_t>(i), degree);
    for (std::size_t j = 0; j < degree; ++j) {
      edges[static_cast<std::size_t>(i) * degree + j] = {static_cast<std::uint32_t>(i), best[j].index};
    }
  }
  return edges;
}

Neighborhood symmetrize(std::span<const Edge> edges, std::size_t n) {
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (const auto& e : edges) {
    if (e.src >= n || e.dst >= n) fail(ErrorKind::InvalidInput, "edge endpoint out of range");
    if (e.src == e.dst) continue;
    adj[e.src].push_back(e.dst);
    adj[e.dst].push_back(e.src);
  }
  Neighborhood nb;
  nb.offsets.reserve(n + 1);
  nb.offsets.push_back(0);
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    nb.indices.insert(nb.indices.end(), list.begin(), list.end());
    nb.offsets.push_back(static_cast<std::uint32_t>(nb.indices.size()));
  }
  return nb;
}

SlideGraph build_knn_graph(FeatureBag bag, int k) {
  if (bag.size() == 0) fail(ErrorKind::EmptyBag, "build_knn_graph: bag " + bag.slide_id + " is empty");
  SlideGraph g;
  g.k = k;
  g.edges = knn_edges(bag.coords, k);
  g.neighborhood = symmetrize(g.edges, bag.size());
  g.bag = std::move(bag);
  return g;
}

void write_graph_csv(const SlideGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << "src,dst\n";
  for (const auto& e : graph.edges) out << e.src << ',' << e.dst << '\n';
}

namespace reference {

std::vector<Edge> knn_edges_brute_force(std::span<const Point> points, int k) {
  if (k < 1) fail(ErrorKind::InvalidInput, "knn: k must be >= 1");
  const std::size_t n = points.size();
  std::vector<Edge> edges;
  if (n <= 1) return edges;
  const std::size_t degree = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
  std::vector<Candidate> all;
  for (std::size_t i = 0; i < n; ++i) {
    all.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) all.push_back({squared_distance(points[i], points[j]), static_cast<std::uint32_t>(j)});
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<long>(degree), all.end());
    for (std::size_t j = 0; j < degree; ++j) edges.push_back({static_cast<std::uint32_t>(i), all[j].index});
  }
  return edges;
}

}  // namespace reference

}  // namespace sgmil
