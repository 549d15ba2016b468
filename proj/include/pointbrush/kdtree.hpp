#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "pointbrush/error.hpp"
#include "pointbrush/geometry.hpp"

namespace pointbrush {

struct Neighbor {
  std::size_t index = 0;
  double squared_distance = 0.0;

  double distance() const { return std::sqrt(squared_distance); }

  // Search order: closer first, lower index on equal distance.
  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.squared_distance < b.squared_distance ||
           (a.squared_distance == b.squared_distance && a.index < b.index);
  }
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Counters for one or more queries; pass to a query to have it accumulate.
struct QueryStats {
  std::size_t nodes_visited = 0;
  std::size_t points_tested = 0;
};

/// Exact, immutable k-d tree over the positions of one frame.
///
/// Axes cycle x, y, z with depth and each split is the median element
/// (by coordinate, then index). Leaves hold up to kLeafSize points scanned
/// linearly. Results match a brute-force scan exactly, with ties broken by
/// the lower point index.
class KdTree {
 public:
  static constexpr std::size_t kLeafSize = 16;

  explicit KdTree(const PointCloud& cloud) : KdTree(cloud.positions()) {}

  explicit KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) throw Error("cannot index empty cloud");
    if (points_.size() > std::numeric_limits<std::uint32_t>::max()) throw Error("cloud too large to index");
    order_.resize(points_.size());
    for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, static_cast<std::uint32_t>(order_.size()), 0);
  }

  std::size_t size() const noexcept { return points_.size(); }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  Neighbor nearest(const Vec3& query, QueryStats* stats = nullptr) const {
    Neighbor best{0, std::numeric_limits<double>::infinity()};
    search_nearest(0, query, best, stats);
    return best;
  }

  /// The min(k, n) nearest points sorted by (distance, index).
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k, QueryStats* stats = nullptr) const {
    k = std::min(k, points_.size());
    std::vector<Neighbor> heap;
    if (k == 0) return heap;
    heap.reserve(k + 1);
    search_knn(0, query, k, heap, stats);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  /// Indices within distance `radius` of `center` (squared distance <= radius^2),
  /// ascending.
  std::vector<std::size_t> radius_query(const Vec3& center, double radius, QueryStats* stats = nullptr) const {
    if (!(radius >= 0.0)) throw Error("negative radius");
    std::vector<std::size_t> out;
    search_radius(0, center, radius * radius, out, stats);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end, int depth) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    const int axis = depth % 3;
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double ca = points_[a][axis];
                       const double cb = points_[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    const double split = points_[order_[mid]][axis];
    const std::uint32_t left = build(begin, mid, depth + 1);
    const std::uint32_t right = build(mid, end, depth + 1);
    Node& node = nodes_[id];
    node.axis = axis;
    node.split = split;
    node.left = left;
    node.right = right;
    return id;
  }

  // Points left of a split have coordinate <= split, right of it >= split, so
  // (query - split)^2 lower-bounds the squared distance to anything across the
  // plane. Subtrees are skipped only when that bound strictly exceeds the
  // current worst, which keeps equal-distance candidates for tie-breaking.

  void search_nearest(std::uint32_t id, const Vec3& q, Neighbor& best, QueryStats* stats) const {
    const Node& node = nodes_[id];
    if (stats) ++stats->nodes_visited;
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const Neighbor cand{order_[i], squared_distance(q, points_[order_[i]])};
        if (stats) ++stats->points_tested;
        if (cand < best) best = cand;
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const std::uint32_t near = diff <= 0.0 ? node.left : node.right;
    const std::uint32_t far = diff <= 0.0 ? node.right : node.left;
    search_nearest(near, q, best, stats);
    if (diff * diff <= best.squared_distance) search_nearest(far, q, best, stats);
  }

  void search_knn(std::uint32_t id, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap,
                  QueryStats* stats) const {
    const Node& node = nodes_[id];
    if (stats) ++stats->nodes_visited;
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const Neighbor cand{order_[i], squared_distance(q, points_[order_[i]])};
        if (stats) ++stats->points_tested;
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const std::uint32_t near = diff <= 0.0 ? node.left : node.right;
    const std::uint32_t far = diff <= 0.0 ? node.right : node.left;
    search_knn(near, q, k, heap, stats);
    if (heap.size() < k || diff * diff <= heap.front().squared_distance) search_knn(far, q, k, heap, stats);
  }

  void search_radius(std::uint32_t id, const Vec3& q, double r2, std::vector<std::size_t>& out,
                     QueryStats* stats) const {
    const Node& node = nodes_[id];
    if (stats) ++stats->nodes_visited;
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        if (stats) ++stats->points_tested;
        if (squared_distance(q, points_[order_[i]]) <= r2) out.push_back(order_[i]);
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const bool visit_left = diff <= 0.0 || diff * diff <= r2;
    const bool visit_right = diff >= 0.0 || diff * diff <= r2;
    if (visit_left) search_radius(node.left, q, r2, out, stats);
    if (visit_right) search_radius(node.right, q, r2, out, stats);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace pointbrush
