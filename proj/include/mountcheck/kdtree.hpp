#pragma once

#include <cstdint>
#include <vector>

#include "mountcheck/geometry.hpp"

namespace mountcheck {

/// Exact nearest-neighbour index over a fixed 3D point set. Axis-aligned
/// splits at the median of the widest dimension.
class KdTree3 {
 public:
  struct Neighbor {
    std::size_t index = 0;
    double sq_dist = 0.0;
  };

  explicit KdTree3(std::vector<Point3> points, std::size_t leaf_size = 8);

  /// Throws EmptyInput when the index holds no points.
  Neighbor nearest(const Point3& query) const;

  const std::vector<Point3>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    // leaf: [begin, end) into order_; inner: split on dim at value
    std::uint32_t begin = 0, end = 0;
    std::int32_t left = -1, right = -1;
    int dim = -1;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Point3& q, Neighbor& best) const;

  std::vector<Point3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

}  // namespace mountcheck
