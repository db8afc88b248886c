#include "mountcheck/kdtree.hpp"

#include <algorithm>
#include <limits>

#include "mountcheck/error.hpp"

namespace mountcheck {

KdTree3::KdTree3(std::vector<Point3> points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t KdTree3::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= leaf_size_) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int dim = 0;
  (hi - lo).maxCoeff(&dim);
  if (hi[dim] - lo[dim] <= 0.0) return id;  // all coincident: keep as leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a][dim] < points_[b][dim];
                   });
  const double split = points_[order_[mid]][dim];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.dim = dim;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void KdTree3::search(std::int32_t node_id, const Point3& q, Neighbor& best) const {
  const Node& n = nodes_[static_cast<std::size_t>(node_id)];
  if (n.dim < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const double d = (points_[order_[i]] - q).squaredNorm();
      if (d < best.sq_dist) best = {order_[i], d};
    }
    return;
  }
  // left holds coordinates <= split, right holds >= split
  const double diff = q[n.dim] - n.split;
  const std::int32_t near = diff < 0.0 ? n.left : n.right;
  const std::int32_t far = diff < 0.0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff <= best.sq_dist) search(far, q, best);
}

KdTree3::Neighbor KdTree3::nearest(const Point3& query) const {
  if (points_.empty()) throw Error(ErrorKind::EmptyInput, "nearest neighbour in empty target");
  Neighbor best{0, std::numeric_limits<double>::infinity()};
  search(0, query, best);
  return best;
}

}  // namespace mountcheck
