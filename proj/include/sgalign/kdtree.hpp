#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstddef>
#include <vector>

namespace sga {

/// Exact 3D kd-tree over a fixed point set. Queries return indices sorted by
/// (distance, index); radius queries return ascending indices. Subtrees are
/// only pruned on strictly greater axis distance, so equal-distance ties are
/// always visited and resolved by index.
class KdTree {
 public:
  explicit KdTree(const std::vector<Eigen::Vector3d>& points);

  /// k nearest points to q (k capped at the point count).
  std::vector<int> knn(const Eigen::Vector3d& q, int k) const;

  /// All points with |p - q| <= radius.
  std::vector<int> radius(const Eigen::Vector3d& q, double r) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int left = -1;
    int right = -1;
    int begin = 0;   // leaf range into order_
    int end = 0;
    int axis = 0;
    double split = 0.0;
  };

  int build(int begin, int end, int depth);

  struct Candidate {
    double dist2;
    int index;
    bool operator<(const Candidate& o) const {
      return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
  };

  void knn_recurse(int node, const Eigen::Vector3d& q, int k,
                   std::vector<Candidate>& heap) const;
  void radius_recurse(int node, const Eigen::Vector3d& q, double r2,
                      std::vector<int>& out) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;

  static constexpr int kLeafSize = 16;
};

}  // namespace sga
