#include "sgalign/kdtree.hpp"

#include <cmath>
#include <numeric>

namespace sga {

KdTree::KdTree(const std::vector<Eigen::Vector3d>& points) : points_(points) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) root_ = build(0, static_cast<int>(points_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
  Node node;
  node.begin = begin;
  node.end = end;
  if (end - begin <= kLeafSize) {
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  // split on the widest axis
  Eigen::Vector3d lo = points_[order_[begin]], hi = lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](int a, int b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  node.axis = axis;
  node.split = points_[order_[mid]][axis];
  int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  int left = build(begin, mid, depth + 1);
  int right = build(mid, end, depth + 1);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

void KdTree::knn_recurse(int node_id, const Eigen::Vector3d& q, int k,
                         std::vector<Candidate>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      int idx = order_[i];
      Candidate c{(points_[idx] - q).squaredNorm(), idx};
      if (static_cast<int>(heap.size()) < k) {
        heap.push_back(c);
        std::push_heap(heap.begin(), heap.end());
      } else if (c < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = c;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  double delta = q[node.axis] - node.split;
  int near = delta < 0 ? node.left : node.right;
  int far = delta < 0 ? node.right : node.left;
  knn_recurse(near, q, k, heap);
  // visit the far side unless strictly farther than the current worst
  if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().dist2)
    knn_recurse(far, q, k, heap);
}

std::vector<int> KdTree::knn(const Eigen::Vector3d& q, int k) const {
  k = std::min<int>(k, static_cast<int>(points_.size()));
  std::vector<Candidate> heap;
  if (k > 0 && root_ >= 0) {
    heap.reserve(k + 1);
    knn_recurse(root_, q, k, heap);
  }
  std::sort(heap.begin(), heap.end());
  std::vector<int> out;
  out.reserve(heap.size());
  for (const auto& c : heap) out.push_back(c.index);
  return out;
}

void KdTree::radius_recurse(int node_id, const Eigen::Vector3d& q, double r2,
                            std::vector<int>& out) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      int idx = order_[i];
      if ((points_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
    }
    return;
  }
  double delta = q[node.axis] - node.split;
  if (delta <= 0 || delta * delta <= r2) radius_recurse(node.left, q, r2, out);
  if (delta >= 0 || delta * delta <= r2) radius_recurse(node.right, q, r2, out);
}

std::vector<int> KdTree::radius(const Eigen::Vector3d& q, double r) const {
  std::vector<int> out;
  if (root_ >= 0) radius_recurse(root_, q, r * r, out);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sga
