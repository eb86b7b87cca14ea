#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <utility>
#include <vector>

namespace sga::ref {

// Serial brute-force counterparts of the OpenMP kernels. Kept as the ground
// truth for unit tests and as the baseline in the kernel benchmark.

inline std::vector<std::pair<int, int>> brute_force_knn_edges(
    const std::vector<Eigen::Vector3d>& points, int k) {
  const int n = static_cast<int>(points.size());
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> d;
    d.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      d.emplace_back((points[i] - points[j]).squaredNorm(), j);
    }
    std::sort(d.begin(), d.end());
    for (int m = 0; m < k && m < static_cast<int>(d.size()); ++m)
      edges.emplace_back(i, d[m].second);
  }
  return edges;
}

inline double nearest_dist2_serial(const Eigen::Vector3d& q,
                                   const std::vector<Eigen::Vector3d>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) best = std::min(best, (q - p).squaredNorm());
  return best;
}

inline double chamfer_serial(const std::vector<Eigen::Vector3d>& p,
                             const std::vector<Eigen::Vector3d>& q) {
  double a = 0.0, b = 0.0;
  for (const auto& x : p) a += nearest_dist2_serial(x, q);
  for (const auto& y : q) b += nearest_dist2_serial(y, p);
  return a / static_cast<double>(p.size()) + b / static_cast<double>(q.size());
}

}  // namespace sga::ref
