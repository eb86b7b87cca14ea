#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "sgalign/errors.hpp"

namespace sga {

/// Proper rigid motion in SE(3): p -> R*p + t. Units are meters.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  /// (a.compose(b))(p) == a(b(p))
  RigidTransform compose(const RigidTransform& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  RigidTransform inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }

  Eigen::Matrix4d matrix() const;
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);

  /// Orthonormality and det(R)=+1 within tol.
  bool is_valid(double tol = 1e-9) const;
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<int> object_ids;          // point-to-object map O
  Eigen::MatrixXd descriptors;          // optional, N x d_p; 0x0 when absent

  std::size_t size() const { return points.size(); }
  bool has_descriptors() const { return descriptors.rows() > 0; }
};

PointCloud apply_transform(const RigidTransform& t, const PointCloud& p);

/// Weighted Procrustes: minimizes sum_i w_i |R*src_i + t - ref_i|^2.
/// Reflections are corrected by flipping the sign of the smallest singular
/// direction. Throws DegenerateConfiguration when the weighted covariance
/// has rank < 2.
RigidTransform weighted_svd_alignment(const std::vector<Eigen::Vector3d>& src,
                                      const std::vector<Eigen::Vector3d>& ref,
                                      const std::vector<double>& weights);

struct Correspondence {
  int ref_index = 0;
  int src_index = 0;
  double score = 0.0;
};

enum class CorrLevel { Superpoint, Point };

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  CorrLevel level = CorrLevel::Point;
};

struct RansacResult {
  RigidTransform transform;
  std::vector<char> inlier_mask;  // one flag per correspondence
  int inlier_count = 0;
};

/// Classic 3-point RANSAC with weighted-SVD refinement on the final inlier
/// set. Deterministic for a fixed seed.
RansacResult ransac_pose(const CorrespondenceSet& correspondences,
                         const PointCloud& src, const PointCloud& ref,
                         double inlier_radius, int max_iters, std::uint64_t seed);

/// Directed k-nearest-neighbor edges (i -> neighbor) over Euclidean distance,
/// ties broken by smaller point index. Exact; kd-tree backed above 64 points.
std::vector<std::pair<int, int>> knn_edges(const PointCloud& p, int k);

/// k nearest neighbors of each query among `points`, sorted by (distance, index).
/// Exact. Self-matches are not excluded; callers filter if needed.
std::vector<std::vector<int>> knn_indices(const std::vector<Eigen::Vector3d>& points,
                                          const std::vector<Eigen::Vector3d>& queries,
                                          int k);

/// Indices of points within `radius` of each query (inclusive), ascending index.
std::vector<std::vector<int>> radius_indices(const std::vector<Eigen::Vector3d>& points,
                                             const std::vector<Eigen::Vector3d>& queries,
                                             double radius);

/// Uniform random rotation (Shoemake quaternion method) from the given engine state.
Eigen::Matrix3d random_rotation(std::uint64_t seed);

}  // namespace sga
