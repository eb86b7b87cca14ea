#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "sgalign/geometry.hpp"
#include "sgalign/matcher.hpp"
#include "sgalign/scenegraph.hpp"

namespace sga {

struct SuperpointSet {
  std::vector<Eigen::Vector3d> centers;
  std::vector<std::vector<int>> member_point_indices;  // partition of the cloud
  Eigen::MatrixXd descriptors;  // one row per superpoint
  std::vector<int> object_id;   // modal object label of members
};

/// Voxel-grid clustering. Superpoint descriptors are the mean of member point
/// descriptors plus covariance shape features. Computes point descriptors
/// (radius 0.3, rotation-invariant) when the cloud carries none.
SuperpointSet build_superpoints(const PointCloud& p, double voxel);

/// C[i][j] = cosine similarity of ref superpoint i and src superpoint j,
/// shifted into [0, 1].
Eigen::MatrixXd superpoint_matching_matrix(const SuperpointSet& src,
                                           const SuperpointSet& ref);

/// C' = C + gamma * R with R broadcasting the node alignment score of the two
/// superpoints' objects (Eq-style semantic rescoring).
Eigen::MatrixXd rescore(const Eigen::MatrixXd& c, const SoftAlignment& alignment,
                        const SuperpointSet& src_sp, const SuperpointSet& ref_sp,
                        double gamma);

/// Top-m superpoint pairs by C' (optionally mutual-best filtered), then member
/// points matched by nearest descriptor with a ratio test. Scores inherit the
/// C' entry. Pair indices refer to the original clouds.
CorrespondenceSet extract_correspondences(const Eigen::MatrixXd& c_prime,
                                          const SuperpointSet& src_sp,
                                          const SuperpointSet& ref_sp,
                                          const PointCloud& src,
                                          const PointCloud& ref, int top_m,
                                          bool mutual);

enum class RegistrationStrategy { A2A, OPO, OPO_FilterScore, OPO_FilterTopK, O2O };

struct RegistrationParams {
  double voxel = 0.25;
  int top_m = 64;                  // superpoint pairs kept per matching pass
  bool mutual = true;
  double ratio_test = 0.9;
  double gamma = 0.2;              // rescoring weight
  double opo_score_threshold = 0.5;
  int opo_top_k = 5;
  bool use_ransac = false;
  double inlier_radius = 0.05;     // meters
  int ransac_iters = 1000;
};

struct RegistrationResult {
  RigidTransform transform;  // src frame -> ref frame
  CorrespondenceSet correspondences;
};

RegistrationResult register_pair(const ScenePair& pair, const SoftAlignment& alignment,
                                 RegistrationStrategy strategy,
                                 const RegistrationParams& params, std::uint64_t seed);

struct MosaicParams {
  RegistrationParams reg;
  RegistrationStrategy strategy = RegistrationStrategy::A2A;
  int min_correspondences = 10;
  double min_inlier_fraction = 0.25;
  double edge_inlier_radius = 0.05;
  std::uint64_t seed = 0;
};

/// Pairwise registration of all fragments, maximum-weight spanning tree rooted
/// at fragment 0, transforms composed along tree paths. Throws
/// DisconnectedScenes when a fragment shares no accepted edge with the tree.
std::vector<RigidTransform> mosaic(
    const std::vector<std::pair<SceneGraph, PointCloud>>& scenes,
    const MosaicParams& params);

}  // namespace sga
