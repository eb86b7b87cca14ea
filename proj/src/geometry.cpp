#include "sgalign/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sgalign/kdtree.hpp"

namespace sga {

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  RigidTransform t;
  t.rotation = m.topLeftCorner<3, 3>();
  t.translation = m.topRightCorner<3, 1>();
  return t;
}

bool RigidTransform::is_valid(double tol) const {
  Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
  if (err.cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

PointCloud apply_transform(const RigidTransform& t, const PointCloud& p) {
  PointCloud out = p;
  for (auto& pt : out.points) pt = t.apply(pt);
  return out;
}

RigidTransform weighted_svd_alignment(const std::vector<Eigen::Vector3d>& src,
                                      const std::vector<Eigen::Vector3d>& ref,
                                      const std::vector<double>& weights) {
  if (src.size() != ref.size() || src.size() != weights.size())
    throw DimensionMismatch("weighted_svd_alignment: size mismatch");
  if (src.size() < 3)
    throw DegenerateConfiguration("weighted_svd_alignment: need >= 3 pairs");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw DegenerateConfiguration("negative weight");
    wsum += w;
  }
  if (wsum <= 0.0) throw DegenerateConfiguration("weights sum to zero");

  Eigen::Vector3d src_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d ref_mean = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    src_mean += weights[i] * src[i];
    ref_mean += weights[i] * ref[i];
  }
  src_mean /= wsum;
  ref_mean /= wsum;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i)
    cov += weights[i] * (src[i] - src_mean) * (ref[i] - ref_mean).transpose();
  cov /= wsum;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d& s = svd.singularValues();
  if (s[0] <= 0.0 || s[1] <= 1e-12 * s[0])
    throw DegenerateConfiguration("weighted covariance has rank < 2");

  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  RigidTransform t;
  t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  t.translation = ref_mean - t.rotation * src_mean;
  return t;
}

RansacResult ransac_pose(const CorrespondenceSet& correspondences,
                         const PointCloud& src, const PointCloud& ref,
                         double inlier_radius, int max_iters, std::uint64_t seed) {
  const auto& pairs = correspondences.pairs;
  const int n = static_cast<int>(pairs.size());
  if (n < 3)
    throw InsufficientCorrespondences("ransac_pose: need >= 3 correspondences");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  const double r2 = inlier_radius * inlier_radius;

  auto count_inliers = [&](const RigidTransform& t, std::vector<char>* mask) {
    int count = 0;
    for (int i = 0; i < n; ++i) {
      Eigen::Vector3d moved = t.apply(src.points[pairs[i].src_index]);
      bool in = (moved - ref.points[pairs[i].ref_index]).squaredNorm() <= r2;
      if (mask) (*mask)[i] = in ? 1 : 0;
      if (in) ++count;
    }
    return count;
  };

  int best_count = -1;
  RigidTransform best;
  for (int it = 0; it < max_iters; ++it) {
    int a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || a == c || b == c) continue;
    std::vector<Eigen::Vector3d> s{src.points[pairs[a].src_index],
                                   src.points[pairs[b].src_index],
                                   src.points[pairs[c].src_index]};
    std::vector<Eigen::Vector3d> r{ref.points[pairs[a].ref_index],
                                   ref.points[pairs[b].ref_index],
                                   ref.points[pairs[c].ref_index]};
    RigidTransform hyp;
    try {
      hyp = weighted_svd_alignment(s, r, {1.0, 1.0, 1.0});
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    int count = count_inliers(hyp, nullptr);
    if (count > best_count) {
      best_count = count;
      best = hyp;
    }
  }
  if (best_count < 3)
    throw InsufficientCorrespondences("ransac_pose: no hypothesis with 3 inliers");

  RansacResult result;
  result.inlier_mask.assign(n, 0);
  count_inliers(best, &result.inlier_mask);

  // refine on the inlier set, weighted by correspondence scores
  std::vector<Eigen::Vector3d> s, r;
  std::vector<double> w;
  for (int i = 0; i < n; ++i) {
    if (!result.inlier_mask[i]) continue;
    s.push_back(src.points[pairs[i].src_index]);
    r.push_back(ref.points[pairs[i].ref_index]);
    w.push_back(std::max(pairs[i].score, 1e-9));
  }
  try {
    result.transform = weighted_svd_alignment(s, r, w);
  } catch (const DegenerateConfiguration&) {
    result.transform = best;
  }
  result.inlier_count = count_inliers(result.transform, &result.inlier_mask);
  return result;
}

std::vector<std::vector<int>> knn_indices(const std::vector<Eigen::Vector3d>& points,
                                          const std::vector<Eigen::Vector3d>& queries,
                                          int k) {
  const int n = static_cast<int>(points.size());
  std::vector<std::vector<int>> out(queries.size());
  if (n < 64) {
    // exhaustive fallback
    #pragma omp parallel for schedule(static)
    for (int q = 0; q < static_cast<int>(queries.size()); ++q) {
      std::vector<std::pair<double, int>> d(n);
      for (int i = 0; i < n; ++i)
        d[i] = {(points[i] - queries[q]).squaredNorm(), i};
      int kk = std::min(k, n);
      std::partial_sort(d.begin(), d.begin() + kk, d.end());
      out[q].reserve(kk);
      for (int i = 0; i < kk; ++i) out[q].push_back(d[i].second);
    }
    return out;
  }
  KdTree tree(points);
  #pragma omp parallel for schedule(static)
  for (int q = 0; q < static_cast<int>(queries.size()); ++q)
    out[q] = tree.knn(queries[q], k);
  return out;
}

std::vector<std::vector<int>> radius_indices(const std::vector<Eigen::Vector3d>& points,
                                             const std::vector<Eigen::Vector3d>& queries,
                                             double radius) {
  std::vector<std::vector<int>> out(queries.size());
  if (points.size() < 64) {
    const double r2 = radius * radius;
    #pragma omp parallel for schedule(static)
    for (int q = 0; q < static_cast<int>(queries.size()); ++q)
      for (int i = 0; i < static_cast<int>(points.size()); ++i)
        if ((points[i] - queries[q]).squaredNorm() <= r2) out[q].push_back(i);
    return out;
  }
  KdTree tree(points);
  #pragma omp parallel for schedule(static)
  for (int q = 0; q < static_cast<int>(queries.size()); ++q)
    out[q] = tree.radius(queries[q], radius);
  return out;
}

std::vector<std::pair<int, int>> knn_edges(const PointCloud& p, int k) {
  const int n = static_cast<int>(p.size());
  if (k >= n) throw KTooLarge("knn_edges: k must be < point count");
  if (k <= 0) return {};
  // query k+1 and drop the self-match
  auto nn = knn_indices(p.points, p.points, k + 1);
  std::vector<std::pair<int, int>> edges;
  edges.reserve(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    int taken = 0;
    for (int j : nn[i]) {
      if (j == i) continue;
      if (taken++ >= k) break;
      edges.emplace_back(i, j);
    }
  }
  return edges;
}

Eigen::Matrix3d random_rotation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double two_pi = 2.0 * M_PI;
  Eigen::Quaterniond q(std::sqrt(u1) * std::cos(two_pi * u3),
                       std::sqrt(1 - u1) * std::sin(two_pi * u2),
                       std::sqrt(1 - u1) * std::cos(two_pi * u2),
                       std::sqrt(u1) * std::sin(two_pi * u3));
  return q.normalized().toRotationMatrix();
}

}  // namespace sga
