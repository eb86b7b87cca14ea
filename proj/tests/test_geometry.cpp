#include <random>

#include "doctest.h"
#include "sgalign/geometry.hpp"
#include "sgalign/kdtree.hpp"
#include "sgalign/reference.hpp"

using namespace sga;

namespace {

std::vector<Eigen::Vector3d> random_points(int n, std::uint64_t seed,
                                           double extent = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Eigen::Vector3d> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  return pts;
}

RigidTransform random_transform(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  RigidTransform t;
  t.rotation = random_rotation(seed);
  t.translation = {u(rng), u(rng), u(rng)};
  return t;
}

}  // namespace

TEST_CASE("apply_transform identity and translation") {
  PointCloud p;
  p.points = {{0, 0, 0}, {1, 2, 3}};
  p.object_ids = {0, 1};
  PointCloud same = apply_transform(RigidTransform{}, p);
  CHECK(same.points[1] == p.points[1]);
  CHECK(same.object_ids == p.object_ids);

  RigidTransform shift;
  shift.translation = {1, 0, 0};
  CHECK(apply_transform(shift, p).points[0] == Eigen::Vector3d(1, 0, 0));
}

TEST_CASE("apply_transform inverse round-trips and preserves distances") {
  PointCloud p;
  p.points = random_points(40, 10);
  p.object_ids.assign(40, 0);
  RigidTransform t = random_transform(11);
  PointCloud fwd = apply_transform(t, p);
  PointCloud back = apply_transform(t.inverse(), fwd);
  for (std::size_t i = 0; i < p.size(); ++i)
    CHECK((back.points[i] - p.points[i]).norm() < 1e-9);
  for (int i = 0; i < 10; ++i)
    CHECK(std::abs((fwd.points[i] - fwd.points[i + 1]).norm() -
                   (p.points[i] - p.points[i + 1]).norm()) < 1e-9);
}

TEST_CASE("weighted_svd_alignment identity on matched sets") {
  auto pts = random_points(20, 12);
  std::vector<double> w(20, 1.0);
  RigidTransform t = weighted_svd_alignment(pts, pts, w);
  CHECK((t.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(t.translation.norm() < 1e-9);
}

TEST_CASE("weighted_svd_alignment recovers a planted transform") {
  auto src = random_points(30, 13);
  RigidTransform gt = random_transform(14);
  std::vector<Eigen::Vector3d> ref;
  for (const auto& p : src) ref.push_back(gt.apply(p));
  std::vector<double> w(src.size(), 2.5);
  RigidTransform est = weighted_svd_alignment(src, ref, w);
  // asin form of the geodesic angle: well conditioned near zero, where the
  // arccos-of-trace form loses half the significant digits
  double rre = 2.0 * std::asin(std::min(
      1.0, (gt.rotation - est.rotation).norm() / (2.0 * std::sqrt(2.0))));
  CHECK(rre * 180.0 / M_PI < 1e-6);
  CHECK((gt.translation - est.translation).norm() < 1e-9);
}

TEST_CASE("weighted_svd_alignment invariant to weight rescaling") {
  auto src = random_points(15, 15);
  auto ref = random_points(15, 16);
  std::vector<double> w1(15), w2(15);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int i = 0; i < 15; ++i) {
    w1[i] = u(rng);
    w2[i] = 7.25 * w1[i];
  }
  RigidTransform a = weighted_svd_alignment(src, ref, w1);
  RigidTransform b = weighted_svd_alignment(src, ref, w2);
  CHECK((a.rotation - b.rotation).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((a.translation - b.translation).norm() < 1e-9);
}

TEST_CASE("weighted_svd_alignment degenerate input throws") {
  std::vector<Eigen::Vector3d> src = {{0, 0, 0}, {0, 0, 0}, {1, 0, 0}};
  std::vector<double> w(3, 1.0);
  CHECK_THROWS_AS(weighted_svd_alignment(src, src, w), DegenerateConfiguration);
  std::vector<Eigen::Vector3d> two = {{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(weighted_svd_alignment(two, two, {1.0, 1.0}),
                  DegenerateConfiguration);
}

TEST_CASE("ransac_pose planted transform, all inliers") {
  PointCloud src, ref;
  src.points = random_points(50, 18);
  src.object_ids.assign(50, 0);
  RigidTransform gt = random_transform(19);
  CorrespondenceSet corr;
  for (int i = 0; i < 50; ++i) {
    ref.points.push_back(gt.apply(src.points[i]));
    ref.object_ids.push_back(0);
    corr.pairs.push_back({i, i, 1.0});
  }
  RansacResult res = ransac_pose(corr, src, ref, 0.05, 200, 7);
  CHECK(res.inlier_count == 50);
  CHECK((res.transform.rotation - gt.rotation).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((res.transform.translation - gt.translation).norm() < 1e-6);
}

TEST_CASE("ransac_pose with 30% outliers flags the true inliers") {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  PointCloud src, ref;
  src.points = random_points(100, 21);
  src.object_ids.assign(100, 0);
  RigidTransform gt = random_transform(22);
  CorrespondenceSet corr;
  for (int i = 0; i < 100; ++i) {
    if (i < 70)
      ref.points.push_back(gt.apply(src.points[i]));
    else
      ref.points.push_back({u(rng), u(rng), u(rng)});
    ref.object_ids.push_back(0);
    corr.pairs.push_back({i, i, 1.0});
  }
  RansacResult res = ransac_pose(corr, src, ref, 0.05, 1000, 23);
  int true_inliers_flagged = 0;
  for (int i = 0; i < 70; ++i) true_inliers_flagged += res.inlier_mask[i] ? 1 : 0;
  CHECK(true_inliers_flagged >= 67);  // >= 95% of the 70 true inliers
}

TEST_CASE("ransac_pose determinism and insufficient input") {
  PointCloud src, ref;
  src.points = random_points(10, 24);
  src.object_ids.assign(10, 0);
  ref = src;
  CorrespondenceSet corr;
  for (int i = 0; i < 10; ++i) corr.pairs.push_back({i, i, 1.0});
  RansacResult a = ransac_pose(corr, src, ref, 0.05, 100, 5);
  RansacResult b = ransac_pose(corr, src, ref, 0.05, 100, 5);
  CHECK(a.transform.rotation == b.transform.rotation);
  CHECK(a.transform.translation == b.transform.translation);
  CHECK(a.inlier_mask == b.inlier_mask);

  CorrespondenceSet two;
  two.pairs = {{0, 0, 1.0}, {1, 1, 1.0}};
  CHECK_THROWS_AS(ransac_pose(two, src, ref, 0.05, 100, 5),
                  InsufficientCorrespondences);
}

TEST_CASE("knn_edges hand case and errors") {
  PointCloud p;
  p.points = {{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  p.object_ids = {0, 0, 0};
  auto edges = knn_edges(p, 1);
  std::vector<std::pair<int, int>> expect = {{0, 1}, {1, 0}, {2, 1}};
  CHECK(edges == expect);
  CHECK_THROWS_AS(knn_edges(p, 3), KTooLarge);
}

TEST_CASE("knn_edges matches the brute-force oracle") {
  for (std::uint64_t seed : {30, 31, 32}) {
    PointCloud p;
    p.points = random_points(100, seed);
    p.object_ids.assign(100, 0);
    CHECK(knn_edges(p, 8) == ref::brute_force_knn_edges(p.points, 8));
  }
  PointCloud big;
  big.points = random_points(500, 33);
  big.object_ids.assign(500, 0);
  CHECK(knn_edges(big, 5) == ref::brute_force_knn_edges(big.points, 5));
}

TEST_CASE("kd-tree knn and radius queries are exact") {
  auto pts = random_points(300, 34);
  KdTree tree(pts);
  auto queries = random_points(20, 35);
  for (const auto& q : queries) {
    auto got = tree.knn(q, 7);
    std::vector<std::pair<double, int>> d;
    for (int i = 0; i < 300; ++i) d.emplace_back((q - pts[i]).squaredNorm(), i);
    std::sort(d.begin(), d.end());
    for (int m = 0; m < 7; ++m) CHECK(got[m] == d[m].second);

    auto in_r = tree.radius(q, 1.0);
    std::vector<int> expect;
    for (int i = 0; i < 300; ++i)
      if ((q - pts[i]).norm() <= 1.0) expect.push_back(i);
    CHECK(in_r == expect);
  }
}

TEST_CASE("rigid transform matrix round-trip and validity") {
  RigidTransform t = random_transform(36);
  CHECK(t.is_valid());
  RigidTransform back = RigidTransform::from_matrix(t.matrix());
  CHECK((back.rotation - t.rotation).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.translation - t.translation).norm() < 1e-12);
  RigidTransform bad;
  bad.rotation(0, 0) = 2.0;
  CHECK(!bad.is_valid());
}
