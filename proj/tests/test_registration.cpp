#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "sgalign/matcher.hpp"
#include "sgalign/metrics.hpp"
#include "sgalign/registration.hpp"

using namespace sga;
using ad::Mat;

namespace {

PointCloud random_cloud(int n, std::uint64_t seed, double extent = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent);
  PointCloud p;
  p.points.resize(n);
  for (auto& x : p.points) x = {u(rng), u(rng), u(rng)};
  p.object_ids.assign(n, 0);
  return p;
}

GeneratorConfig clean_config() {
  GeneratorConfig c;
  c.min_nodes = 6;
  c.max_nodes = 9;
  c.min_overlap = 0.7;
  c.min_points_per_object = 25;
  c.max_points_per_object = 40;
  return c;
}

double rre_deg(const RigidTransform& a, const RigidTransform& b) {
  double arg = ((a.rotation.transpose() * b.rotation).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(arg, -1.0, 1.0)) * 180.0 / M_PI;
}

}  // namespace

TEST_CASE("build_superpoints partitions the cloud") {
  PointCloud p = random_cloud(200, 1);
  SuperpointSet sp = build_superpoints(p, 0.5);
  std::set<int> seen;
  std::size_t total = 0;
  for (const auto& members : sp.member_point_indices) {
    total += members.size();
    for (int i : members) CHECK(seen.insert(i).second);
  }
  CHECK(total == p.size());
  CHECK(sp.centers.size() == sp.member_point_indices.size());
  CHECK(static_cast<std::size_t>(sp.descriptors.rows()) == sp.centers.size());
}

TEST_CASE("build_superpoints single voxel and split clusters") {
  PointCloud tight;
  tight.points = {{0.01, 0.01, 0.01}, {0.02, 0.02, 0.02}, {0.03, 0.01, 0.02}};
  tight.object_ids = {0, 0, 0};
  SuperpointSet one = build_superpoints(tight, 1.0);
  CHECK(one.centers.size() == 1);
  CHECK(one.member_point_indices[0].size() == 3);

  PointCloud split;
  for (int i = 0; i < 5; ++i) {
    split.points.push_back({0.01 * i, 0, 0});
    split.points.push_back({10.0 + 0.01 * i, 0, 0});
    split.object_ids.push_back(0);
    split.object_ids.push_back(1);
  }
  SuperpointSet two = build_superpoints(split, 0.5);
  CHECK(two.centers.size() == 2);
  for (const auto& members : two.member_point_indices) {
    int obj = split.object_ids[members[0]];
    for (int i : members) CHECK(split.object_ids[i] == obj);
  }
}

TEST_CASE("superpoint modal object label") {
  PointCloud p;
  p.points = {{0, 0, 0}, {0.01, 0, 0}, {0.02, 0, 0}};
  p.object_ids = {1, 1, 2};
  SuperpointSet sp = build_superpoints(p, 1.0);
  REQUIRE(sp.object_id.size() == 1);
  CHECK(sp.object_id[0] == 1);
}

TEST_CASE("superpoint matching matrix pinned values") {
  SuperpointSet a, b;
  a.descriptors.resize(2, 3);
  a.descriptors << 1, 0, 0, 0, 1, 0;
  a.centers = {{0, 0, 0}, {1, 0, 0}};
  b = a;
  Mat c = superpoint_matching_matrix(a, b);
  CHECK(c(0, 0) == doctest::Approx(1.0));
  CHECK(c(1, 1) == doctest::Approx(1.0));
  CHECK(c(0, 1) == doctest::Approx(0.5));  // orthogonal -> cosine 0 -> 0.5
  CHECK(c(1, 0) == doctest::Approx(0.5));
  for (int i = 0; i < 2; ++i) {
    Eigen::Index am;
    c.row(i).maxCoeff(&am);
    CHECK(am == i);
  }
  CHECK(c.minCoeff() >= 0.0);
  CHECK(c.maxCoeff() <= 1.0);
}

TEST_CASE("rescore identity at gamma 0 and exact +gamma on aligned cells") {
  SuperpointSet src_sp, ref_sp;
  src_sp.descriptors = Mat::Identity(3, 4);
  ref_sp.descriptors = Mat::Identity(3, 4);
  src_sp.object_id = {0, 1, 2};
  ref_sp.object_id = {0, 1, 2};
  Mat c = Mat::Constant(3, 3, 0.4);

  SoftAlignment align;
  align.soft_matrix = Mat::Zero(4, 4);  // 3x3 interior, hard permutation
  align.soft_matrix(0, 1) = 1.0;
  align.soft_matrix(1, 0) = 1.0;
  align.soft_matrix(2, 2) = 1.0;

  Mat same = rescore(c, align, src_sp, ref_sp, 0.0);
  CHECK(same == c);

  Mat out = rescore(c, align, src_sp, ref_sp, 0.2);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double expect = align.soft_matrix(j, i) == 1.0 ? 0.6 : 0.4;
      CHECK(out(i, j) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("rescore is monotone in the alignment score") {
  SuperpointSet src_sp, ref_sp;
  src_sp.object_id = {0};
  ref_sp.object_id = {0};
  Mat c = Mat::Constant(1, 1, 0.3);
  SoftAlignment low, high;
  low.soft_matrix = Mat::Constant(2, 2, 0.2);
  high.soft_matrix = Mat::Constant(2, 2, 0.9);
  CHECK(rescore(c, low, src_sp, ref_sp, 0.2)(0, 0) <
        rescore(c, high, src_sp, ref_sp, 0.2)(0, 0));
}

TEST_CASE("rescore rejects out-of-range object labels") {
  SuperpointSet src_sp, ref_sp;
  src_sp.object_id = {7};
  ref_sp.object_id = {0};
  Mat c = Mat::Constant(1, 1, 0.3);
  SoftAlignment align;
  align.soft_matrix = Mat::Zero(2, 2);
  CHECK_THROWS_AS(rescore(c, align, src_sp, ref_sp, 0.2), ObjectOutOfRange);
}

TEST_CASE("rescoring flips an ambiguous twin match") {
  // two ref superpoints with identical descriptors (twin objects); the wrong
  // twin scores marginally higher before rescoring
  SuperpointSet src_sp, ref_sp;
  src_sp.object_id = {0};
  ref_sp.object_id = {0, 1};
  Mat c(2, 1);
  c << 0.90, 0.91;  // row 1 = wrong twin, slightly ahead
  SoftAlignment align;
  align.soft_matrix = Mat::Zero(2, 3);  // src 1 x ref 2 interior
  align.soft_matrix(0, 0) = 1.0;        // src obj 0 aligns to ref obj 0

  Eigen::Index before, after;
  c.col(0).maxCoeff(&before);
  Mat cp = rescore(c, align, src_sp, ref_sp, 0.2);
  cp.col(0).maxCoeff(&after);
  CHECK(before == 1);
  CHECK(after == 0);
}

TEST_CASE("extract_correspondences identity pairing on identical clouds") {
  GeneratorConfig cfg = clean_config();
  ScenePair pair = generate_scene_pair(cfg, 3);
  PointCloud p = pair.src_cloud;
  p.descriptors = point_descriptors(p, 0.3, true);
  SuperpointSet sp = build_superpoints(p, 0.25);
  Mat c = superpoint_matching_matrix(sp, sp);
  CorrespondenceSet corr =
      extract_correspondences(c, sp, sp, p, p, 10000, true);
  REQUIRE(!corr.pairs.empty());
  int identical = 0;
  for (const auto& pr : corr.pairs)
    if (pr.ref_index == pr.src_index) ++identical;
  // descriptor duplicates can divert a few pairs; the bulk must be identity
  CHECK(identical >= static_cast<int>(corr.pairs.size() * 9) / 10);
}

TEST_CASE("extract_correspondences with top_m = 1 uses one superpoint pair") {
  PointCloud p = random_cloud(120, 4);
  p.descriptors = point_descriptors(p, 0.3, true);
  SuperpointSet sp = build_superpoints(p, 0.5);
  Mat c = superpoint_matching_matrix(sp, sp);
  CorrespondenceSet corr = extract_correspondences(c, sp, sp, p, p, 1, false);
  std::set<double> scores;
  for (const auto& pr : corr.pairs) scores.insert(pr.score);
  CHECK(scores.size() <= 1);
}

TEST_CASE("O2O with ground-truth alignment recovers the planted transform") {
  GeneratorConfig cfg = clean_config();
  RegistrationParams params;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ScenePair pair = generate_scene_pair(cfg, 100 + seed);
    SoftAlignment gt_align = alignment_from_ground_truth(pair);
    RegistrationResult res =
        register_pair(pair, gt_align, RegistrationStrategy::O2O, params, seed);
    CHECK(rre_deg(res.transform, pair.gt_transform) < 0.5);
    CHECK((res.transform.translation - pair.gt_transform.translation).norm() <
          0.01);
  }
}

TEST_CASE("O2O with empty selection throws NoCorrespondences") {
  ScenePair pair = generate_scene_pair(clean_config(), 9);
  SoftAlignment empty;
  empty.soft_matrix = Mat::Zero(pair.src_graph.size() + 1,
                                pair.ref_graph.size() + 1);
  CHECK_THROWS_AS(register_pair(pair, empty, RegistrationStrategy::O2O,
                                RegistrationParams{}, 0),
                  NoCorrespondences);
}

TEST_CASE("A2A on identical full-overlap clouds returns identity") {
  GeneratorConfig cfg = clean_config();
  cfg.min_overlap = 1.0;
  cfg.max_overlap = 1.0;
  cfg.max_rotation_deg = 0.0;
  cfg.max_translation = 0.0;
  ScenePair pair = generate_scene_pair(cfg, 10);
  RegistrationResult res = register_pair(pair, {}, RegistrationStrategy::A2A,
                                         RegistrationParams{}, 0);
  CHECK((res.transform.rotation - Eigen::Matrix3d::Identity()).cwiseAbs()
            .maxCoeff() < 1e-6);
  CHECK(res.transform.translation.norm() < 1e-6);
}

TEST_CASE("O2O with every node selected equals A2A when gamma is 0") {
  // src == ref so the union of selected objects covers the whole cloud and the
  // O2O subcloud is bitwise the full cloud
  ScenePair base = generate_scene_pair(clean_config(), 11);
  ScenePair pair;
  pair.src_graph = pair.ref_graph = base.src_graph;
  pair.src_cloud = pair.ref_cloud = base.src_cloud;
  for (int i = 0; i < base.src_graph.size(); ++i) pair.gt_alignment.push_back({i, i});
  SoftAlignment full = alignment_from_ground_truth(pair);
  RegistrationParams params;
  params.gamma = 0.0;
  RegistrationResult a2a =
      register_pair(pair, full, RegistrationStrategy::A2A, params, 0);
  RegistrationResult o2o =
      register_pair(pair, full, RegistrationStrategy::O2O, params, 0);
  CHECK((a2a.transform.matrix() - o2o.transform.matrix()).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(a2a.correspondences.pairs.size() == o2o.correspondences.pairs.size());
}

TEST_CASE("registration is left-equivariant to reference rotations") {
  GeneratorConfig cfg = clean_config();
  ScenePair pair = generate_scene_pair(cfg, 12);
  SoftAlignment gt_align = alignment_from_ground_truth(pair);
  RegistrationParams params;
  RegistrationResult base =
      register_pair(pair, gt_align, RegistrationStrategy::O2O, params, 0);

  RigidTransform q;
  q.rotation = random_rotation(55);
  q.translation = {0.3, -1.0, 0.7};
  ScenePair rotated = pair;
  rotated.ref_cloud = apply_transform(q, pair.ref_cloud);
  for (auto& n : rotated.ref_graph.nodes) n.centroid = q.apply(n.centroid);
  rotated.gt_transform = q.compose(pair.gt_transform);
  RegistrationResult moved =
      register_pair(rotated, gt_align, RegistrationStrategy::O2O, params, 0);
  RigidTransform expect = q.compose(base.transform);
  CHECK((moved.transform.rotation - expect.rotation).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((moved.transform.translation - expect.translation).norm() < 1e-6);
}

TEST_CASE("O2O exactly recovers the planted transform on clean data") {
  ScenePair pair = generate_scene_pair(clean_config(), 77);
  SoftAlignment gt_align = alignment_from_ground_truth(pair);
  RegistrationResult res = register_pair(pair, gt_align, RegistrationStrategy::O2O,
                                         RegistrationParams{}, 0);
  // Frobenius/asin angle form: the acos-of-trace formula bottoms out near 1e-6
  // degrees from rounding of the trace alone
  double fro = (res.transform.rotation - pair.gt_transform.rotation).norm();
  double angle = 2.0 * std::asin(std::min(1.0, fro / (2.0 * std::sqrt(2.0))));
  CHECK(angle * 180.0 / M_PI < 1e-6);
  CHECK((res.transform.translation - pair.gt_transform.translation).norm() < 1e-8);
}

TEST_CASE("OPO strategies recover clean pairs and filters apply") {
  GeneratorConfig cfg = clean_config();
  ScenePair pair = generate_scene_pair(cfg, 13);
  SoftAlignment gt_align = alignment_from_ground_truth(pair);
  RegistrationParams params;
  for (auto strategy :
       {RegistrationStrategy::OPO, RegistrationStrategy::OPO_FilterScore,
        RegistrationStrategy::OPO_FilterTopK}) {
    RegistrationResult res = register_pair(pair, gt_align, strategy, params, 0);
    CHECK(rre_deg(res.transform, pair.gt_transform) < 0.5);
  }
  // score filter at threshold 1.0 removes every pair (gt scores are 1.0)
  RegistrationParams strict = params;
  strict.opo_score_threshold = 1.0;
  CHECK_THROWS_AS(register_pair(pair, gt_align,
                                RegistrationStrategy::OPO_FilterScore, strict, 0),
                  NoCorrespondences);
}

TEST_CASE("mosaic of two identical scenes is the identity") {
  GeneratorConfig cfg = clean_config();
  ScenePair pair = generate_scene_pair(cfg, 14);
  std::vector<std::pair<SceneGraph, PointCloud>> scenes = {
      {pair.src_graph, pair.src_cloud}, {pair.src_graph, pair.src_cloud}};
  auto poses = mosaic(scenes, MosaicParams{});
  REQUIRE(poses.size() == 2);
  for (const auto& t : poses) {
    CHECK((t.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(t.translation.norm() < 1e-6);
  }
}

TEST_CASE("mosaic throws on a disconnected fragment") {
  GeneratorConfig cfg = clean_config();
  ScenePair pair = generate_scene_pair(cfg, 15);
  // third fragment: far-away random points with no structural overlap
  PointCloud stray = random_cloud(150, 99, 1.5);
  for (auto& p : stray.points) p += Eigen::Vector3d(500, 500, 500);
  SceneGraph stray_graph;
  stray_graph.num_classes = cfg.num_classes;
  stray_graph.num_relations = cfg.num_relations;
  stray_graph.adjacency = Eigen::MatrixXi::Zero(1, 1);
  SceneGraphNode n;
  n.attributes = Eigen::VectorXd::Zero(cfg.num_classes + 3);
  n.attributes(0) = 1.0;
  stray_graph.nodes.push_back(n);

  std::vector<std::pair<SceneGraph, PointCloud>> scenes = {
      {pair.src_graph, pair.src_cloud},
      {pair.src_graph, pair.src_cloud},
      {stray_graph, stray}};
  CHECK_THROWS_AS(mosaic(scenes, MosaicParams{}), DisconnectedScenes);
}
