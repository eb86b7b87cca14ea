#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "sgalign/encoder.hpp"
#include "sgalign/geometry.hpp"
#include "sgalign/scenegraph.hpp"

using namespace sga;
using ad::Mat;

namespace {

SceneGraph tiny_graph(int m, int num_classes, int num_relations) {
  SceneGraph g;
  g.num_classes = num_classes;
  g.num_relations = num_relations;
  g.adjacency = Eigen::MatrixXi::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    SceneGraphNode n;
    n.id = i;
    n.semantic_class = i % num_classes;
    n.attributes = Eigen::VectorXd::Zero(num_classes + 3);
    n.attributes(n.semantic_class) = 1.0;
    n.attributes(num_classes) = 0.2 * i;
    n.centroid = Eigen::Vector3d(i, 0, 0);
    g.nodes.push_back(n);
  }
  return g;
}

void add_edge(SceneGraph& g, int i, int j, int rel) {
  g.adjacency(i, j) = 1;
  g.edge_relations[{i, j}] = rel;
}

PointCloud cloud_from(const std::vector<Eigen::Vector3d>& pts,
                      const std::vector<int>& ids) {
  PointCloud p;
  p.points = pts;
  p.object_ids = ids;
  return p;
}

}  // namespace

TEST_CASE("semantic width is d(n+1) for every configuration") {
  for (int d : {4, 16})
    for (int n : {1, 2, 3}) {
      EncoderParams params = EncoderParams::init(5, 3, d, n, 1);
      CHECK(params.d_s() == d * (n + 1));
      SceneGraph g = tiny_graph(4, 5, 3);
      add_edge(g, 0, 1, 0);
      Mat f = encode_scene_graph(g, params);
      CHECK(f.rows() == 4);
      CHECK(f.cols() == d * (n + 1));
    }
}

TEST_CASE("edgeless graph: embeddings depend only on own attributes") {
  EncoderParams params = EncoderParams::init(4, 2, 8, 2, 2);
  SceneGraph a = tiny_graph(5, 4, 2);
  Mat fa = encode_scene_graph(a, params);

  // change one node's attributes; only that row may move
  SceneGraph b = a;
  b.nodes[2].semantic_class = (b.nodes[2].semantic_class + 1) % 4;
  b.nodes[2].attributes.setZero();
  b.nodes[2].attributes(b.nodes[2].semantic_class) = 1.0;
  Mat fb = encode_scene_graph(b, params);
  for (int i = 0; i < 5; ++i) {
    if (i == 2)
      CHECK((fa.row(i) - fb.row(i)).cwiseAbs().maxCoeff() > 1e-8);
    else
      CHECK((fa.row(i) - fb.row(i)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("automorphic nodes get identical semantic embeddings") {
  EncoderParams params = EncoderParams::init(3, 2, 8, 2, 3);
  SceneGraph g = tiny_graph(4, 3, 2);
  // nodes 1 and 2: same class/attributes, same edge to node 0
  g.nodes[2].semantic_class = g.nodes[1].semantic_class;
  g.nodes[2].attributes = g.nodes[1].attributes;
  add_edge(g, 1, 0, 1);
  add_edge(g, 2, 0, 1);
  Mat f = encode_scene_graph(g, params);
  CHECK((f.row(1) - f.row(2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encode_scene_graph is equivariant to node relabeling") {
  EncoderParams params = EncoderParams::init(6, 4, 8, 2, 4);
  GeneratorConfig c;
  c.min_nodes = 7;
  c.max_nodes = 7;
  c.num_classes = 6;
  c.num_relations = 4;
  c.min_points_per_object = 10;
  c.max_points_per_object = 15;
  SceneGraph g = generate_scene_pair(c, 9).src_graph;
  Mat f = encode_scene_graph(g, params);

  std::vector<int> perm(g.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));

  SceneGraph h = g;
  h.edge_relations.clear();
  h.adjacency.setZero();
  for (int i = 0; i < g.size(); ++i) h.nodes[perm[i]] = g.nodes[i];
  for (const auto& [e, rel] : g.edge_relations) {
    h.adjacency(perm[e.first], perm[e.second]) = 1;
    h.edge_relations[{perm[e.first], perm[e.second]}] = rel;
  }
  Mat fh = encode_scene_graph(h, params);
  for (int i = 0; i < g.size(); ++i)
    CHECK((fh.row(perm[i]) - f.row(i)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mismatched vocabulary throws DimensionMismatch") {
  EncoderParams params = EncoderParams::init(3, 2, 8, 2, 6);
  SceneGraph g = tiny_graph(3, 5, 2);  // 5 classes vs params' 3
  CHECK_THROWS_AS(encode_scene_graph(g, params), DimensionMismatch);
}

TEST_CASE("plane sample: planarity near 1, sphericity near 0") {
  // symmetric grid: the center's neighborhood has an exactly isotropic
  // in-plane covariance, so planarity = 1 up to rounding
  std::vector<Eigen::Vector3d> pts;
  int mid = -1;
  for (int ix = -10; ix <= 10; ++ix)
    for (int iy = -10; iy <= 10; ++iy) {
      if (ix == 0 && iy == 0) mid = static_cast<int>(pts.size());
      pts.push_back({0.05 * ix, 0.05 * iy, 0.0});
    }
  PointCloud p = cloud_from(pts, std::vector<int>(pts.size(), 0));
  Mat d = point_descriptors(p, 0.3);
  CHECK(d(mid, 1) > 1.0 - 1e-6);   // planarity
  CHECK(d(mid, 2) < 1e-6);         // sphericity
}

TEST_CASE("ball sample: sphericity dominates the shape components") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 600; ++i) {
    Eigen::Vector3d v(gauss(rng), gauss(rng), gauss(rng));
    v.normalize();
    v *= 0.25 * std::cbrt(u01(rng));
    pts.push_back(v);
  }
  PointCloud p = cloud_from(pts, std::vector<int>(600, 0));
  Mat d = point_descriptors(p, 0.3);
  Eigen::Vector3d shape = d.row(0).head<3>();
  CHECK(shape(2) > shape(0));
  CHECK(shape(2) > shape(1));
}

TEST_CASE("descriptors are rotation invariant") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 200; ++i) pts.push_back({u(rng), u(rng), u(rng)});
  PointCloud p = cloud_from(pts, std::vector<int>(200, 0));
  Mat d0 = point_descriptors(p, 0.3, true);

  RigidTransform t;
  t.rotation = random_rotation(11);
  t.translation = {1.0, -2.0, 0.5};
  Mat d1 = point_descriptors(apply_transform(t, p), 0.3, true);
  CHECK((d0 - d1).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("isolated points get the zero descriptor") {
  PointCloud p = cloud_from({{0, 0, 0}, {100, 0, 0}, {200, 0, 0}}, {0, 0, 0});
  Mat d = point_descriptors(p, 0.3);
  CHECK(d.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("p2sg_fuse concatenates semantic and geometric blocks") {
  EncoderParams params = EncoderParams::init(3, 2, 8, 2, 12);
  GeneratorConfig c;
  c.min_nodes = 5;
  c.max_nodes = 5;
  c.num_classes = 3;
  c.num_relations = 2;
  c.min_points_per_object = 15;
  c.max_points_per_object = 20;
  ScenePair pair = generate_scene_pair(c, 13);
  Mat f_s = encode_scene_graph(pair.src_graph, params);
  Mat f_p = point_descriptors(pair.src_cloud, params.descriptor_radius);
  NodeEmbeddings emb = p2sg_fuse(f_p, pair.src_cloud, 8, params, f_s);
  CHECK(emb.fused.cols() == params.d_s() + params.d_p());
  CHECK((emb.fused.leftCols(params.d_s()) - emb.semantic).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((emb.fused.rightCols(params.d_p()) - emb.geometric)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK(emb.geometric.allFinite());
}

TEST_CASE("p2sg_fuse throws EmptyObject when a node owns no points") {
  EncoderParams params = EncoderParams::init(3, 2, 8, 1, 14);
  SceneGraph g = tiny_graph(3, 3, 2);
  // object 2 owns nothing
  PointCloud p = cloud_from({{0, 0, 0}, {0.1, 0, 0}, {1, 0, 0}, {1.1, 0, 0}},
                            {0, 0, 1, 1});
  Mat f_s = encode_scene_graph(g, params);
  Mat f_p = point_descriptors(p, 0.3);
  CHECK_THROWS_AS(p2sg_fuse(f_p, p, 2, params, f_s), EmptyObject);
}

TEST_CASE("p2sg_fuse is invariant to point order within objects") {
  EncoderParams params = EncoderParams::init(3, 2, 8, 2, 15);
  GeneratorConfig c;
  c.min_nodes = 4;
  c.max_nodes = 4;
  c.num_classes = 3;
  c.num_relations = 2;
  c.min_points_per_object = 12;
  c.max_points_per_object = 16;
  ScenePair pair = generate_scene_pair(c, 16);
  PointCloud p = pair.src_cloud;
  Mat f_s = encode_scene_graph(pair.src_graph, params);
  Mat f_p = point_descriptors(p, params.descriptor_radius);
  NodeEmbeddings a = p2sg_fuse(f_p, p, 8, params, f_s);

  std::vector<int> perm(p.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
  PointCloud q;
  q.points.resize(p.size());
  q.object_ids.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    q.points[perm[i]] = p.points[i];
    q.object_ids[perm[i]] = p.object_ids[i];
  }
  Mat f_q = point_descriptors(q, params.descriptor_radius);
  NodeEmbeddings b = p2sg_fuse(f_q, q, 8, params, f_s);
  CHECK((a.geometric - b.geometric).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fusion separates symmetric nodes that semantics cannot") {
  EncoderParams params = EncoderParams::init(12, 4, 16, 2, 17);
  GeneratorConfig c;
  c.symmetric_stress = true;
  c.min_overlap = 0.9;
  c.min_nodes = 8;
  c.max_nodes = 10;
  ScenePair pair = generate_scene_pair(c, 18);

  // find an automorphic same-attribute pair among the preset's satellites
  const SceneGraph& g = pair.src_graph;
  Mat f_s = encode_scene_graph(g, params);
  int a = -1, b = -1;
  for (int i = 0; i < g.size() && a < 0; ++i)
    for (int j = i + 1; j < g.size() && a < 0; ++j)
      if ((f_s.row(i) - f_s.row(j)).cwiseAbs().maxCoeff() < 1e-12 &&
          g.nodes[i].semantic_class == g.nodes[j].semantic_class) {
        a = i;
        b = j;
      }
  REQUIRE(a >= 0);

  Mat f_p = point_descriptors(pair.src_cloud, params.descriptor_radius);
  NodeEmbeddings emb = p2sg_fuse(f_p, pair.src_cloud, 8, params, f_s);
  CHECK((emb.fused.row(a) - emb.fused.row(b)).cwiseAbs().maxCoeff() >= 1e-3);
}
