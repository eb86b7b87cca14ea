#include "sgalign/scenegraph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace sga {

Eigen::MatrixXd SceneGraph::attribute_matrix() const {
  if (nodes.empty()) return {};
  Eigen::MatrixXd x(nodes.size(), nodes[0].attributes.size());
  for (int i = 0; i < size(); ++i) x.row(i) = nodes[i].attributes.transpose();
  return x;
}

void SceneGraph::validate() const {
  const int m = size();
  if (adjacency.rows() != m || adjacency.cols() != m)
    throw DimensionMismatch("scene graph: adjacency shape != MxM");
  for (int i = 0; i < m; ++i) {
    if (adjacency(i, i) != 0) throw ParseError("scene graph: self-loop at node " + std::to_string(i));
    if (nodes[i].semantic_class < 0 || nodes[i].semantic_class >= num_classes)
      throw ParseError("scene graph: class out of vocabulary at node " + std::to_string(i));
  }
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      bool has = edge_relations.count({i, j}) > 0;
      if (has != (adjacency(i, j) == 1))
        throw ParseError("scene graph: adjacency/edge_relations mismatch");
    }
  for (const auto& [key, rel] : edge_relations)
    if (rel < 0 || rel >= num_relations)
      throw ParseError("scene graph: relation out of vocabulary");
}

Eigen::MatrixXd ScenePair::gt_matrix() const {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(src_graph.size(), ref_graph.size());
  for (auto [i, j] : gt_alignment) s(i, j) = 1.0;
  return s;
}

namespace {

enum class Shape { Box, Sphere, Cylinder, Plane };

struct ProtoObject {
  Shape shape = Shape::Box;
  int semantic_class = 0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();  // AABB half sizes
  std::vector<Eigen::Vector3d> points;                     // scene frame
};

Eigen::Vector3d sample_on_shape(const ProtoObject& o, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Eigen::Vector3d& h = o.half_extents;
  switch (o.shape) {
    case Shape::Box: {
      // pick a face weighted by area
      double ax = h.y() * h.z(), ay = h.x() * h.z(), az = h.x() * h.y();
      double pick = u01(rng) * (ax + ay + az);
      Eigen::Vector3d p(u(rng) * h.x(), u(rng) * h.y(), u(rng) * h.z());
      double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
      if (pick < ax)
        p.x() = sign * h.x();
      else if (pick < ax + ay)
        p.y() = sign * h.y();
      else
        p.z() = sign * h.z();
      return o.center + p;
    }
    case Shape::Sphere: {
      std::normal_distribution<double> g(0.0, 1.0);
      Eigen::Vector3d d(g(rng), g(rng), g(rng));
      d.normalize();
      return o.center + d.cwiseProduct(h);
    }
    case Shape::Cylinder: {
      double r = std::min(h.x(), h.y());
      double lateral = 2.0 * M_PI * r * 2.0 * h.z();
      double caps = 2.0 * M_PI * r * r;
      double theta = u01(rng) * 2.0 * M_PI;
      if (u01(rng) * (lateral + caps) < lateral) {
        return o.center + Eigen::Vector3d(r * std::cos(theta), r * std::sin(theta),
                                          u(rng) * h.z());
      }
      double rr = r * std::sqrt(u01(rng));
      double z = u01(rng) < 0.5 ? -h.z() : h.z();
      return o.center + Eigen::Vector3d(rr * std::cos(theta), rr * std::sin(theta), z);
    }
    case Shape::Plane:
      return o.center + Eigen::Vector3d(u(rng) * h.x(), u(rng) * h.y(), 0.0);
  }
  return o.center;
}

bool aabb_overlap(const ProtoObject& a, const ProtoObject& b) {
  for (int k = 0; k < 3; ++k)
    if (std::abs(a.center[k] - b.center[k]) >= a.half_extents[k] + b.half_extents[k])
      return false;
  return true;
}

// Geometric relation rules shared by both fragments (scene frame).
// 0 = near, 1 = under, 2 = above, 3 = adjacent (folded down for small vocabularies).
int relation_class(const Eigen::Vector3d& from, const Eigen::Vector3d& to,
                   double near_radius, int num_relations) {
  Eigen::Vector3d d = to - from;
  double horiz = std::hypot(d.x(), d.y());
  double vert = d.z();
  if (std::abs(vert) > std::max(horiz, 0.5) && num_relations >= 3)
    return vert > 0 ? 2 : 1;
  if (d.norm() < 0.5 * near_radius && num_relations >= 4) return 3;
  return 0;
}

Eigen::VectorXd make_attributes(int semantic_class, const Eigen::Vector3d& half_extents,
                                int num_classes, double scene_extent) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(num_classes + 3);
  x[semantic_class] = 1.0;
  x.tail<3>() = 2.0 * half_extents / scene_extent;  // normalized bbox extents
  return x;
}

SceneGraph build_graph(const std::vector<ProtoObject>& objects,
                       const std::vector<int>& members,
                       const std::vector<Eigen::Vector3d>& centroids,
                       const GeneratorConfig& cfg) {
  SceneGraph g;
  g.num_classes = cfg.num_classes;
  g.num_relations = cfg.num_relations;
  const int m = static_cast<int>(members.size());
  g.adjacency = Eigen::MatrixXi::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    const ProtoObject& o = objects[members[i]];
    SceneGraphNode node;
    node.id = i;
    node.semantic_class = o.semantic_class;
    node.attributes = make_attributes(o.semantic_class, o.half_extents,
                                      cfg.num_classes, cfg.scene_extent);
    node.centroid = centroids[i];
    g.nodes.push_back(std::move(node));
  }
  // relations from scene-frame centers, consistent across fragments
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const Eigen::Vector3d& a = objects[members[i]].center;
      const Eigen::Vector3d& b = objects[members[j]].center;
      if ((a - b).norm() > cfg.near_radius) continue;
      g.adjacency(i, j) = 1;
      g.edge_relations[{i, j}] =
          relation_class(a, b, cfg.near_radius, cfg.num_relations);
    }
  return g;
}

}  // namespace

ScenePair generate_scene_pair(const GeneratorConfig& cfg, std::uint64_t seed) {
  if (cfg.min_nodes < 1 || cfg.max_nodes < cfg.min_nodes)
    throw InfeasibleConfig("generator: bad node count range");
  if (cfg.min_overlap < 0.0 || cfg.max_overlap > 1.0 || cfg.max_overlap < cfg.min_overlap)
    throw InfeasibleConfig("generator: bad overlap range");
  if (cfg.num_classes < 2) throw InfeasibleConfig("generator: need >= 2 classes");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };

  const int m_src = uniform_int(cfg.min_nodes, cfg.max_nodes);
  const int m_ref = uniform_int(cfg.min_nodes, cfg.max_nodes);
  const double overlap =
      cfg.min_overlap + u01(rng) * (cfg.max_overlap - cfg.min_overlap);
  int shared = static_cast<int>(std::floor(overlap * std::min(m_src, m_ref) + 0.5));
  shared = std::clamp(shared, 0, std::min(m_src, m_ref));

  const int group_size = cfg.symmetric_stress ? 4 : (cfg.twin_objects ? 2 : 0);
  if (group_size > 0 && shared < group_size + 1)
    throw InfeasibleConfig("generator: preset needs larger shared set");

  const int total = m_src + m_ref - shared;
  std::vector<ProtoObject> objects;
  objects.reserve(total);

  Eigen::Vector3d group_center = Eigen::Vector3d::Zero();
  double group_exclusion = 0.0;

  // preset objects occupy the front of the shared block
  if (cfg.symmetric_stress) {
    // one anchor plus a ring of semantically identical satellites whose
    // geometry differs by primitive type only
    group_center = Eigen::Vector3d(-cfg.scene_extent / 2 + 1.5,
                                   -cfg.scene_extent / 2 + 1.5, 1.0);
    group_exclusion = 1.0 + cfg.near_radius + 0.1;
    ProtoObject anchor;
    anchor.shape = Shape::Box;
    anchor.semantic_class = 0;
    anchor.center = group_center;
    anchor.half_extents = Eigen::Vector3d(0.6, 0.6, 0.3);
    objects.push_back(anchor);
    const Shape sat_shapes[4] = {Shape::Box, Shape::Sphere, Shape::Cylinder,
                                 Shape::Plane};
    for (int s = 0; s < group_size; ++s) {
      ProtoObject sat;
      sat.shape = sat_shapes[s % 4];
      sat.semantic_class = 1;
      double angle = 2.0 * M_PI * s / group_size;
      sat.center = group_center +
                   Eigen::Vector3d(std::cos(angle), std::sin(angle), 0.0);
      sat.half_extents = Eigen::Vector3d(0.25, 0.25, 0.25);
      objects.push_back(sat);
    }
  } else if (cfg.twin_objects) {
    // geometrically identical same-class twins, both in the overlap
    group_center = Eigen::Vector3d(0.0, 0.0, 0.5);
    for (int s = 0; s < 2; ++s) {
      ProtoObject twin;
      twin.shape = Shape::Box;
      twin.semantic_class = 0;
      twin.center = group_center + Eigen::Vector3d(s == 0 ? -1.5 : 1.5, 0.0, 0.0);
      twin.half_extents = Eigen::Vector3d(0.5, 0.35, 0.25);
      objects.push_back(twin);
    }
    group_exclusion = 0.0;
  }

  while (static_cast<int>(objects.size()) < total) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      ProtoObject o;
      o.shape = static_cast<Shape>(uniform_int(0, 3));
      o.semantic_class = uniform_int(0, cfg.num_classes - 1);
      o.half_extents = Eigen::Vector3d(0.2 + 0.5 * u01(rng), 0.2 + 0.5 * u01(rng),
                                       0.2 + 0.5 * u01(rng));
      double half = cfg.scene_extent / 2.0;
      o.center = Eigen::Vector3d((2 * u01(rng) - 1) * half, (2 * u01(rng) - 1) * half,
                                 u01(rng) * half * 0.5);
      if (group_exclusion > 0.0 &&
          (o.center - group_center).norm() < group_exclusion)
        continue;
      bool collides = false;
      for (const auto& other : objects)
        if (aabb_overlap(o, other)) {
          collides = true;
          break;
        }
      if (collides) continue;
      objects.push_back(std::move(o));
      placed = true;
    }
    if (!placed) throw InfeasibleConfig("generator: object placement failed");
  }

  // sample surface points once per object; shared objects reuse them
  for (auto& o : objects) {
    int n = uniform_int(cfg.min_points_per_object, cfg.max_points_per_object);
    o.points.reserve(n);
    for (int i = 0; i < n; ++i) o.points.push_back(sample_on_shape(o, rng));
  }

  // scene object indices: [0, shared) in both fragments, then src-only, ref-only
  std::vector<int> src_members(m_src), ref_members(m_ref);
  std::iota(src_members.begin(), src_members.begin() + shared, 0);
  std::iota(src_members.begin() + shared, src_members.end(), shared);
  std::iota(ref_members.begin(), ref_members.begin() + shared, 0);
  std::iota(ref_members.begin() + shared, ref_members.end(), shared + (m_src - shared));
  std::shuffle(src_members.begin(), src_members.end(), rng);
  std::shuffle(ref_members.begin(), ref_members.end(), rng);

  // ground-truth rigid transform src frame -> ref frame
  RigidTransform gt;
  if (cfg.max_rotation_deg > 0.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::Vector3d axis(g(rng), g(rng), g(rng));
    axis.normalize();
    double angle = u01(rng) * cfg.max_rotation_deg * M_PI / 180.0;
    gt.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  }
  for (int k = 0; k < 3; ++k)
    gt.translation[k] = (2 * u01(rng) - 1) * cfg.max_translation;

  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  auto build_cloud = [&](const std::vector<int>& members, bool transformed) {
    PointCloud cloud;
    for (int local = 0; local < static_cast<int>(members.size()); ++local) {
      for (const auto& p : objects[members[local]].points) {
        Eigen::Vector3d q = transformed ? gt.apply(p) : p;
        if (cfg.noise_sigma > 0.0)
          q += Eigen::Vector3d(noise(rng), noise(rng), noise(rng));
        cloud.points.push_back(q);
        cloud.object_ids.push_back(local);
      }
    }
    return cloud;
  };

  ScenePair pair;
  pair.src_cloud = build_cloud(src_members, false);
  pair.ref_cloud = build_cloud(ref_members, true);

  auto centroids = [&](const PointCloud& cloud, int m) {
    std::vector<Eigen::Vector3d> c(m, Eigen::Vector3d::Zero());
    std::vector<int> counts(m, 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      c[cloud.object_ids[i]] += cloud.points[i];
      counts[cloud.object_ids[i]]++;
    }
    for (int i = 0; i < m; ++i) c[i] /= std::max(counts[i], 1);
    return c;
  };
  pair.src_graph = build_graph(objects, src_members, centroids(pair.src_cloud, m_src), cfg);
  pair.ref_graph = build_graph(objects, ref_members, centroids(pair.ref_cloud, m_ref), cfg);

  std::vector<int> scene_to_src(total, -1), scene_to_ref(total, -1);
  for (int i = 0; i < m_src; ++i) scene_to_src[src_members[i]] = i;
  for (int j = 0; j < m_ref; ++j) scene_to_ref[ref_members[j]] = j;
  for (int s = 0; s < shared; ++s)
    pair.gt_alignment.emplace_back(scene_to_src[s], scene_to_ref[s]);
  std::sort(pair.gt_alignment.begin(), pair.gt_alignment.end());

  pair.gt_transform = gt;
  pair.overlap_fraction =
      std::min(m_src, m_ref) > 0
          ? static_cast<double>(shared) / std::min(m_src, m_ref)
          : 0.0;
  return pair;
}

SceneGraph corrupt(const SceneGraph& g, CorruptionRegime regime, double rate,
                   std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw InfeasibleConfig("corrupt: rate outside [0,1]");
  std::mt19937_64 rng(seed);
  SceneGraph out = g;

  auto remove_edges = [&](SceneGraph& graph) {
    std::vector<std::pair<int, int>> keys;
    keys.reserve(graph.edge_relations.size());
    for (const auto& [key, rel] : graph.edge_relations) keys.push_back(key);
    int to_remove = static_cast<int>(std::floor(rate * keys.size()));
    std::shuffle(keys.begin(), keys.end(), rng);
    for (int i = 0; i < to_remove; ++i) {
      graph.edge_relations.erase(keys[i]);
      graph.adjacency(keys[i].first, keys[i].second) = 0;
    }
  };

  auto remove_nodes = [&](SceneGraph& graph) {
    const int m = graph.size();
    int to_remove = static_cast<int>(std::floor(rate * m));
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::set<int> removed(order.begin(), order.begin() + to_remove);
    std::vector<int> remap(m, -1);
    SceneGraph shrunk;
    shrunk.num_classes = graph.num_classes;
    shrunk.num_relations = graph.num_relations;
    for (int i = 0; i < m; ++i) {
      if (removed.count(i)) continue;
      remap[i] = shrunk.size();
      SceneGraphNode node = graph.nodes[i];
      node.id = remap[i];
      shrunk.nodes.push_back(std::move(node));
    }
    shrunk.adjacency = Eigen::MatrixXi::Zero(shrunk.size(), shrunk.size());
    for (const auto& [key, rel] : graph.edge_relations) {
      int a = remap[key.first], b = remap[key.second];
      if (a < 0 || b < 0) continue;
      shrunk.adjacency(a, b) = 1;
      shrunk.edge_relations[{a, b}] = rel;
    }
    graph = std::move(shrunk);
  };

  auto wrong_node_semantics = [&](SceneGraph& graph) {
    const int m = graph.size();
    int to_change = static_cast<int>(std::floor(rate * m));
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < to_change; ++i) {
      SceneGraphNode& node = graph.nodes[order[i]];
      int wrong = std::uniform_int_distribution<int>(0, graph.num_classes - 2)(rng);
      if (wrong >= node.semantic_class) ++wrong;
      node.attributes[node.semantic_class] = 0.0;
      node.attributes[wrong] = 1.0;
      node.semantic_class = wrong;
    }
  };

  auto wrong_edge_semantics = [&](SceneGraph& graph) {
    if (graph.num_relations < 2) return;
    std::vector<std::pair<int, int>> keys;
    for (const auto& [key, rel] : graph.edge_relations) keys.push_back(key);
    int to_change = static_cast<int>(std::floor(rate * keys.size()));
    std::shuffle(keys.begin(), keys.end(), rng);
    for (int i = 0; i < to_change; ++i) {
      int& rel = graph.edge_relations[keys[i]];
      int wrong = std::uniform_int_distribution<int>(0, graph.num_relations - 2)(rng);
      if (wrong >= rel) ++wrong;
      rel = wrong;
    }
  };

  switch (regime) {
    case CorruptionRegime::RelationsRemoved:
      remove_edges(out);
      break;
    case CorruptionRegime::NodesRemoved:
      remove_nodes(out);
      break;
    case CorruptionRegime::BothRemoved:
      remove_edges(out);
      remove_nodes(out);
      break;
    case CorruptionRegime::WrongNodeSemantics:
      wrong_node_semantics(out);
      break;
    case CorruptionRegime::WrongBothSemantics:
      wrong_node_semantics(out);
      wrong_edge_semantics(out);
      break;
  }
  return out;
}

}  // namespace sga
