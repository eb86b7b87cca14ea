#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "sgalign/geometry.hpp"

namespace sga {

struct SceneGraphNode {
  int id = 0;
  int semantic_class = 0;
  Eigen::VectorXd attributes;     // one row of X
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
};

/// Attributed directed graph G = (V, A, X, E).
struct SceneGraph {
  std::vector<SceneGraphNode> nodes;
  Eigen::MatrixXi adjacency;                       // MxM, 0/1, zero diagonal
  std::map<std::pair<int, int>, int> edge_relations;  // (i,j) -> relation class
  int num_classes = 0;
  int num_relations = 0;

  int size() const { return static_cast<int>(nodes.size()); }

  /// Node attribute matrix X, one row per node.
  Eigen::MatrixXd attribute_matrix() const;

  /// Throws on invariant violation (adjacency/edge mismatch, self-loops,
  /// class indices outside the vocabulary).
  void validate() const;
};

struct ScenePair {
  SceneGraph src_graph, ref_graph;
  PointCloud src_cloud, ref_cloud;
  std::vector<std::pair<int, int>> gt_alignment;  // (src node, ref node)
  RigidTransform gt_transform;                    // maps src frame -> ref frame
  double overlap_fraction = 0.0;

  /// Dense M_src x M_ref binary ground-truth matrix S.
  Eigen::MatrixXd gt_matrix() const;
};

enum class CorruptionRegime {
  RelationsRemoved,
  NodesRemoved,
  BothRemoved,
  WrongNodeSemantics,
  WrongBothSemantics,
};

/// Controlled-noise corruption. Rates are fractions of edges/nodes affected;
/// node removal drops attributes and incident edges as well.
SceneGraph corrupt(const SceneGraph& g, CorruptionRegime regime, double rate,
                   std::uint64_t seed);

struct GeneratorConfig {
  int min_nodes = 8;               // per fragment
  int max_nodes = 16;
  double min_overlap = 0.3;        // fraction of min(M_src, M_ref)
  double max_overlap = 1.0;
  int num_classes = 12;
  int num_relations = 4;
  int min_points_per_object = 30;
  int max_points_per_object = 60;
  double max_rotation_deg = 180.0;  // gt transform magnitude
  double max_translation = 3.0;     // meters, per axis
  double noise_sigma = 0.0;         // per-coordinate Gaussian noise on points
  double scene_extent = 8.0;        // placement cube side, meters
  double near_radius = 2.5;         // "near" relation radius
  // presets
  bool symmetric_stress = false;    // same-class groups with identical attributes
  bool twin_objects = false;        // geometrically identical twin pair in overlap
  int max_attempts = 200;
};

/// Cuts one synthetic scene of primitive-shaped objects into two overlapping
/// fragments with exact ground truth. Deterministic per seed.
ScenePair generate_scene_pair(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace sga
