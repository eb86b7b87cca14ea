#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sgalign/scenegraph.hpp"
#include "sgalign/tape.hpp"

namespace sga {

inline constexpr int kDescriptorWidth = 32;  // d_p, zero-padded

/// Scene-graph encoder weights: MLP lifts, n graph-attention layers with
/// learnable scalar skip gates, and the P2SG point-attention layer.
/// Output semantic width d_s = d * (n + 1).
struct EncoderParams {
  int d = 16;
  int n_layers = 2;
  int num_classes = 0;
  int num_relations = 0;
  int knn_k = 8;
  double descriptor_radius = 0.3;
  double leaky_slope = 0.2;
  bool rotation_invariant = true;
  bool use_fusion = true;  // when false, geometric embeddings are zeroed (B variant)

  ad::Mat node_mlp_w, node_mlp_b;  // (x_dim x d), (1 x d)
  ad::Mat edge_mlp_w, edge_mlp_b;  // (e_dim x d), (1 x d)
  struct GatLayer {
    ad::Mat w;      // (3d x d), applied to [h_src | h_dst | e]
    ad::Mat attn;   // (d x 1)
    ad::Mat value;  // (d x d)
    ad::Mat gate;   // (1 x 1) skip gate, init 1.0
  };
  std::vector<GatLayer> layers;
  ad::Mat p2sg_w, p2sg_attn, p2sg_value;  // (2 d_p x d_p), (d_p x 1), (d_p x d_p)

  int x_dim() const { return num_classes + 3; }
  int e_dim() const { return num_relations; }
  int d_s() const { return d * (n_layers + 1); }
  int d_p() const { return kDescriptorWidth; }

  static EncoderParams init(int num_classes, int num_relations, int d, int n_layers,
                            std::uint64_t seed);
  std::map<std::string, ad::Mat> to_tensors() const;
  static EncoderParams from_tensors(const std::map<std::string, ad::Mat>& t,
                                    const std::map<std::string, std::string>& meta);
  void check_finite() const;
};

struct NodeEmbeddings {
  ad::Mat semantic;   // M x d_s
  ad::Mat geometric;  // M x d_p
  ad::Mat fused;      // M x (d_s + d_p)
};

/// Tape-side handles to encoder parameters.
struct EncoderTape {
  int node_w = -1, node_b = -1, edge_w = -1, edge_b = -1;
  struct L {
    int w, attn, value, gate;
  };
  std::vector<L> layers;
  int p2sg_w = -1, p2sg_attn = -1, p2sg_value = -1;
};

EncoderTape encoder_on_tape(ad::Tape& tape, const EncoderParams& p);

/// Semantic embedding F_S as a tape node (M x d_s).
int encode_scene_graph_t(ad::Tape& tape, const SceneGraph& g,
                         const EncoderParams& cfg, const EncoderTape& tp);

/// Node-level geometric embedding F_P (M x d_p): one attention layer over the
/// point knn graph followed by per-object max pooling.
int p2sg_pool_t(ad::Tape& tape, int f_p_node, const std::vector<int>& object_ids,
                const std::vector<std::pair<int, int>>& knn, int num_objects,
                const EncoderParams& cfg, const EncoderTape& tp);

/// Convenience inference wrappers (fresh internal tape).
ad::Mat encode_scene_graph(const SceneGraph& g, const EncoderParams& params);

/// Hand-crafted per-point descriptors (N x 32): covariance shape ratios,
/// normal-angle statistics, local density and neighborhood spread, distance to
/// the owning object's centroid; plus height above that centroid unless
/// rotation_invariant. Points with fewer than 3 neighbors get the zero row.
ad::Mat point_descriptors(const PointCloud& p, double radius,
                          bool rotation_invariant = true);

NodeEmbeddings p2sg_fuse(const ad::Mat& f_p, const PointCloud& p, int knn_k,
                         const EncoderParams& params, const ad::Mat& f_s);

}  // namespace sga
