#include "sgalign/encoder.hpp"

#include <cmath>
#include <random>

#include "sgalign/geometry.hpp"

namespace sga {

using ad::Mat;

namespace {

Mat fan_in_uniform(int rows, int cols, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = u(rng);
  return m;
}

}  // namespace

EncoderParams EncoderParams::init(int num_classes, int num_relations, int d,
                                  int n_layers, std::uint64_t seed) {
  EncoderParams p;
  p.d = d;
  p.n_layers = n_layers;
  p.num_classes = num_classes;
  p.num_relations = num_relations;
  std::mt19937_64 rng(seed);
  p.node_mlp_w = fan_in_uniform(p.x_dim(), d, rng);
  p.node_mlp_b = Mat::Zero(1, d);
  p.edge_mlp_w = fan_in_uniform(p.e_dim(), d, rng);
  p.edge_mlp_b = Mat::Zero(1, d);
  for (int l = 0; l < n_layers; ++l) {
    GatLayer layer;
    layer.w = fan_in_uniform(3 * d, d, rng);
    layer.attn = fan_in_uniform(d, 1, rng);
    layer.value = fan_in_uniform(d, d, rng);
    layer.gate = Mat::Constant(1, 1, 1.0);
    p.layers.push_back(std::move(layer));
  }
  const int dp = p.d_p();
  p.p2sg_w = fan_in_uniform(2 * dp, dp, rng);
  p.p2sg_attn = fan_in_uniform(dp, 1, rng);
  p.p2sg_value = fan_in_uniform(dp, dp, rng);
  return p;
}

std::map<std::string, Mat> EncoderParams::to_tensors() const {
  std::map<std::string, Mat> t;
  t["enc.node_mlp_w"] = node_mlp_w;
  t["enc.node_mlp_b"] = node_mlp_b;
  t["enc.edge_mlp_w"] = edge_mlp_w;
  t["enc.edge_mlp_b"] = edge_mlp_b;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::string base = "enc.gat" + std::to_string(l) + ".";
    t[base + "w"] = layers[l].w;
    t[base + "attn"] = layers[l].attn;
    t[base + "value"] = layers[l].value;
    t[base + "gate"] = layers[l].gate;
  }
  t["enc.p2sg_w"] = p2sg_w;
  t["enc.p2sg_attn"] = p2sg_attn;
  t["enc.p2sg_value"] = p2sg_value;
  return t;
}

EncoderParams EncoderParams::from_tensors(
    const std::map<std::string, Mat>& t,
    const std::map<std::string, std::string>& meta) {
  EncoderParams p;
  auto get = [&](const std::string& name) -> const Mat& {
    auto it = t.find(name);
    if (it == t.end()) throw CheckpointMismatch("missing tensor " + name);
    return it->second;
  };
  auto imeta = [&](const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointMismatch("missing meta key " + key);
    return std::stoi(it->second);
  };
  p.num_classes = imeta("num_classes");
  p.num_relations = imeta("num_relations");
  p.d = imeta("d");
  p.n_layers = imeta("n_layers");
  if (auto it = meta.find("use_fusion"); it != meta.end())
    p.use_fusion = it->second == "1";
  p.node_mlp_w = get("enc.node_mlp_w");
  p.node_mlp_b = get("enc.node_mlp_b");
  p.edge_mlp_w = get("enc.edge_mlp_w");
  p.edge_mlp_b = get("enc.edge_mlp_b");
  for (int l = 0; l < p.n_layers; ++l) {
    std::string base = "enc.gat" + std::to_string(l) + ".";
    GatLayer layer;
    layer.w = get(base + "w");
    layer.attn = get(base + "attn");
    layer.value = get(base + "value");
    layer.gate = get(base + "gate");
    p.layers.push_back(std::move(layer));
  }
  p.p2sg_w = get("enc.p2sg_w");
  p.p2sg_attn = get("enc.p2sg_attn");
  p.p2sg_value = get("enc.p2sg_value");
  if (p.node_mlp_w.rows() != p.x_dim() || p.node_mlp_w.cols() != p.d)
    throw CheckpointMismatch("encoder tensor shapes inconsistent with meta");
  p.check_finite();
  return p;
}

void EncoderParams::check_finite() const {
  auto ok = [](const Mat& m) { return m.allFinite(); };
  bool fine = ok(node_mlp_w) && ok(node_mlp_b) && ok(edge_mlp_w) && ok(edge_mlp_b) &&
              ok(p2sg_w) && ok(p2sg_attn) && ok(p2sg_value);
  for (const auto& l : layers)
    fine = fine && ok(l.w) && ok(l.attn) && ok(l.value) && ok(l.gate);
  if (!fine) throw DivergenceDetected("encoder parameters contain NaN/Inf");
}

EncoderTape encoder_on_tape(ad::Tape& tape, const EncoderParams& p) {
  EncoderTape tp;
  tp.node_w = tape.input(p.node_mlp_w);
  tp.node_b = tape.input(p.node_mlp_b);
  tp.edge_w = tape.input(p.edge_mlp_w);
  tp.edge_b = tape.input(p.edge_mlp_b);
  for (const auto& l : p.layers)
    tp.layers.push_back({tape.input(l.w), tape.input(l.attn), tape.input(l.value),
                         tape.input(l.gate)});
  tp.p2sg_w = tape.input(p.p2sg_w);
  tp.p2sg_attn = tape.input(p.p2sg_attn);
  tp.p2sg_value = tape.input(p.p2sg_value);
  return tp;
}

namespace {

/// One GATv2-style layer over an explicit edge list. Messages flow src -> dst
/// with softmax attention per destination; h_out = gate * h + messages.
int gat_layer_t(ad::Tape& tape, int h, const std::vector<int>& edge_src,
                const std::vector<int>& edge_dst, int edge_feat /* -1 if none */,
                int w, int attn, int value, int gate /* -1 = skip fixed at 1 */,
                int num_nodes, double slope) {
  int skip = gate >= 0 ? tape.mul_scalar_node(h, gate) : h;
  if (edge_src.empty()) return skip;
  int hs = tape.gather_rows(h, edge_src);
  int hd = tape.gather_rows(h, edge_dst);
  int cat = tape.concat_cols(hs, hd);
  if (edge_feat >= 0) cat = tape.concat_cols(cat, edge_feat);
  int z = tape.leaky_relu(tape.matmul(cat, w), slope);
  int scores = tape.matmul(z, attn);
  int alpha = tape.segment_softmax(scores, edge_dst, num_nodes);
  int v = tape.matmul(hs, value);
  int msg = tape.scatter_add_rows(tape.scale_rows(v, alpha), edge_dst, num_nodes);
  return tape.add(skip, msg);
}

}  // namespace

int encode_scene_graph_t(ad::Tape& tape, const SceneGraph& g,
                         const EncoderParams& cfg, const EncoderTape& tp) {
  if (g.size() == 0) throw DimensionMismatch("encode_scene_graph: empty graph");
  if (g.nodes[0].attributes.size() != cfg.x_dim())
    throw DimensionMismatch("encode_scene_graph: attribute width != vocabulary");

  int x = tape.input(g.attribute_matrix());
  int h = tape.leaky_relu(
      tape.add_rowvec(tape.matmul(x, tp.node_w), tp.node_b), cfg.leaky_slope);

  std::vector<int> edge_src, edge_dst;
  Mat e_onehot(g.edge_relations.size(), cfg.e_dim());
  e_onehot.setZero();
  int e = 0;
  for (const auto& [key, rel] : g.edge_relations) {
    edge_src.push_back(key.first);
    edge_dst.push_back(key.second);
    e_onehot(e++, rel) = 1.0;
  }
  int edge_feat = -1;
  if (!edge_src.empty()) {
    int raw = tape.input(std::move(e_onehot));
    edge_feat = tape.leaky_relu(
        tape.add_rowvec(tape.matmul(raw, tp.edge_w), tp.edge_b), cfg.leaky_slope);
  }

  // concatenate the lifted input and all layer outputs: d_s = d*(n+1)
  int out = h;
  for (std::size_t l = 0; l < tp.layers.size(); ++l) {
    h = gat_layer_t(tape, h, edge_src, edge_dst, edge_feat, tp.layers[l].w,
                    tp.layers[l].attn, tp.layers[l].value, tp.layers[l].gate,
                    g.size(), cfg.leaky_slope);
    out = tape.concat_cols(out, h);
  }
  return out;
}

int p2sg_pool_t(ad::Tape& tape, int f_p_node, const std::vector<int>& object_ids,
                const std::vector<std::pair<int, int>>& knn, int num_objects,
                const EncoderParams& cfg, const EncoderTape& tp) {
  std::vector<int> counts(num_objects, 0);
  for (int id : object_ids) counts[id]++;
  for (int m = 0; m < num_objects; ++m)
    if (counts[m] == 0)
      throw EmptyObject("p2sg: node " + std::to_string(m) + " owns zero points");

  std::vector<int> edge_src, edge_dst;
  edge_src.reserve(knn.size());
  edge_dst.reserve(knn.size());
  for (auto [i, j] : knn) {  // knn edge i -> neighbor j; message j -> i
    edge_src.push_back(j);
    edge_dst.push_back(i);
  }
  int refined = gat_layer_t(tape, f_p_node, edge_src, edge_dst, -1, tp.p2sg_w,
                            tp.p2sg_attn, tp.p2sg_value, -1,
                            static_cast<int>(object_ids.size()), cfg.leaky_slope);
  return tape.segment_max_rows(refined, object_ids, num_objects);
}

ad::Mat encode_scene_graph(const SceneGraph& g, const EncoderParams& params) {
  ad::Tape tape;
  EncoderTape tp = encoder_on_tape(tape, params);
  return tape.value(encode_scene_graph_t(tape, g, params, tp));
}

Mat point_descriptors(const PointCloud& p, double radius, bool rotation_invariant) {
  const int n = static_cast<int>(p.size());
  Mat out = Mat::Zero(n, kDescriptorWidth);
  if (n == 0) return out;

  auto neighborhoods = radius_indices(p.points, p.points, radius);

  // per-object centroids for the reference-frame features
  int num_objects = 0;
  for (int id : p.object_ids) num_objects = std::max(num_objects, id + 1);
  std::vector<Eigen::Vector3d> centroids(num_objects, Eigen::Vector3d::Zero());
  std::vector<int> counts(num_objects, 0);
  for (int i = 0; i < n; ++i) {
    centroids[p.object_ids[i]] += p.points[i];
    counts[p.object_ids[i]]++;
  }
  for (int m = 0; m < num_objects; ++m)
    if (counts[m] > 0) centroids[m] /= counts[m];

  #pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const auto& nb = neighborhoods[i];
    if (static_cast<int>(nb.size()) < 3) continue;  // isolated: zero descriptor

    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (int j : nb) mean += p.points[j];
    mean /= static_cast<double>(nb.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int j : nb) {
      Eigen::Vector3d d = p.points[j] - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(nb.size());

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    Eigen::Vector3d ev = eig.eigenvalues();  // ascending
    double l1 = std::max(ev[2], 1e-12), l2 = std::max(ev[1], 0.0),
           l3 = std::max(ev[0], 0.0);
    Eigen::Vector3d normal = eig.eigenvectors().col(0);

    double ang_sum = 0.0, ang_sq = 0.0, dist_sum = 0.0, dist_sq = 0.0;
    int valid = 0;
    for (int j : nb) {
      Eigen::Vector3d d = p.points[j] - p.points[i];
      double len = d.norm();
      if (len < 1e-12) continue;
      double c = std::abs(normal.dot(d) / len);
      ang_sum += c;
      ang_sq += c * c;
      dist_sum += len;
      dist_sq += len * len;
      ++valid;
    }
    double ang_mean = 0.0, ang_std = 0.0, dist_mean = 0.0, dist_std = 0.0;
    if (valid > 0) {
      ang_mean = ang_sum / valid;
      ang_std = std::sqrt(std::max(ang_sq / valid - ang_mean * ang_mean, 0.0));
      dist_mean = dist_sum / valid;
      dist_std = std::sqrt(std::max(dist_sq / valid - dist_mean * dist_mean, 0.0));
    }

    Eigen::Vector3d to_centroid = p.points[i] - centroids[p.object_ids[i]];
    int c = 0;
    out(i, c++) = (l1 - l2) / l1;        // linearity
    out(i, c++) = (l2 - l3) / l1;        // planarity
    out(i, c++) = l3 / l1;               // sphericity
    out(i, c++) = ang_mean;
    out(i, c++) = ang_std;
    out(i, c++) = std::log1p(static_cast<double>(nb.size())) * 0.25;  // density
    out(i, c++) = dist_mean / radius;
    out(i, c++) = dist_std / radius;
    out(i, c++) = to_centroid.norm();
    out(i, c++) = std::sqrt(l1);         // neighborhood scale
    if (!rotation_invariant) out(i, c++) = to_centroid.z();  // height above centroid
  }
  return out;
}

NodeEmbeddings p2sg_fuse(const Mat& f_p, const PointCloud& p, int knn_k,
                         const EncoderParams& params, const Mat& f_s) {
  if (f_p.rows() != static_cast<Eigen::Index>(p.size()))
    throw DimensionMismatch("p2sg_fuse: descriptor rows != point count");
  NodeEmbeddings emb;
  emb.semantic = f_s;
  const int m = static_cast<int>(f_s.rows());
  if (params.use_fusion) {
    ad::Tape tape;
    EncoderTape tp = encoder_on_tape(tape, params);
    auto knn = knn_edges(p, std::min<int>(knn_k, static_cast<int>(p.size()) - 1));
    int fp_node = tape.input(f_p);
    emb.geometric =
        tape.value(p2sg_pool_t(tape, fp_node, p.object_ids, knn, m, params, tp));
  } else {
    emb.geometric = Mat::Zero(m, params.d_p());
  }
  emb.fused.resize(m, emb.semantic.cols() + emb.geometric.cols());
  emb.fused << emb.semantic, emb.geometric;
  return emb;
}

}  // namespace sga
