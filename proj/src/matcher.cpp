#include "sgalign/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sgalign/geometry.hpp"

namespace sga {

using ad::Mat;
using ad::Tape;

MatcherParams MatcherParams::init(int d_s, int d_p, std::uint64_t seed) {
  MatcherParams p;
  std::mt19937_64 rng(seed);
  // identity-scaled affinity weights: the untrained matcher is already
  // weakly diagonal-seeking
  p.w_s = 0.1 * Mat::Identity(d_s, d_s);
  p.w_p = 0.1 * Mat::Identity(d_p, d_p);
  p.afa_c = Mat::Constant(1, 1, 1.0);
  double bound = 1.0 / std::sqrt(static_cast<double>(kAfaMaxNodes));
  std::uniform_real_distribution<double> u(-bound, bound);
  p.afa_u = Mat::NullaryExpr(kAfaMaxNodes, kAfaHidden, [&] { return u(rng); });
  p.afa_w = Mat::NullaryExpr(kAfaHidden, 1, [&] { return u(rng); });
  p.afa_b = Mat::Zero(1, 1);
  return p;
}

std::map<std::string, Mat> MatcherParams::to_tensors() const {
  return {{"match.w_s", w_s},   {"match.w_p", w_p},   {"match.afa_c", afa_c},
          {"match.afa_u", afa_u}, {"match.afa_w", afa_w}, {"match.afa_b", afa_b}};
}

MatcherParams MatcherParams::from_tensors(const std::map<std::string, Mat>& t) {
  MatcherParams p;
  auto get = [&](const std::string& name) -> const Mat& {
    auto it = t.find(name);
    if (it == t.end()) throw CheckpointMismatch("missing tensor " + name);
    return it->second;
  };
  p.w_s = get("match.w_s");
  p.w_p = get("match.w_p");
  p.afa_c = get("match.afa_c");
  p.afa_u = get("match.afa_u");
  p.afa_w = get("match.afa_w");
  p.afa_b = get("match.afa_b");
  p.check_finite();
  return p;
}

void MatcherParams::check_finite() const {
  if (!(w_s.allFinite() && w_p.allFinite() && afa_c.allFinite() &&
        afa_u.allFinite() && afa_w.allFinite() && afa_b.allFinite()))
    throw DivergenceDetected("matcher parameters contain NaN/Inf");
}

MatcherTape matcher_on_tape(Tape& tape, const MatcherParams& p) {
  MatcherTape tp;
  tp.w_s = tape.input(p.w_s);
  tp.w_p = tape.input(p.w_p);
  tp.afa_c = tape.input(p.afa_c);
  tp.afa_u = tape.input(p.afa_u);
  tp.afa_w = tape.input(p.afa_w);
  tp.afa_b = tape.input(p.afa_b);
  return tp;
}

namespace {

int instance_normalize_t(Tape& tape, int a, double eps = 1e-5) {
  int mu = tape.mean(a);
  int centered = tape.sub_scalar_node(a, mu);
  int var = tape.mean(tape.hadamard(centered, centered));
  int inv = tape.powr(tape.add_const(var, eps), -0.5);
  return tape.mul_scalar_node(centered, inv);
}

}  // namespace

int affinity_t(Tape& tape, int f_s_ref, int f_p_ref, int f_s_src, int f_p_src,
               const MatcherTape& tp) {
  if (tape.value(f_s_ref).cols() != tape.value(tp.w_s).rows() ||
      tape.value(f_p_ref).cols() != tape.value(tp.w_p).rows())
    throw DimensionMismatch("affinity: embedding widths do not match W_s/W_p");
  int sem = tape.matmul(tape.matmul(f_s_ref, tp.w_s), tape.transpose(f_s_src));
  int geo = tape.matmul(tape.matmul(f_p_ref, tp.w_p), tape.transpose(f_p_src));
  return instance_normalize_t(tape, tape.add(sem, geo));
}

namespace {

int sinkhorn_core_t(Tape& tape, int a, int iters, double temperature) {
  if (iters < 1) throw DimensionMismatch("sinkhorn: iters must be >= 1");
  const Eigen::Index m = tape.value(a).rows();
  const Eigen::Index n = tape.value(a).cols();
  int z = tape.pad_zero(tape.scale(a, 1.0 / temperature));
  // masks keep the dummy row/column themselves unnormalized
  Mat row_mask = Mat::Ones(m + 1, 1);
  row_mask(m, 0) = 0.0;
  Mat col_mask = Mat::Ones(1, n + 1);
  col_mask(0, n) = 0.0;
  for (int it = 0; it < iters; ++it) {
    z = tape.sub_rowvec(z, tape.cmul(tape.col_logsumexp(z), col_mask));
    z = tape.sub_colvec(z, tape.cmul(tape.row_logsumexp(z), row_mask));
  }
  return tape.expn(z);
}

// Tape-free variant for inference. With converge_cols the iteration continues
// in batches until the interior column sums settle well under the 1e-6
// contract (slowly mixing matrices can need tens of thousands of passes, which
// a tape cannot afford to record); without it the count is exact, preserving
// the partial convergence that keeps conflicted assignments at mid-range
// scores.
Mat sinkhorn_plain(const Mat& a, int iters, double temperature,
                   bool converge_cols) {
  if (iters < 1) throw DimensionMismatch("sinkhorn: iters must be >= 1");
  const Eigen::Index m = a.rows(), n = a.cols();
  Mat z = Mat::Zero(m + 1, n + 1);
  z.topLeftCorner(m, n) = a / temperature;
  if (z.cwiseAbs().maxCoeff() < 300.0) {
    // scaled inputs fit in doubles, so run the same iteration multiplicatively:
    // s = diag(u) exp(z) diag(v) with the dummy scales pinned to 1
    Mat k = z.array().exp().matrix();
    Eigen::VectorXd u = Eigen::VectorXd::Ones(m + 1);
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n + 1);
    auto pass = [&] {
      for (Eigen::Index j = 0; j < n; ++j)
        v(j) = 1.0 / k.col(j).dot(u);
      for (Eigen::Index i = 0; i < m; ++i)
        u(i) = 1.0 / k.row(i).dot(v);
    };
    for (int it = 0; it < iters; ++it) pass();
    // the iteration ends on a row pass, so only column sums still drift
    for (int total = iters; converge_cols && total < 200000; total += 25) {
      double worst = 0.0;
      for (Eigen::Index j = 0; j < n; ++j)
        worst = std::max(worst, std::abs(v(j) * k.col(j).dot(u) - 1.0));
      if (worst < 5e-8) break;
      for (int it = 0; it < 25; ++it) pass();
    }
    return u.asDiagonal() * k * v.asDiagonal();
  }
  // log-domain fallback for inputs that would overflow exp
  auto pass = [&] {
    for (Eigen::Index j = 0; j < n; ++j) {  // dummy column stays unnormalized
      double mx = z.col(j).maxCoeff();
      double lse = mx + std::log((z.col(j).array() - mx).exp().sum());
      z.col(j).array() -= lse;
    }
    for (Eigen::Index i = 0; i < m; ++i) {  // dummy row stays unnormalized
      double mx = z.row(i).maxCoeff();
      double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
      z.row(i).array() -= lse;
    }
  };
  for (int it = 0; it < iters; ++it) pass();
  for (int total = iters; converge_cols && total < 200000; total += 25) {
    Mat s = z.array().exp().matrix();
    double worst = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      worst = std::max(worst, std::abs(s.col(j).sum() - 1.0));
    if (worst < 5e-8) break;
    for (int it = 0; it < 25; ++it) pass();
  }
  return z.array().exp().matrix();
}

}  // namespace

int sinkhorn_with_dummy_t(Tape& tape, int a, int iters, double temperature) {
  return sinkhorn_core_t(tape, a, iters, temperature);
}

int afa_similarity_t(Tape& tape, int soft_interior, const MatcherTape& tp) {
  const Eigen::Index m_ref = tape.value(soft_interior).cols();
  // attention over source nodes per reference node, soft scores as both the
  // edge logits and the message content; one-hot reference features feed the
  // readout through the learned lift
  int logits = tape.mul_scalar_node(soft_interior, tp.afa_c);
  int alpha = tape.expn(tape.sub_rowvec(logits, tape.col_logsumexp(logits)));
  int msg = tape.col_sum(tape.hadamard(alpha, soft_interior));  // 1 x m_ref
  std::vector<int> idx(m_ref);
  for (Eigen::Index j = 0; j < m_ref; ++j)
    idx[j] = static_cast<int>(j % kAfaMaxNodes);
  int u_sub = tape.gather_rows(tp.afa_u, idx);
  int pooled = tape.matmul(tape.scale(msg, 1.0 / static_cast<double>(m_ref)), u_sub);
  return tape.sigmoid(tape.add(tape.matmul(pooled, tp.afa_w), tp.afa_b));
}

Mat affinity(const NodeEmbeddings& f_ref, const NodeEmbeddings& f_src,
             const MatcherParams& params) {
  Tape tape;
  MatcherTape tp = matcher_on_tape(tape, params);
  int id = affinity_t(tape, tape.input(f_ref.semantic), tape.input(f_ref.geometric),
                      tape.input(f_src.semantic), tape.input(f_src.geometric), tp);
  return tape.value(id);
}

Mat sinkhorn_with_dummy(const Mat& a, const MatcherParams& params) {
  if (!a.allFinite()) throw DimensionMismatch("sinkhorn: non-finite affinity");
  return sinkhorn_plain(a, params.sinkhorn_iters, params.temperature, true);
}

double afa_similarity(const Mat& soft_matrix, int m_src, int m_ref,
                      const MatcherParams& params) {
  if (soft_matrix.rows() != m_src + 1 || soft_matrix.cols() != m_ref + 1)
    throw DimensionMismatch("afa_similarity: soft matrix shape mismatch");
  Tape tape;
  MatcherTape tp = matcher_on_tape(tape, params);
  int interior = tape.input(soft_matrix.topLeftCorner(m_src, m_ref));
  return tape.value(afa_similarity_t(tape, interior, tp))(0, 0);
}

std::vector<SelectedPair> topk_select(const Mat& soft_matrix, double k_tilde,
                                      int m_ref) {
  const int m_src = static_cast<int>(soft_matrix.rows()) - 1;
  const int n_ref = static_cast<int>(soft_matrix.cols()) - 1;
  int k = static_cast<int>(std::floor(k_tilde * m_ref + 0.5));  // round half up
  k = std::clamp(k, 0, std::min(m_src, n_ref));

  struct Entry {
    double score;
    int row, col;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(m_src) * n_ref);
  for (int i = 0; i < m_src; ++i)
    for (int j = 0; j < n_ref; ++j) entries.push_back({soft_matrix(i, j), i, j});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });

  std::vector<char> row_used(m_src, 0), col_used(n_ref, 0);
  std::vector<SelectedPair> out;
  for (const Entry& e : entries) {
    if (static_cast<int>(out.size()) >= k) break;
    if (row_used[e.row] || col_used[e.col]) continue;
    row_used[e.row] = 1;
    col_used[e.col] = 1;
    out.push_back({e.row, e.col, e.score});
  }
  return out;
}

SoftAlignment align(const ScenePair& pair, const EncoderParams& enc,
                    const MatcherParams& match) {
  Tape tape;
  EncoderTape etp = encoder_on_tape(tape, enc);
  MatcherTape mtp = matcher_on_tape(tape, match);

  auto embed = [&](const SceneGraph& g, const PointCloud& cloud) {
    int f_s = encode_scene_graph_t(tape, g, enc, etp);
    int f_p;
    if (enc.use_fusion) {
      Mat desc = point_descriptors(cloud, enc.descriptor_radius, enc.rotation_invariant);
      auto knn = knn_edges(cloud, std::min<int>(enc.knn_k,
                                                static_cast<int>(cloud.size()) - 1));
      f_p = p2sg_pool_t(tape, tape.input(desc), cloud.object_ids, knn, g.size(),
                        enc, etp);
    } else {
      f_p = tape.input(Mat::Zero(g.size(), enc.d_p()));
    }
    return std::pair<int, int>(f_s, f_p);
  };

  auto [src_s, src_p] = embed(pair.src_graph, pair.src_cloud);
  auto [ref_s, ref_p] = embed(pair.ref_graph, pair.ref_cloud);

  int a = affinity_t(tape, ref_s, ref_p, src_s, src_p, mtp);  // M_ref x M_src

  SoftAlignment result;
  result.soft_matrix = sinkhorn_plain(tape.value(a).transpose(),
                                      match.sinkhorn_iters, match.temperature,
                                      false);
  int interior = tape.input(
      result.soft_matrix.topLeftCorner(pair.src_graph.size(), pair.ref_graph.size()));
  result.similarity = tape.value(afa_similarity_t(tape, interior, mtp))(0, 0);
  result.selected_pairs =
      topk_select(result.soft_matrix, result.similarity, pair.ref_graph.size());
  return result;
}

SoftAlignment alignment_from_ground_truth(const ScenePair& pair) {
  SoftAlignment a;
  const int m_src = pair.src_graph.size();
  const int m_ref = pair.ref_graph.size();
  a.soft_matrix = Mat::Zero(m_src + 1, m_ref + 1);
  for (auto [i, j] : pair.gt_alignment) {
    a.soft_matrix(i, j) = 1.0;
    a.selected_pairs.push_back({i, j, 1.0});
  }
  for (int i = 0; i < m_src; ++i)
    if (a.soft_matrix.row(i).head(m_ref).sum() == 0.0) a.soft_matrix(i, m_ref) = 1.0;
  for (int j = 0; j < m_ref; ++j)
    if (a.soft_matrix.col(j).head(m_src).sum() == 0.0) a.soft_matrix(m_src, j) = 1.0;
  a.similarity = std::min(m_src, m_ref) > 0
                     ? static_cast<double>(pair.gt_alignment.size()) /
                           std::min(m_src, m_ref)
                     : 0.0;
  return a;
}

}  // namespace sga
