#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sgalign/encoder.hpp"
#include "sgalign/scenegraph.hpp"
#include "sgalign/tape.hpp"

namespace sga {

inline constexpr int kAfaMaxNodes = 64;  // one-hot width of the AFA head
inline constexpr int kAfaHidden = 16;

struct MatcherParams {
  ad::Mat w_s;       // d_s x d_s
  ad::Mat w_p;       // d_p x d_p
  ad::Mat afa_c;     // 1 x 1, edge-weight gain of the attention head
  ad::Mat afa_u;     // kAfaMaxNodes x kAfaHidden, one-hot lift
  ad::Mat afa_w;     // kAfaHidden x 1, readout
  ad::Mat afa_b;     // 1 x 1, readout bias (0 => k = 0.5 on zero input)
  int sinkhorn_iters = 100;
  double temperature = 0.1;

  static MatcherParams init(int d_s, int d_p, std::uint64_t seed);
  std::map<std::string, ad::Mat> to_tensors() const;
  static MatcherParams from_tensors(const std::map<std::string, ad::Mat>& t);
  void check_finite() const;
};

struct SelectedPair {
  int src = 0;
  int ref = 0;
  double score = 0.0;
};

struct SoftAlignment {
  ad::Mat soft_matrix;  // (M_src + 1) x (M_ref + 1), dummy row/column last
  double similarity = 0.0;  // k-tilde in [0, 1]
  std::vector<SelectedPair> selected_pairs;

  Eigen::Index m_src() const { return soft_matrix.rows() - 1; }
  Eigen::Index m_ref() const { return soft_matrix.cols() - 1; }
  ad::Mat interior() const { return soft_matrix.topLeftCorner(m_src(), m_ref()); }
};

struct MatcherTape {
  int w_s = -1, w_p = -1, afa_c = -1, afa_u = -1, afa_w = -1, afa_b = -1;
};

MatcherTape matcher_on_tape(ad::Tape& tape, const MatcherParams& p);

/// Eq-2 style block affinity, instance-normalized (zero mean, unit variance,
/// eps 1e-5). Output is M_ref x M_src: reference nodes index rows.
int affinity_t(ad::Tape& tape, int f_s_ref, int f_p_ref, int f_s_src, int f_p_src,
               const MatcherTape& tp);

/// Log-domain Sinkhorn on a / temperature padded with a zero dummy row and
/// column. Interior rows and columns are normalized jointly with the dummy
/// cells; the dummy-dummy corner is left unconstrained. Ends on a row pass, so
/// interior row sums are exact and column sums converge with the iterations.
/// This fixed-count tape variant is the training path. The standalone
/// inference op (sinkhorn_with_dummy) runs a tape-free multiplicative loop
/// that continues past `iters` until interior column sums settle below 1e-6;
/// align() keeps the configured fixed count.
int sinkhorn_with_dummy_t(ad::Tape& tape, int a, int iters, double temperature);

/// AFA-style similarity head: zero features on one side, one-hot on the other,
/// one attention layer with the soft matrix interior as edge weights, sigmoid
/// readout. Returns a 1x1 node.
int afa_similarity_t(ad::Tape& tape, int soft_interior, const MatcherTape& tp);

// Inference wrappers.
ad::Mat affinity(const NodeEmbeddings& f_ref, const NodeEmbeddings& f_src,
                 const MatcherParams& params);
ad::Mat sinkhorn_with_dummy(const ad::Mat& a, const MatcherParams& params);
double afa_similarity(const ad::Mat& soft_matrix, int m_src, int m_ref,
                      const MatcherParams& params);

/// Greedy one-to-one selection of the K = round(k * M_ref) highest interior
/// entries, K clamped to [0, min(M_src, M_ref)]; ties by (row, col).
std::vector<SelectedPair> topk_select(const ad::Mat& soft_matrix, double k_tilde,
                                      int m_ref);

/// Full inference pass: encode both sides, fuse, affinity, Sinkhorn, AFA
/// similarity, top-K selection.
SoftAlignment align(const ScenePair& pair, const EncoderParams& enc,
                    const MatcherParams& match);

/// Turns a ground-truth alignment into a hard SoftAlignment (for diagnostics
/// and rescoring with oracle input).
SoftAlignment alignment_from_ground_truth(const ScenePair& pair);

}  // namespace sga
