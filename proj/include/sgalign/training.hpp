#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "sgalign/encoder.hpp"
#include "sgalign/matcher.hpp"
#include "sgalign/scenegraph.hpp"
#include "sgalign/tape.hpp"

namespace sga {

struct LossReport {
  double l_s = 0.0;
  double l_k = 0.0;
  double total = 0.0;
  double alpha = 10.0;
};

/// Sparse NCE over the nonzero ground-truth cells:
/// L_s = -(1/|S|) sum_{S_ij != 0} log(soft_ij + 1e-12).
double matching_loss(const ad::Mat& soft_interior, const ad::Mat& gt);
int matching_loss_t(ad::Tape& tape, int soft_interior, const ad::Mat& gt);

/// L_k = (k - k_tilde)^2 with k = |S| / min(M_src, M_ref).
double similarity_loss(double k_tilde, const ad::Mat& gt, int m_src, int m_ref);

/// Mean over the batch of L_s + alpha * L_k.
double total_loss(const std::vector<std::pair<double, double>>& batch, double alpha);

struct TrainResult;

struct TrainConfig {
  double lr = 1e-4;
  int epochs = 10;
  int batch_size = 4;
  double alpha = 10.0;
  int lr_decay_every = 4;   // epochs
  double lr_decay = 0.1;
  int sinkhorn_iters = 20;  // unrolled during training
  double sinkhorn_temperature = 0.1;
  std::uint64_t seed = 0;
  // called after each completed epoch (1-based) with the partial result;
  // lets callers checkpoint so an interrupted run can resume
  std::function<void(int, const TrainResult&)> on_epoch;
};

struct TrainResult {
  EncoderParams enc;
  MatcherParams mat;
  std::vector<std::array<double, 3>> curve;  // epoch-0 row, then one per epoch
};

/// Adam training of encoder + matcher on synthetic pairs. Deterministic per
/// seed; the Sinkhorn output feeds the losses directly (differentiable path).
/// Throws DivergenceDetected when the loss becomes non-finite.
TrainResult train(const std::vector<ScenePair>& dataset, const EncoderParams& enc0,
                  const MatcherParams& mat0, const TrainConfig& config);

/// Full pipeline loss (encode -> fuse -> affinity -> sinkhorn -> losses) on a
/// fresh tape; returns the 1x1 loss node. Param tape handles must already be
/// on the tape.
int pipeline_loss_t(ad::Tape& tape, const ScenePair& pair, const EncoderParams& cfg,
                    const EncoderTape& etp, const MatcherTape& mtp,
                    int sinkhorn_iters, double alpha, double temperature = 0.1);

/// Central finite differences vs tape gradients over a sampled coordinate
/// subset; returns the worst error, |a - fd| / max(1, |a|, |fd|).
double grad_check_pipeline(const ScenePair& pair, const EncoderParams& enc,
                           const MatcherParams& mat, double step,
                           int coords_per_tensor, std::uint64_t seed);

}  // namespace sga
