#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sgalign/geometry.hpp"
#include "sgalign/matcher.hpp"

namespace sga {

struct MetricThresholds {
  double tau1 = 0.2;         // RMSE threshold, meters (registration recall)
  double tau2 = 0.1;         // inlier distance, meters
  double tau3 = 0.05;        // FMR inlier-ratio threshold
  double mosaic_dist = 0.05; // meters
  double overlap_mu = 0.375;
  double overlap_mu3 = 0.45;
};

/// Fraction of 1-based ranks <= k.
double hits_at_k(const std::vector<int>& ranks, int k);

double mean_reciprocal_rank(const std::vector<int>& ranks);

/// F1 over binary matrices: tp = sum(S~ . S), fp = sum(S~ . (1-S)),
/// fn = sum((1-S~) . S); returns 0 when the denominator is 0.
double matching_f1(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt);

struct RegistrationMetrics {
  double rre_deg = 0.0;
  double rte = 0.0;
  double rmse = 0.0;
  bool registered = false;
  double inlier_ratio = 0.0;
  bool fmr_flag = false;
};

/// RRE (geodesic degrees, clamped arccos), RTE, RMSE over gt correspondences,
/// registered iff RMSE < tau1, IR over predicted correspondences under the
/// ground-truth transform, FMR flag iff IR > tau3.
RegistrationMetrics registration_metrics(
    const RigidTransform& est, const RigidTransform& gt,
    const std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>>& gt_corr,
    const CorrespondenceSet& pred_corr, const PointCloud& src,
    const PointCloud& ref, const MetricThresholds& th);

/// Symmetric modified Chamfer distance (squared nearest distances, both
/// directions, est applied to p).
double chamfer(const PointCloud& p, const PointCloud& q, const RigidTransform& est);

/// Semantic consistency of point correspondences against the ground-truth
/// node alignment. Pairs whose reference object has no gt partner count 0.
double scc(const CorrespondenceSet& pred_corr, const std::vector<int>& o_src,
           const std::vector<int>& o_ref,
           const std::vector<std::pair<int, int>>& gt_alignment);

enum class OverlapVariant { All, Top3 };

/// mu = k * mean selected score (All) or k * mean of the top-3 selected
/// scores (Top3); 0 when nothing is selected.
double overlap_score(const SoftAlignment& alignment, OverlapVariant variant);

enum class OverlapDecision { Overlap, NonOverlap };

/// Non-overlap iff mu is strictly below the variant's threshold.
OverlapDecision overlap_decision(double mu, OverlapVariant variant,
                                 const MetricThresholds& th);

struct MosaicMetrics {
  double acc = 0.0;
  double comp = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

MosaicMetrics mosaic_metrics(const PointCloud& recon, const PointCloud& gt,
                             const MetricThresholds& th);

}  // namespace sga
