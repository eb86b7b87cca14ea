#include "sgalign/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "sgalign/kdtree.hpp"

namespace sga {

double hits_at_k(const std::vector<int>& ranks, int k) {
  if (ranks.empty()) throw EmptyInput("hits_at_k: empty rank list");
  int hit = 0;
  for (int r : ranks) {
    if (r < 1) throw EmptyInput("hits_at_k: ranks are 1-based");
    if (r <= k) ++hit;
  }
  return static_cast<double>(hit) / ranks.size();
}

double mean_reciprocal_rank(const std::vector<int>& ranks) {
  if (ranks.empty()) throw EmptyInput("mean_reciprocal_rank: empty rank list");
  double sum = 0.0;
  for (int r : ranks) {
    if (r < 1) throw EmptyInput("mean_reciprocal_rank: ranks are 1-based");
    sum += 1.0 / r;
  }
  return sum / ranks.size();
}

double matching_f1(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeMismatch("matching_f1: shapes differ");
  double tp = pred.cwiseProduct(gt).sum();
  double fp = pred.cwiseProduct((1.0 - gt.array()).matrix()).sum();
  double fn = (1.0 - pred.array()).matrix().cwiseProduct(gt).sum();
  double denom = 2.0 * tp + fp + fn;
  return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

RegistrationMetrics registration_metrics(
    const RigidTransform& est, const RigidTransform& gt,
    const std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>>& gt_corr,
    const CorrespondenceSet& pred_corr, const PointCloud& src,
    const PointCloud& ref, const MetricThresholds& th) {
  RegistrationMetrics m;
  double arg = ((gt.rotation.transpose() * est.rotation).trace() - 1.0) / 2.0;
  m.rre_deg = std::acos(std::clamp(arg, -1.0, 1.0)) * 180.0 / M_PI;
  m.rte = (gt.translation - est.translation).norm();

  if (gt_corr.empty())
    throw EmptyCorrespondences("registration_metrics: no gt correspondences");
  double sq = 0.0;
  for (const auto& [p, q] : gt_corr) sq += (est.apply(p) - q).squaredNorm();
  m.rmse = std::sqrt(sq / gt_corr.size());
  m.registered = m.rmse < th.tau1;

  if (pred_corr.pairs.empty())
    throw EmptyCorrespondences("registration_metrics: no predicted correspondences");
  int inliers = 0;
  for (const auto& c : pred_corr.pairs) {
    Eigen::Vector3d moved = gt.apply(src.points[c.src_index]);
    if ((moved - ref.points[c.ref_index]).norm() < th.tau2) ++inliers;
  }
  m.inlier_ratio = static_cast<double>(inliers) / pred_corr.pairs.size();
  m.fmr_flag = m.inlier_ratio > th.tau3;
  return m;
}

double chamfer(const PointCloud& p, const PointCloud& q, const RigidTransform& est) {
  if (p.size() == 0 || q.size() == 0) throw EmptyCloud("chamfer: empty cloud");
  std::vector<Eigen::Vector3d> moved(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) moved[i] = est.apply(p.points[i]);

  KdTree tree_q(q.points), tree_p(moved);
  double a = 0.0, b = 0.0;
  #pragma omp parallel for reduction(+ : a) schedule(static)
  for (int i = 0; i < static_cast<int>(moved.size()); ++i)
    a += (moved[i] - q.points[tree_q.knn(moved[i], 1)[0]]).squaredNorm();
  #pragma omp parallel for reduction(+ : b) schedule(static)
  for (int j = 0; j < static_cast<int>(q.size()); ++j)
    b += (q.points[j] - moved[tree_p.knn(q.points[j], 1)[0]]).squaredNorm();
  return a / p.size() + b / q.size();
}

double scc(const CorrespondenceSet& pred_corr, const std::vector<int>& o_src,
           const std::vector<int>& o_ref,
           const std::vector<std::pair<int, int>>& gt_alignment) {
  if (pred_corr.pairs.empty()) throw EmptyCorrespondences("scc: no correspondences");
  // ref object -> aligned src object
  std::vector<int> ref_to_src;
  for (auto [i, j] : gt_alignment) {
    if (j >= static_cast<int>(ref_to_src.size())) ref_to_src.resize(j + 1, -1);
    ref_to_src[j] = i;
  }
  int consistent = 0;
  for (const auto& c : pred_corr.pairs) {
    if (c.ref_index < 0 || c.ref_index >= static_cast<int>(o_ref.size()) ||
        c.src_index < 0 || c.src_index >= static_cast<int>(o_src.size()))
      throw ObjectOutOfRange("scc: correspondence references invalid point");
    int obj_ref = o_ref[c.ref_index];
    int partner = obj_ref < static_cast<int>(ref_to_src.size()) ? ref_to_src[obj_ref]
                                                                : -1;
    if (partner >= 0 && o_src[c.src_index] == partner) ++consistent;
  }
  return static_cast<double>(consistent) / pred_corr.pairs.size();
}

double overlap_score(const SoftAlignment& alignment, OverlapVariant variant) {
  if (alignment.selected_pairs.empty()) return 0.0;
  std::vector<double> scores;
  scores.reserve(alignment.selected_pairs.size());
  for (const auto& s : alignment.selected_pairs) scores.push_back(s.score);
  if (variant == OverlapVariant::Top3) {
    std::sort(scores.begin(), scores.end(), std::greater<>());
    if (scores.size() > 3) scores.resize(3);
  }
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= scores.size();
  return alignment.similarity * mean;
}

OverlapDecision overlap_decision(double mu, OverlapVariant variant,
                                 const MetricThresholds& th) {
  double threshold = variant == OverlapVariant::All ? th.overlap_mu : th.overlap_mu3;
  return mu < threshold ? OverlapDecision::NonOverlap : OverlapDecision::Overlap;
}

MosaicMetrics mosaic_metrics(const PointCloud& recon, const PointCloud& gt,
                             const MetricThresholds& th) {
  if (recon.size() == 0 || gt.size() == 0)
    throw EmptyCloud("mosaic_metrics: empty cloud");
  KdTree tree_recon(recon.points), tree_gt(gt.points);

  MosaicMetrics m;
  double acc = 0.0, prec = 0.0;
  #pragma omp parallel for reduction(+ : acc, prec) schedule(static)
  for (int i = 0; i < static_cast<int>(gt.size()); ++i) {
    double d = (gt.points[i] -
                recon.points[tree_recon.knn(gt.points[i], 1)[0]]).norm();
    acc += d;
    prec += d < th.mosaic_dist ? 1.0 : 0.0;
  }
  double comp = 0.0, rec = 0.0;
  #pragma omp parallel for reduction(+ : comp, rec) schedule(static)
  for (int i = 0; i < static_cast<int>(recon.size()); ++i) {
    double d = (recon.points[i] -
                gt.points[tree_gt.knn(recon.points[i], 1)[0]]).norm();
    comp += d;
    rec += d < th.mosaic_dist ? 1.0 : 0.0;
  }
  m.acc = acc / gt.size();
  m.comp = comp / recon.size();
  m.precision = prec / gt.size();
  m.recall = rec / recon.size();
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

}  // namespace sga
