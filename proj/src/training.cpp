#include "sgalign/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sgalign/geometry.hpp"

namespace sga {

using ad::Mat;
using ad::Tape;

double matching_loss(const Mat& soft_interior, const Mat& gt) {
  if (soft_interior.rows() != gt.rows() || soft_interior.cols() != gt.cols())
    throw ShapeMismatch("matching_loss: shapes differ");
  double nnz = gt.cwiseAbs().sum();
  if (nnz == 0.0) throw EmptyGroundTruth("matching_loss: ground truth has no matches");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < gt.rows(); ++i)
    for (Eigen::Index j = 0; j < gt.cols(); ++j)
      if (gt(i, j) != 0.0) acc += std::log(soft_interior(i, j) + 1e-12);
  return -acc / nnz;
}

int matching_loss_t(Tape& tape, int soft_interior, const Mat& gt) {
  if (tape.value(soft_interior).rows() != gt.rows() ||
      tape.value(soft_interior).cols() != gt.cols())
    throw ShapeMismatch("matching_loss: shapes differ");
  double nnz = gt.cwiseAbs().sum();
  if (nnz == 0.0) throw EmptyGroundTruth("matching_loss: ground truth has no matches");
  Mat mask = (gt.array() != 0.0).cast<double>().matrix();
  int masked = tape.cmul(tape.logn(soft_interior, 1e-12), mask);
  return tape.scale(tape.sum(masked), -1.0 / nnz);
}

double similarity_loss(double k_tilde, const Mat& gt, int m_src, int m_ref) {
  int denom = std::min(m_src, m_ref);
  if (denom <= 0) throw EmptyGroundTruth("similarity_loss: empty graphs");
  double k = gt.cwiseAbs().sum() / denom;
  return (k - k_tilde) * (k - k_tilde);
}

double total_loss(const std::vector<std::pair<double, double>>& batch, double alpha) {
  if (batch.empty()) throw EmptyBatch("total_loss: empty batch");
  double acc = 0.0;
  for (const auto& [l_s, l_k] : batch) acc += l_s + alpha * l_k;
  return acc / batch.size();
}

namespace {

// Parameter matrices and their tape handles in one fixed shared order.
std::vector<Mat*> param_ptrs(EncoderParams& e, MatcherParams& m) {
  std::vector<Mat*> p = {&e.node_mlp_w, &e.node_mlp_b, &e.edge_mlp_w, &e.edge_mlp_b};
  for (auto& l : e.layers) {
    p.push_back(&l.w);
    p.push_back(&l.attn);
    p.push_back(&l.value);
    p.push_back(&l.gate);
  }
  p.insert(p.end(), {&e.p2sg_w, &e.p2sg_attn, &e.p2sg_value, &m.w_s, &m.w_p,
                     &m.afa_c, &m.afa_u, &m.afa_w, &m.afa_b});
  return p;
}

std::vector<int> tape_ids(const EncoderTape& etp, const MatcherTape& mtp) {
  std::vector<int> id = {etp.node_w, etp.node_b, etp.edge_w, etp.edge_b};
  for (const auto& l : etp.layers) {
    id.push_back(l.w);
    id.push_back(l.attn);
    id.push_back(l.value);
    id.push_back(l.gate);
  }
  id.insert(id.end(), {etp.p2sg_w, etp.p2sg_attn, etp.p2sg_value, mtp.w_s, mtp.w_p,
                       mtp.afa_c, mtp.afa_u, mtp.afa_w, mtp.afa_b});
  return id;
}

}  // namespace

int pipeline_loss_t(Tape& tape, const ScenePair& pair, const EncoderParams& cfg,
                    const EncoderTape& etp, const MatcherTape& mtp,
                    int sinkhorn_iters, double alpha, double temperature) {
  auto embed = [&](const SceneGraph& g, const PointCloud& cloud) {
    int f_s = encode_scene_graph_t(tape, g, cfg, etp);
    int f_p;
    if (cfg.use_fusion) {
      Mat desc = point_descriptors(cloud, cfg.descriptor_radius, cfg.rotation_invariant);
      auto knn = knn_edges(cloud, std::min<int>(cfg.knn_k,
                                                static_cast<int>(cloud.size()) - 1));
      f_p = p2sg_pool_t(tape, tape.input(desc), cloud.object_ids, knn, g.size(),
                        cfg, etp);
    } else {
      f_p = tape.input(Mat::Zero(g.size(), cfg.d_p()));
    }
    return std::pair<int, int>(f_s, f_p);
  };

  auto [src_s, src_p] = embed(pair.src_graph, pair.src_cloud);
  auto [ref_s, ref_p] = embed(pair.ref_graph, pair.ref_cloud);

  int a = affinity_t(tape, ref_s, ref_p, src_s, src_p, mtp);
  int soft = sinkhorn_with_dummy_t(tape, tape.transpose(a), sinkhorn_iters,
                                   temperature);
  int interior =
      tape.block(soft, 0, 0, pair.src_graph.size(), pair.ref_graph.size());

  Mat gt = pair.gt_matrix();
  int l_s = matching_loss_t(tape, interior, gt);

  int denom = std::min(pair.src_graph.size(), pair.ref_graph.size());
  if (denom <= 0) throw EmptyGroundTruth("pipeline loss: empty graphs");
  double k_gt = gt.cwiseAbs().sum() / denom;
  int k_tilde = afa_similarity_t(tape, interior, mtp);
  int diff = tape.add_const(tape.scale(k_tilde, -1.0), k_gt);
  int l_k = tape.hadamard(diff, diff);

  return tape.add(l_s, tape.scale(l_k, alpha));
}

TrainResult train(const std::vector<ScenePair>& dataset, const EncoderParams& enc0,
                  const MatcherParams& mat0, const TrainConfig& config) {
  if (dataset.empty()) throw EmptyBatch("train: empty dataset");
  if (config.epochs < 0 || config.batch_size < 1)
    throw ConfigError("train: invalid epoch/batch configuration");

  TrainResult out;
  out.enc = enc0;
  out.mat = mat0;
  std::vector<Mat*> params = param_ptrs(out.enc, out.mat);

  std::vector<Mat> adam_m, adam_v;
  adam_m.reserve(params.size());
  adam_v.reserve(params.size());
  for (Mat* p : params) {
    adam_m.push_back(Mat::Zero(p->rows(), p->cols()));
    adam_v.push_back(Mat::Zero(p->rows(), p->cols()));
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  std::mt19937_64 rng(config.seed);
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  auto evaluate = [&] {
    double sum_ls = 0.0, sum_lk = 0.0;
    #pragma omp parallel for reduction(+ : sum_ls, sum_lk) schedule(dynamic)
    for (int i = 0; i < static_cast<int>(dataset.size()); ++i) {
      const ScenePair& pair = dataset[i];
      SoftAlignment a = align(pair, out.enc, out.mat);
      Mat gt = pair.gt_matrix();
      sum_ls += matching_loss(a.interior(), gt);
      sum_lk += similarity_loss(a.similarity, gt, pair.src_graph.size(),
                                pair.ref_graph.size());
    }
    double ep_ls = sum_ls / dataset.size();
    double ep_lk = sum_lk / dataset.size();
    double ep_total = ep_ls + config.alpha * ep_lk;
    if (!std::isfinite(ep_total)) throw DivergenceDetected("train: loss diverged");
    out.curve.push_back({ep_ls, ep_lk, ep_total});
  };
  evaluate();  // epoch-0 row: the untrained model

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.lr *
                std::pow(config.lr_decay, epoch / std::max(1, config.lr_decay_every));
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      int bsz = static_cast<int>(stop - start);

      std::vector<std::vector<Mat>> grads(bsz);
      std::vector<double> sample_loss(bsz);
      #pragma omp parallel for schedule(dynamic)
      for (int b = 0; b < bsz; ++b) {
        const ScenePair& pair = dataset[order[start + b]];
        Tape tape;
        EncoderTape etp = encoder_on_tape(tape, out.enc);
        MatcherTape mtp = matcher_on_tape(tape, out.mat);
        int loss = pipeline_loss_t(tape, pair, out.enc, etp, mtp,
                                   config.sinkhorn_iters, config.alpha,
                                   config.sinkhorn_temperature);
        tape.backward(loss);
        sample_loss[b] = tape.value(loss)(0, 0);
        grads[b].reserve(params.size());
        for (int id : tape_ids(etp, mtp)) grads[b].push_back(tape.grad(id));
      }

      // deterministic accumulation in batch order
      std::vector<Mat> gsum;
      gsum.reserve(params.size());
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Mat g = grads[0][pi];
        for (int b = 1; b < bsz; ++b) g += grads[b][pi];
        gsum.push_back(g / bsz);
      }

      ++step;
      double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        if (!gsum[pi].allFinite())
          throw DivergenceDetected("train: non-finite gradient");
        adam_m[pi] = beta1 * adam_m[pi] + (1.0 - beta1) * gsum[pi];
        adam_v[pi] =
            beta2 * adam_v[pi] +
            (1.0 - beta2) * gsum[pi].cwiseProduct(gsum[pi]);
        Mat mhat = adam_m[pi] / c1;
        Mat vhat = adam_v[pi] / c2;
        *params[pi] -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
      }

      for (int b = 0; b < bsz; ++b)
        if (!std::isfinite(sample_loss[b]))
          throw DivergenceDetected("train: non-finite loss");
    }

    evaluate();  // loss components with the updated weights
    if (config.on_epoch) config.on_epoch(epoch + 1, out);
  }

  out.enc.check_finite();
  out.mat.check_finite();
  return out;
}

double grad_check_pipeline(const ScenePair& pair, const EncoderParams& enc,
                           const MatcherParams& mat, double step,
                           int coords_per_tensor, std::uint64_t seed) {
  const int iters = 20;
  const double alpha = 10.0;

  EncoderParams e = enc;
  MatcherParams m = mat;
  std::vector<Mat*> params = param_ptrs(e, m);

  auto eval = [&]() {
    Tape tape;
    EncoderTape etp = encoder_on_tape(tape, e);
    MatcherTape mtp = matcher_on_tape(tape, m);
    return tape.value(
        pipeline_loss_t(tape, pair, e, etp, mtp, iters, alpha, m.temperature))(0, 0);
  };

  std::vector<Mat> analytic;
  {
    Tape tape;
    EncoderTape etp = encoder_on_tape(tape, e);
    MatcherTape mtp = matcher_on_tape(tape, m);
    int loss = pipeline_loss_t(tape, pair, e, etp, mtp, iters, alpha, m.temperature);
    tape.backward(loss);
    for (int id : tape_ids(etp, mtp)) analytic.push_back(tape.grad(id));
  }

  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Mat& w = *params[pi];
    int n = static_cast<int>(w.size());
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int c = 0; c < std::min(coords_per_tensor, n); ++c) {
      int flat = n <= coords_per_tensor ? c : pick(rng);
      double saved = w.data()[flat];
      w.data()[flat] = saved + step;
      double hi = eval();
      w.data()[flat] = saved - step;
      double lo = eval();
      w.data()[flat] = saved;
      double fd = (hi - lo) / (2.0 * step);
      double a = analytic[pi].data()[flat];
      double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace sga
