#include "sgalign/registration.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <tuple>

#include "sgalign/encoder.hpp"

namespace sga {

SuperpointSet build_superpoints(const PointCloud& p, double voxel) {
  if (voxel <= 0.0) throw DimensionMismatch("build_superpoints: voxel must be > 0");
  Eigen::MatrixXd desc = p.has_descriptors()
                             ? p.descriptors
                             : point_descriptors(p, 0.3, true);

  std::map<std::tuple<long, long, long>, std::vector<int>> cells;
  for (int i = 0; i < static_cast<int>(p.size()); ++i) {
    const auto& pt = p.points[i];
    cells[{static_cast<long>(std::floor(pt.x() / voxel)),
           static_cast<long>(std::floor(pt.y() / voxel)),
           static_cast<long>(std::floor(pt.z() / voxel))}]
        .push_back(i);
  }

  SuperpointSet sp;
  const int width = static_cast<int>(desc.cols()) + 4;
  sp.descriptors.resize(cells.size(), width);
  int s = 0;
  for (const auto& [key, members] : cells) {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::RowVectorXd mean_desc = Eigen::RowVectorXd::Zero(desc.cols());
    std::map<int, int> votes;
    for (int i : members) {
      center += p.points[i];
      mean_desc += desc.row(i);
      votes[p.object_ids[i]]++;
    }
    center /= static_cast<double>(members.size());
    mean_desc /= static_cast<double>(members.size());

    Eigen::Vector4d shape = Eigen::Vector4d::Zero();
    if (members.size() >= 3) {
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (int i : members) {
        Eigen::Vector3d d = p.points[i] - center;
        cov += d * d.transpose();
      }
      cov /= static_cast<double>(members.size());
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
      Eigen::Vector3d ev = eig.eigenvalues();
      double l1 = std::max(ev[2], 1e-12);
      shape << (ev[2] - ev[1]) / l1, (ev[1] - ev[0]) / l1,
          std::max(ev[0], 0.0) / l1, std::sqrt(l1);
    }

    sp.centers.push_back(center);
    sp.member_point_indices.push_back(members);
    sp.descriptors.row(s) << mean_desc, shape.transpose();
    int best_obj = -1, best_votes = -1;
    for (auto [obj, v] : votes)
      if (v > best_votes) {
        best_votes = v;
        best_obj = obj;
      }
    sp.object_id.push_back(best_obj);
    ++s;
  }
  return sp;
}

Eigen::MatrixXd superpoint_matching_matrix(const SuperpointSet& src,
                                           const SuperpointSet& ref) {
  if (src.descriptors.cols() != ref.descriptors.cols())
    throw DimensionMismatch("superpoint_matching_matrix: descriptor widths differ");
  const int nr = static_cast<int>(ref.centers.size());
  const int ns = static_cast<int>(src.centers.size());
  Eigen::MatrixXd c(nr, ns);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < ns; ++j) {
      double denom = ref.descriptors.row(i).norm() * src.descriptors.row(j).norm();
      double cosine = denom > 1e-12
                          ? ref.descriptors.row(i).dot(src.descriptors.row(j)) / denom
                          : 0.0;
      c(i, j) = 0.5 * (cosine + 1.0);
    }
  return c;
}

Eigen::MatrixXd rescore(const Eigen::MatrixXd& c, const SoftAlignment& alignment,
                        const SuperpointSet& src_sp, const SuperpointSet& ref_sp,
                        double gamma) {
  if (gamma < 0.0) throw DimensionMismatch("rescore: gamma must be >= 0");
  if (gamma == 0.0) return c;
  const Eigen::Index m_src = alignment.m_src();
  const Eigen::Index m_ref = alignment.m_ref();
  Eigen::MatrixXd out = c;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    int obj_ref = ref_sp.object_id[i];
    if (obj_ref < 0 || obj_ref >= m_ref)
      throw ObjectOutOfRange("rescore: ref object " + std::to_string(obj_ref));
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      int obj_src = src_sp.object_id[j];
      if (obj_src < 0 || obj_src >= m_src)
        throw ObjectOutOfRange("rescore: src object " + std::to_string(obj_src));
      out(i, j) += gamma * alignment.soft_matrix(obj_src, obj_ref);
    }
  }
  return out;
}

CorrespondenceSet extract_correspondences(const Eigen::MatrixXd& c_prime,
                                          const SuperpointSet& src_sp,
                                          const SuperpointSet& ref_sp,
                                          const PointCloud& src,
                                          const PointCloud& ref, int top_m,
                                          bool mutual) {
  if (top_m < 1) throw DimensionMismatch("extract_correspondences: top_m >= 1");
  const Eigen::MatrixXd& src_desc = src.descriptors;
  const Eigen::MatrixXd& ref_desc = ref.descriptors;
  if (src_desc.rows() == 0 || ref_desc.rows() == 0)
    throw DimensionMismatch("extract_correspondences: clouds need descriptors");

  struct PairEntry {
    double score;
    int i, j;
  };
  std::vector<PairEntry> candidates;
  for (Eigen::Index i = 0; i < c_prime.rows(); ++i)
    for (Eigen::Index j = 0; j < c_prime.cols(); ++j) {
      if (mutual) {
        Eigen::Index br, bc;
        c_prime.row(i).maxCoeff(&bc);
        c_prime.col(j).maxCoeff(&br);
        if (bc != j || br != i) continue;
      }
      candidates.push_back({c_prime(i, j), static_cast<int>(i), static_cast<int>(j)});
    }
  std::sort(candidates.begin(), candidates.end(),
            [](const PairEntry& a, const PairEntry& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.i != b.i) return a.i < b.i;
              return a.j < b.j;
            });
  if (static_cast<int>(candidates.size()) > top_m) candidates.resize(top_m);

  CorrespondenceSet out;
  out.level = CorrLevel::Point;
  const double ratio = 0.9;
  for (const auto& cand : candidates) {
    const auto& ref_members = ref_sp.member_point_indices[cand.i];
    const auto& src_members = src_sp.member_point_indices[cand.j];
    for (int r : ref_members) {
      double d1 = std::numeric_limits<double>::infinity();
      double d2 = d1;
      int best = -1;
      for (int sidx : src_members) {
        double d = (ref_desc.row(r) - src_desc.row(sidx)).norm();
        if (d < d1 || (d == d1 && (best < 0 || sidx < best))) {
          d2 = d1;
          d1 = d;
          best = sidx;
        } else if (d < d2) {
          d2 = d;
        }
      }
      if (best < 0) continue;
      if (std::isfinite(d2) && d1 > ratio * d2) continue;  // ambiguous
      out.pairs.push_back({r, best, cand.score});
    }
  }
  return out;
}

namespace {

std::pair<PointCloud, std::vector<int>> subcloud(const PointCloud& cloud,
                                                 const std::set<int>& objects) {
  PointCloud out;
  std::vector<int> orig;
  for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
    if (!objects.count(cloud.object_ids[i])) continue;
    out.points.push_back(cloud.points[i]);
    out.object_ids.push_back(cloud.object_ids[i]);
    orig.push_back(i);
  }
  out.descriptors.resize(orig.size(), cloud.descriptors.cols());
  for (std::size_t i = 0; i < orig.size(); ++i)
    out.descriptors.row(i) = cloud.descriptors.row(orig[i]);
  return {std::move(out), std::move(orig)};
}

RigidTransform estimate_pose(const CorrespondenceSet& corr, const PointCloud& src,
                             const PointCloud& ref, const RegistrationParams& params,
                             std::uint64_t seed, CorrespondenceSet* inliers_out) {
  if (corr.pairs.size() < 3)
    throw NoCorrespondences("registration: fewer than 3 correspondences");
  if (params.use_ransac) {
    RansacResult r = ransac_pose(corr, src, ref, params.inlier_radius,
                                 params.ransac_iters, seed);
    if (inliers_out) {
      inliers_out->level = corr.level;
      for (std::size_t i = 0; i < corr.pairs.size(); ++i)
        if (r.inlier_mask[i]) inliers_out->pairs.push_back(corr.pairs[i]);
    }
    return r.transform;
  }
  std::vector<Eigen::Vector3d> s, r;
  std::vector<double> w;
  for (const auto& pair : corr.pairs) {
    s.push_back(src.points[pair.src_index]);
    r.push_back(ref.points[pair.ref_index]);
    w.push_back(std::max(pair.score, 1e-6));
  }
  const int n = static_cast<int>(s.size());
  auto fit = [&](const std::vector<int>& idx) {
    std::vector<Eigen::Vector3d> ks, kr;
    std::vector<double> kw;
    for (int i : idx) {
      ks.push_back(s[i]);
      kr.push_back(r[i]);
      kw.push_back(w[i]);
    }
    return weighted_svd_alignment(ks, kr, kw);
  };
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);

  // rigid motions preserve pairwise distances, so correct correspondences form
  // a mutually consistent clique; grow one greedily from the best-connected
  // correspondence to seed the fit (robust past 50% contamination, no sampling)
  const double tol = std::max(1e-6, params.inlier_radius);
  std::vector<std::vector<char>> consistent(n, std::vector<char>(n, 0));
  std::vector<int> degree(n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d = std::abs((s[i] - s[j]).norm() - (r[i] - r[j]).norm());
      if (d <= tol) {
        consistent[i][j] = consistent[j][i] = 1;
        ++degree[i];
        ++degree[j];
      }
    }
  std::vector<int> order = all;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return degree[a] != degree[b] ? degree[a] > degree[b] : a < b;
  });
  std::vector<int> members;
  for (int i : order) {
    bool ok = true;
    for (int m : members) ok = ok && consistent[i][m];
    if (ok) members.push_back(i);
  }
  std::sort(members.begin(), members.end());

  RigidTransform t;
  try {
    std::vector<int> kept = static_cast<int>(members.size()) >= 3 ? members : all;
    try {
      t = fit(kept);
    } catch (const DegenerateConfiguration&) {
      kept = all;
      t = fit(kept);
    }
    // trimmed re-estimation: re-admit everything within twice the kept set's
    // median residual, drop the rest, refit until the set stabilizes
    for (int round = 0; round < 12; ++round) {
      std::vector<double> res(n);
      for (int i = 0; i < n; ++i) res[i] = (t.apply(s[i]) - r[i]).norm();
      std::vector<double> kept_res;
      for (int i : kept) kept_res.push_back(res[i]);
      std::nth_element(kept_res.begin(), kept_res.begin() + kept_res.size() / 2,
                       kept_res.end());
      double gate = std::max(1e-6, 2.0 * kept_res[kept_res.size() / 2]);
      std::vector<int> next;
      for (int i = 0; i < n; ++i)
        if (res[i] <= gate) next.push_back(i);
      if (next.size() < 3) break;
      t = fit(next);
      if (next == kept) break;
      kept = std::move(next);
    }
  } catch (const DegenerateConfiguration& e) {
    throw NoCorrespondences(std::string("registration: degenerate pose input: ") +
                            e.what());
  }
  if (inliers_out) *inliers_out = corr;
  return t;
}

CorrespondenceSet match_subclouds(const PointCloud& src_sub, const PointCloud& ref_sub,
                                  const std::vector<int>& src_orig,
                                  const std::vector<int>& ref_orig,
                                  const SoftAlignment* alignment,
                                  const RegistrationParams& params) {
  if (src_sub.size() == 0 || ref_sub.size() == 0)
    return {};
  SuperpointSet src_sp = build_superpoints(src_sub, params.voxel);
  SuperpointSet ref_sp = build_superpoints(ref_sub, params.voxel);
  Eigen::MatrixXd c = superpoint_matching_matrix(src_sp, ref_sp);
  if (alignment && params.gamma > 0.0)
    c = rescore(c, *alignment, src_sp, ref_sp, params.gamma);
  CorrespondenceSet corr = extract_correspondences(c, src_sp, ref_sp, src_sub,
                                                   ref_sub, params.top_m,
                                                   params.mutual);
  for (auto& pair : corr.pairs) {
    pair.ref_index = ref_orig[pair.ref_index];
    pair.src_index = src_orig[pair.src_index];
  }
  return corr;
}

}  // namespace

RegistrationResult register_pair(const ScenePair& pair, const SoftAlignment& alignment,
                                 RegistrationStrategy strategy,
                                 const RegistrationParams& params, std::uint64_t seed) {
  PointCloud src = pair.src_cloud;
  PointCloud ref = pair.ref_cloud;
  if (!src.has_descriptors()) src.descriptors = point_descriptors(src, 0.3, true);
  if (!ref.has_descriptors()) ref.descriptors = point_descriptors(ref, 0.3, true);

  std::vector<int> all_src(src.size()), all_ref(ref.size());
  std::iota(all_src.begin(), all_src.end(), 0);
  std::iota(all_ref.begin(), all_ref.end(), 0);

  CorrespondenceSet corr;
  if (strategy == RegistrationStrategy::A2A) {
    corr = match_subclouds(src, ref, all_src, all_ref, nullptr, params);
  } else if (strategy == RegistrationStrategy::O2O) {
    if (alignment.selected_pairs.empty())
      throw NoCorrespondences("O2O: empty selected pair set");
    std::set<int> src_objects, ref_objects;
    for (const auto& sel : alignment.selected_pairs) {
      src_objects.insert(sel.src);
      ref_objects.insert(sel.ref);
    }
    auto [src_sub, src_orig] = subcloud(src, src_objects);
    auto [ref_sub, ref_orig] = subcloud(ref, ref_objects);
    corr = match_subclouds(src_sub, ref_sub, src_orig, ref_orig, &alignment, params);
  } else {
    // OPO family: match within each selected object pair, pool, estimate once
    std::vector<SelectedPair> selected = alignment.selected_pairs;
    if (strategy == RegistrationStrategy::OPO_FilterScore) {
      std::erase_if(selected, [&](const SelectedPair& s) {
        return s.score <= params.opo_score_threshold;
      });
    } else if (strategy == RegistrationStrategy::OPO_FilterTopK) {
      std::sort(selected.begin(), selected.end(),
                [](const SelectedPair& a, const SelectedPair& b) {
                  return a.score > b.score;
                });
      if (static_cast<int>(selected.size()) > params.opo_top_k)
        selected.resize(params.opo_top_k);
    }
    if (selected.empty())
      throw NoCorrespondences("OPO: no selected object pairs after filtering");
    for (const auto& sel : selected) {
      auto [src_sub, src_orig] = subcloud(src, {sel.src});
      auto [ref_sub, ref_orig] = subcloud(ref, {sel.ref});
      CorrespondenceSet part =
          match_subclouds(src_sub, ref_sub, src_orig, ref_orig, &alignment, params);
      corr.pairs.insert(corr.pairs.end(), part.pairs.begin(), part.pairs.end());
    }
  }

  RegistrationResult result;
  result.transform =
      estimate_pose(corr, src, ref, params, seed, &result.correspondences);
  return result;
}

std::vector<RigidTransform> mosaic(
    const std::vector<std::pair<SceneGraph, PointCloud>>& scenes,
    const MosaicParams& params) {
  const int n = static_cast<int>(scenes.size());
  if (n < 2) throw DimensionMismatch("mosaic: need at least 2 scenes");

  struct Edge {
    int a, b;  // registration was a (src) -> b (ref)
    double weight;
    RigidTransform t;  // frame a -> frame b
  };
  std::vector<Edge> edges;

  std::vector<PointCloud> clouds;
  clouds.reserve(n);
  for (const auto& [g, p] : scenes) {
    PointCloud c = p;
    if (!c.has_descriptors()) c.descriptors = point_descriptors(c, 0.3, true);
    clouds.push_back(std::move(c));
  }

  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      ScenePair pair;
      pair.src_graph = scenes[a].first;
      pair.ref_graph = scenes[b].first;
      pair.src_cloud = clouds[a];
      pair.ref_cloud = clouds[b];
      RegistrationResult result;
      try {
        result = register_pair(pair, {}, RegistrationStrategy::A2A, params.reg,
                               params.seed + 1000003ULL * a + b);
      } catch (const NoCorrespondences&) {
        continue;
      }
      const auto& corr = result.correspondences.pairs;
      if (static_cast<int>(corr.size()) < params.min_correspondences) continue;
      int inliers = 0;
      double score_sum = 0.0;
      const double r2 = params.edge_inlier_radius * params.edge_inlier_radius;
      for (const auto& c : corr) {
        Eigen::Vector3d moved = result.transform.apply(clouds[a].points[c.src_index]);
        if ((moved - clouds[b].points[c.ref_index]).squaredNorm() <= r2) {
          ++inliers;
          score_sum += c.score;
        }
      }
      double frac = static_cast<double>(inliers) / corr.size();
      if (frac < params.min_inlier_fraction || inliers < params.min_correspondences)
        continue;
      edges.push_back({a, b, score_sum / inliers, result.transform});
    }

  // maximum-weight spanning tree (Kruskal)
  std::sort(edges.begin(), edges.end(),
            [](const Edge& x, const Edge& y) { return x.weight > y.weight; });
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<std::vector<std::pair<int, RigidTransform>>> adj(n);  // (nbr, nbr->self? )
  for (const auto& e : edges) {
    int ra = find(e.a), rb = find(e.b);
    if (ra == rb) continue;
    parent[ra] = rb;
    adj[e.a].push_back({e.b, e.t.inverse()});  // maps frame b -> frame a
    adj[e.b].push_back({e.a, e.t});
  }

  std::vector<RigidTransform> into_root(n);
  std::vector<char> seen(n, 0);
  std::queue<int> bfs;
  bfs.push(0);
  seen[0] = 1;
  while (!bfs.empty()) {
    int v = bfs.front();
    bfs.pop();
    for (const auto& [w, t_w_to_v] : adj[v]) {
      if (seen[w]) continue;
      seen[w] = 1;
      into_root[w] = into_root[v].compose(t_w_to_v);
      bfs.push(w);
    }
  }
  for (int v = 0; v < n; ++v)
    if (!seen[v])
      throw DisconnectedScenes("mosaic: fragment " + std::to_string(v) +
                               " shares no overlap with the tree");
  return into_root;
}

}  // namespace sga
