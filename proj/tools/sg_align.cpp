// Command-line front end: scene generation, training, alignment, registration,
// mosaicking, batch evaluation, and output self-checking.

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sgalign/io.hpp"
#include "sgalign/metrics.hpp"
#include "sgalign/registration.hpp"
#include "sgalign/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sga;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void apply_thread_cap() {
  if (const char* env = std::getenv("SG_ALIGN_THREADS")) {
    int cap = std::atoi(env);
    if (cap < 1) throw ConfigError("SG_ALIGN_THREADS must be a positive integer");
    omp_set_num_threads(std::min(cap, omp_get_max_threads()));
  }
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

void reject_unknown_keys(const json& cfg, const std::set<std::string>& allowed,
                         const std::string& command) {
  if (!cfg.is_object()) throw ConfigError(command + ": config must be a JSON object");
  for (const auto& [key, value] : cfg.items())
    if (!allowed.count(key))
      throw ConfigError(command + ": unknown config key \"" + key + "\"");
}

template <typename T>
T get_or(const json& cfg, const std::string& key, T fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key \"" + key + "\": " + e.what());
  }
}

std::string require_string(const json& cfg, const std::string& key,
                           const std::string& command) {
  if (!cfg.contains(key))
    throw ConfigError(command + ": config key \"" + key + "\" is required");
  return cfg.at(key).get<std::string>();
}

std::string bucket_of(double overlap) {
  if (overlap < 0.1) return "0-10";
  if (overlap < 0.3) return "10-30";
  if (overlap < 0.6) return "30-60";
  return "60+";
}

GeneratorConfig generator_from_config(const json& cfg) {
  GeneratorConfig g;
  g.min_nodes = get_or(cfg, "min_nodes", g.min_nodes);
  g.max_nodes = get_or(cfg, "max_nodes", g.max_nodes);
  g.min_overlap = get_or(cfg, "min_overlap", g.min_overlap);
  g.max_overlap = get_or(cfg, "max_overlap", g.max_overlap);
  g.num_classes = get_or(cfg, "num_classes", g.num_classes);
  g.num_relations = get_or(cfg, "num_relations", g.num_relations);
  g.min_points_per_object = get_or(cfg, "min_points_per_object", g.min_points_per_object);
  g.max_points_per_object = get_or(cfg, "max_points_per_object", g.max_points_per_object);
  g.max_rotation_deg = get_or(cfg, "max_rotation_deg", g.max_rotation_deg);
  g.max_translation = get_or(cfg, "max_translation", g.max_translation);
  g.noise_sigma = get_or(cfg, "noise_sigma", g.noise_sigma);
  g.scene_extent = get_or(cfg, "scene_extent", g.scene_extent);
  g.near_radius = get_or(cfg, "near_radius", g.near_radius);
  g.symmetric_stress = get_or(cfg, "symmetric_stress", g.symmetric_stress);
  g.twin_objects = get_or(cfg, "twin_objects", g.twin_objects);
  return g;
}

const std::set<std::string> kGeneratorKeys = {
    "min_nodes", "max_nodes", "min_overlap", "max_overlap", "num_classes",
    "num_relations", "min_points_per_object", "max_points_per_object",
    "max_rotation_deg", "max_translation", "noise_sigma", "scene_extent",
    "near_radius", "symmetric_stress", "twin_objects"};

std::set<std::string> with_generator_keys(std::set<std::string> extra) {
  extra.insert(kGeneratorKeys.begin(), kGeneratorKeys.end());
  return extra;
}

struct CheckpointBundle {
  EncoderParams enc;
  MatcherParams mat;
  std::map<std::string, std::string> meta;
};

CheckpointBundle load_params(const std::string& path) {
  auto [tensors, meta] = load_checkpoint(path);
  CheckpointBundle b;
  b.enc = EncoderParams::from_tensors(tensors, meta);
  b.mat = MatcherParams::from_tensors(tensors);
  b.meta = meta;
  return b;
}

void save_params(const std::string& path, const EncoderParams& enc,
                 const MatcherParams& mat, std::map<std::string, std::string> meta) {
  std::map<std::string, Eigen::MatrixXd> tensors = enc.to_tensors();
  for (auto& [name, t] : mat.to_tensors()) tensors[name] = t;
  meta["num_classes"] = std::to_string(enc.num_classes);
  meta["num_relations"] = std::to_string(enc.num_relations);
  meta["d"] = std::to_string(enc.d);
  meta["n_layers"] = std::to_string(enc.n_layers);
  meta["use_fusion"] = enc.use_fusion ? "1" : "0";
  save_checkpoint(path, tensors, meta);
}

std::vector<std::string> manifest_files(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  if (!doc.contains("entries") || !doc.at("entries").is_array())
    throw ParseError("manifest: missing entries array");
  fs::path base = fs::path(manifest_path).parent_path();
  std::vector<std::string> files;
  for (const auto& entry : doc.at("entries"))
    files.push_back((base / entry.at("file").get<std::string>()).string());
  return files;
}

std::vector<ScenePair> load_dataset(const std::string& manifest_path) {
  std::vector<std::string> files = manifest_files(manifest_path);
  std::vector<ScenePair> pairs(files.size());
  #pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(files.size()); ++i)
    pairs[i] = load_scene_pair(files[i]);
  return pairs;
}

// 1-based rank of each ground-truth partner among its source row's scores;
// exact ties count against the query so symmetric ambiguities are not free hits
std::vector<int> gt_ranks(const SoftAlignment& a, const ScenePair& pair) {
  std::vector<int> ranks;
  for (auto [i, j] : pair.gt_alignment) {
    double score = a.soft_matrix(i, j);
    int rank = 1;
    for (int jj = 0; jj < pair.ref_graph.size(); ++jj)
      if (jj != j && a.soft_matrix(i, jj) >= score) ++rank;
    ranks.push_back(rank);
  }
  return ranks;
}

Eigen::MatrixXd selection_matrix(const SoftAlignment& a, const ScenePair& pair) {
  Eigen::MatrixXd pred =
      Eigen::MatrixXd::Zero(pair.src_graph.size(), pair.ref_graph.size());
  for (const auto& sel : a.selected_pairs) pred(sel.src, sel.ref) = 1.0;
  return pred;
}

json transform_to_json(const RigidTransform& t) {
  json rows = json::array();
  Eigen::Matrix4d m = t.matrix();
  for (int i = 0; i < 4; ++i) {
    json row = json::array();
    for (int j = 0; j < 4; ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

RegistrationStrategy strategy_from_name(const std::string& name) {
  if (name == "a2a") return RegistrationStrategy::A2A;
  if (name == "opo") return RegistrationStrategy::OPO;
  if (name == "opo-s") return RegistrationStrategy::OPO_FilterScore;
  if (name == "opo-k") return RegistrationStrategy::OPO_FilterTopK;
  if (name == "o2o") return RegistrationStrategy::O2O;
  throw ConfigError("unknown strategy " + name);
}

struct PairReport {
  double overlap = 0.0;
  std::string bucket;
  double hits1 = 0.0, hits3 = 0.0, hits5 = 0.0, mrr = 0.0, f1 = 0.0;
  double k_tilde = 0.0, k_gt = 0.0;
  double mu_all = 0.0, mu_top3 = 0.0;
  bool decided_overlap_all = false, decided_overlap_top3 = false;
  bool registered_ok = false;
  double rre_deg = 0.0, rte = 0.0, scc_value = 0.0;
};

PairReport evaluate_pair(const ScenePair& pair, const EncoderParams& enc,
                         const MatcherParams& mat, RegistrationStrategy strategy,
                         const RegistrationParams& reg, std::uint64_t seed) {
  PairReport r;
  r.overlap = pair.overlap_fraction;
  r.bucket = bucket_of(pair.overlap_fraction);

  SoftAlignment a = align(pair, enc, mat);
  Eigen::MatrixXd gt = pair.gt_matrix();
  if (!pair.gt_alignment.empty()) {
    std::vector<int> ranks = gt_ranks(a, pair);
    r.hits1 = hits_at_k(ranks, 1);
    r.hits3 = hits_at_k(ranks, 3);
    r.hits5 = hits_at_k(ranks, 5);
    r.mrr = mean_reciprocal_rank(ranks);
  }
  r.f1 = matching_f1(selection_matrix(a, pair), gt);
  r.k_tilde = a.similarity;
  int denom = std::min(pair.src_graph.size(), pair.ref_graph.size());
  r.k_gt = denom > 0 ? static_cast<double>(pair.gt_alignment.size()) / denom : 0.0;
  r.mu_all = overlap_score(a, OverlapVariant::All);
  r.mu_top3 = overlap_score(a, OverlapVariant::Top3);
  MetricThresholds th;
  r.decided_overlap_all =
      overlap_decision(r.mu_all, OverlapVariant::All, th) == OverlapDecision::Overlap;
  r.decided_overlap_top3 = overlap_decision(r.mu_top3, OverlapVariant::Top3, th) ==
                           OverlapDecision::Overlap;

  try {
    RegistrationResult res = register_pair(pair, a, strategy, reg, seed);
    std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> gt_corr;
    for (const auto& p : pair.src_cloud.points)
      gt_corr.push_back({p, pair.gt_transform.apply(p)});
    RegistrationMetrics m =
        registration_metrics(res.transform, pair.gt_transform, gt_corr,
                             res.correspondences, pair.src_cloud, pair.ref_cloud, th);
    r.registered_ok = true;
    r.rre_deg = m.rre_deg;
    r.rte = m.rte;
    r.scc_value = scc(res.correspondences, pair.src_cloud.object_ids,
                      pair.ref_cloud.object_ids, pair.gt_alignment);
  } catch (const NoCorrespondences&) {
    r.registered_ok = false;
  }
  return r;
}

int cmd_generate(const json& cfg, const std::string& out, std::uint64_t seed) {
  reject_unknown_keys(cfg, with_generator_keys({"n", "write_scenes"}), "generate");
  int n = get_or(cfg, "n", 10);
  if (n < 1) throw ConfigError("generate: n must be >= 1");
  bool write_scenes = get_or(cfg, "write_scenes", false);
  GeneratorConfig g = generator_from_config(cfg);
  fs::create_directories(out);

  json entries = json::array();
  for (int i = 0; i < n; ++i) {
    std::uint64_t pair_seed = seed + static_cast<std::uint64_t>(i);
    ScenePair pair = generate_scene_pair(g, pair_seed);
    char name[32];
    std::snprintf(name, sizeof(name), "pair_%04d.json", i);
    save_scene_pair((fs::path(out) / name).string(), pair);
    if (write_scenes) {  // individual fragments, e.g. as mosaic input
      char src_name[40], ref_name[40];
      std::snprintf(src_name, sizeof(src_name), "pair_%04d_src.json", i);
      std::snprintf(ref_name, sizeof(ref_name), "pair_%04d_ref.json", i);
      save_scene((fs::path(out) / src_name).string(), pair.src_graph, pair.src_cloud);
      save_scene((fs::path(out) / ref_name).string(), pair.ref_graph, pair.ref_cloud);
    }
    entries.push_back({{"file", name},
                       {"seed", pair_seed},
                       {"overlap", pair.overlap_fraction},
                       {"bucket", bucket_of(pair.overlap_fraction)}});
  }
  json manifest = {{"schema_version", 1}, {"seed", seed}, {"count", n},
                   {"entries", entries}};
  atomic_write((fs::path(out) / "manifest.json").string(), manifest.dump(2));
  std::printf("generate: wrote %d pairs to %s\n", n, out.c_str());
  return 0;
}

int cmd_train(const json& cfg, const std::string& out, std::uint64_t seed) {
  reject_unknown_keys(cfg,
                      {"manifest", "epochs", "lr", "batch_size", "alpha",
                       "lr_decay_every", "lr_decay", "sinkhorn_iters", "d",
                       "n_layers", "use_fusion"},
                      "train");
  std::string manifest = require_string(cfg, "manifest", "train");
  std::vector<ScenePair> dataset = load_dataset(manifest);
  if (dataset.empty()) throw EmptyInput("train: empty dataset");

  TrainConfig tc;
  tc.epochs = get_or(cfg, "epochs", tc.epochs);
  tc.lr = get_or(cfg, "lr", tc.lr);
  tc.batch_size = get_or(cfg, "batch_size", tc.batch_size);
  tc.alpha = get_or(cfg, "alpha", tc.alpha);
  tc.lr_decay_every = get_or(cfg, "lr_decay_every", tc.lr_decay_every);
  tc.lr_decay = get_or(cfg, "lr_decay", tc.lr_decay);
  tc.sinkhorn_iters = get_or(cfg, "sinkhorn_iters", tc.sinkhorn_iters);
  tc.seed = seed;

  fs::create_directories(out);
  std::string ckpt_path = (fs::path(out) / "checkpoint.bin").string();
  std::string curve_path = (fs::path(out) / "loss_curve.csv").string();

  EncoderParams enc;
  MatcherParams mat;
  int epochs_done = 0;
  std::vector<std::array<double, 3>> rows;  // completed-epoch rows only
  if (fs::exists(ckpt_path)) {
    CheckpointBundle b = load_params(ckpt_path);
    auto it = b.meta.find("epochs_done");
    epochs_done = it != b.meta.end() ? std::stoi(it->second) : 0;
    enc = std::move(b.enc);
    mat = std::move(b.mat);
    std::ifstream curve(curve_path);
    std::string line;
    std::getline(curve, line);  // header
    while (std::getline(curve, line)) {
      std::array<double, 3> row{};
      int epoch = 0;
      if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &epoch, &row[0], &row[1],
                      &row[2]) == 4)
        rows.push_back(row);
    }
    std::printf("train: resuming from epoch %d\n", epochs_done);
  } else {
    const SceneGraph& g = dataset.front().src_graph;
    enc = EncoderParams::init(g.num_classes, g.num_relations,
                              get_or(cfg, "d", 16), get_or(cfg, "n_layers", 2), seed);
    enc.use_fusion = get_or(cfg, "use_fusion", true);
    mat = MatcherParams::init(enc.d_s(), enc.d_p(), seed + 1);
  }
  if (epochs_done >= tc.epochs) {
    std::printf("train: checkpoint already at %d epochs\n", epochs_done);
    return 0;
  }

  auto write_curve = [&] {
    std::ostringstream csv;
    csv << "epoch,L_s,L_k,L\n";
    for (std::size_t e = 0; e < rows.size(); ++e)
      csv << (e + 1) << "," << rows[e][0] << "," << rows[e][1] << ","
          << rows[e][2] << "\n";
    atomic_write(curve_path, csv.str());
  };

  tc.epochs -= epochs_done;
  tc.seed = seed + static_cast<std::uint64_t>(epochs_done);
  tc.on_epoch = [&](int epoch, const TrainResult& partial) {
    rows.push_back(partial.curve.back());
    write_curve();
    save_params(ckpt_path, partial.enc, partial.mat,
                {{"epochs_done", std::to_string(epochs_done + epoch)}});
  };
  TrainResult result = train(dataset, enc, mat, tc);
  std::printf("train: %zu epochs complete, final L = %.6f\n", rows.size(),
              result.curve.back()[2]);
  return 0;
}

int cmd_align(const json& cfg, const std::string& out, std::uint64_t) {
  reject_unknown_keys(cfg, {"pair", "checkpoint"}, "align");
  ScenePair pair = load_scene_pair(require_string(cfg, "pair", "align"));
  CheckpointBundle b = load_params(require_string(cfg, "checkpoint", "align"));

  SoftAlignment a = align(pair, b.enc, b.mat);
  std::vector<int> ranks = gt_ranks(a, pair);
  MetricThresholds th;
  double mu_all = overlap_score(a, OverlapVariant::All);
  double mu_top3 = overlap_score(a, OverlapVariant::Top3);

  json selected = json::array();
  for (const auto& sel : a.selected_pairs)
    selected.push_back({{"src", sel.src}, {"ref", sel.ref}, {"score", sel.score}});
  json report = {
      {"hits1", hits_at_k(ranks, 1)},
      {"hits3", hits_at_k(ranks, 3)},
      {"hits5", hits_at_k(ranks, 5)},
      {"mrr", mean_reciprocal_rank(ranks)},
      {"f1", matching_f1(selection_matrix(a, pair), pair.gt_matrix())},
      {"k_tilde", a.similarity},
      {"mu_all", mu_all},
      {"mu_top3", mu_top3},
      {"overlap_all", overlap_decision(mu_all, OverlapVariant::All, th) ==
                          OverlapDecision::Overlap},
      {"overlap_top3", overlap_decision(mu_top3, OverlapVariant::Top3, th) ==
                           OverlapDecision::Overlap},
      {"selected_pairs", selected}};
  fs::create_directories(out);
  std::string path = (fs::path(out) / "align_report.json").string();
  atomic_write(path, report.dump(2));
  std::printf("align: hits@1 %.3f mrr %.3f f1 %.3f -> %s\n",
              report["hits1"].get<double>(), report["mrr"].get<double>(),
              report["f1"].get<double>(), path.c_str());
  return 0;
}

int cmd_register(const json& cfg, const std::string& out, std::uint64_t seed,
                 const std::string& strategy_name, double gamma, bool no_ransac) {
  reject_unknown_keys(cfg, {"pair", "checkpoint", "use_gt_alignment"}, "register");
  ScenePair pair = load_scene_pair(require_string(cfg, "pair", "register"));
  RegistrationStrategy strategy = strategy_from_name(strategy_name);

  SoftAlignment a;
  if (get_or(cfg, "use_gt_alignment", false)) {
    a = alignment_from_ground_truth(pair);
  } else if (cfg.contains("checkpoint")) {
    CheckpointBundle b = load_params(cfg.at("checkpoint").get<std::string>());
    a = align(pair, b.enc, b.mat);
  } else if (strategy != RegistrationStrategy::A2A) {
    throw ConfigError("register: " + strategy_name +
                      " needs a checkpoint or use_gt_alignment");
  }

  RegistrationParams params;
  params.gamma = gamma;
  params.use_ransac = !no_ransac;
  RegistrationResult res = register_pair(pair, a, strategy, params, seed);

  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> gt_corr;
  for (const auto& p : pair.src_cloud.points)
    gt_corr.push_back({p, pair.gt_transform.apply(p)});
  MetricThresholds th;
  RegistrationMetrics m =
      registration_metrics(res.transform, pair.gt_transform, gt_corr,
                           res.correspondences, pair.src_cloud, pair.ref_cloud, th);

  json report = {{"strategy", strategy_name},
                 {"gamma", gamma},
                 {"use_ransac", params.use_ransac},
                 {"transform", transform_to_json(res.transform)},
                 {"rre_deg", m.rre_deg},
                 {"rte", m.rte},
                 {"rmse", m.rmse},
                 {"registered", m.registered},
                 {"inlier_ratio", m.inlier_ratio},
                 {"num_correspondences", res.correspondences.pairs.size()}};
  fs::create_directories(out);
  std::string path = (fs::path(out) / "register_report.json").string();
  atomic_write(path, report.dump(2));
  std::printf("register: %s rre %.4f deg rte %.4f -> %s\n", strategy_name.c_str(),
              m.rre_deg, m.rte, path.c_str());
  return 0;
}

int cmd_mosaic(const json& cfg, const std::string& out, std::uint64_t seed,
               double gamma, bool no_ransac) {
  reject_unknown_keys(cfg,
                      {"scenes", "gt_scene", "min_correspondences",
                       "min_inlier_fraction", "edge_inlier_radius"},
                      "mosaic");
  if (!cfg.contains("scenes") || !cfg.at("scenes").is_array())
    throw ConfigError("mosaic: config key \"scenes\" must be a file list");
  std::vector<std::pair<SceneGraph, PointCloud>> scenes;
  for (const auto& f : cfg.at("scenes"))
    scenes.push_back(load_scene(f.get<std::string>()));

  MosaicParams params;
  params.reg.gamma = gamma;
  params.reg.use_ransac = !no_ransac;
  params.min_correspondences =
      get_or(cfg, "min_correspondences", params.min_correspondences);
  params.min_inlier_fraction =
      get_or(cfg, "min_inlier_fraction", params.min_inlier_fraction);
  params.edge_inlier_radius =
      get_or(cfg, "edge_inlier_radius", params.edge_inlier_radius);
  params.seed = seed;

  std::vector<RigidTransform> poses = mosaic(scenes, params);
  json pose_list = json::array();
  for (const auto& t : poses) pose_list.push_back(transform_to_json(t));
  json report = {{"num_scenes", scenes.size()}, {"poses", pose_list}};

  if (cfg.contains("gt_scene")) {
    auto [gt_graph, gt_cloud] = load_scene(cfg.at("gt_scene").get<std::string>());
    PointCloud recon;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      PointCloud moved = apply_transform(poses[i], scenes[i].second);
      recon.points.insert(recon.points.end(), moved.points.begin(),
                          moved.points.end());
      recon.object_ids.insert(recon.object_ids.end(), moved.object_ids.begin(),
                              moved.object_ids.end());
    }
    MosaicMetrics m = mosaic_metrics(recon, gt_cloud, MetricThresholds{});
    report["metrics"] = {{"acc", m.acc},
                         {"comp", m.comp},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1}};
  }
  fs::create_directories(out);
  std::string path = (fs::path(out) / "mosaic_poses.json").string();
  atomic_write(path, report.dump(2));
  std::printf("mosaic: %zu poses -> %s\n", poses.size(), path.c_str());
  return 0;
}

int cmd_evaluate(const json& cfg, const std::string& out, std::uint64_t seed,
                 const std::string& strategy_name, double gamma, bool no_ransac) {
  reject_unknown_keys(cfg, {"manifest", "checkpoint"}, "evaluate");
  std::vector<ScenePair> pairs =
      load_dataset(require_string(cfg, "manifest", "evaluate"));
  if (pairs.empty()) throw EmptyInput("evaluate: zero pairs in manifest");
  CheckpointBundle b = load_params(require_string(cfg, "checkpoint", "evaluate"));

  RegistrationStrategy strategy = strategy_from_name(strategy_name);
  RegistrationParams reg;
  reg.gamma = gamma;
  reg.use_ransac = !no_ransac;

  std::vector<PairReport> reports(pairs.size());
  #pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(pairs.size()); ++i)
    reports[i] = evaluate_pair(pairs[i], b.enc, b.mat, strategy, reg,
                               seed + static_cast<std::uint64_t>(i));

  std::ostringstream csv;
  csv << "pair,overlap,bucket,hits1,hits3,hits5,mrr,f1,k_tilde,k_gt,mu_all,"
         "mu_top3,overlap_all,overlap_top3,registered,rre_deg,rte,scc\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const PairReport& r = reports[i];
    csv << i << "," << r.overlap << "," << r.bucket << "," << r.hits1 << ","
        << r.hits3 << "," << r.hits5 << "," << r.mrr << "," << r.f1 << ","
        << r.k_tilde << "," << r.k_gt << "," << r.mu_all << "," << r.mu_top3
        << "," << r.decided_overlap_all << "," << r.decided_overlap_top3 << ","
        << r.registered_ok << "," << r.rre_deg << "," << r.rte << ","
        << r.scc_value << "\n";
  }

  auto summarize = [&](auto keep) {
    json s;
    int n = 0, registered = 0;
    double hits1 = 0, hits3 = 0, hits5 = 0, mrr = 0, f1 = 0, rre = 0, rte = 0,
           scc_sum = 0;
    for (const PairReport& r : reports) {
      if (!keep(r)) continue;
      ++n;
      hits1 += r.hits1;
      hits3 += r.hits3;
      hits5 += r.hits5;
      mrr += r.mrr;
      f1 += r.f1;
      if (r.registered_ok) {
        ++registered;
        rre += r.rre_deg;
        rte += r.rte;
        scc_sum += r.scc_value;
      }
    }
    s["count"] = n;
    if (n > 0) {
      s["hits1"] = hits1 / n;
      s["hits3"] = hits3 / n;
      s["hits5"] = hits5 / n;
      s["mrr"] = mrr / n;
      s["f1"] = f1 / n;
      s["registered"] = registered;
      if (registered > 0) {
        s["mean_rre_deg"] = rre / registered;
        s["mean_rte"] = rte / registered;
        s["mean_scc"] = scc_sum / registered;
      }
    }
    return s;
  };

  json buckets;
  for (const std::string name : {"10-30", "30-60", "60+"})
    buckets[name] =
        summarize([&](const PairReport& r) { return r.bucket == name; });
  buckets["overall"] = summarize([](const PairReport&) { return true; });

  // overlap-check confusion: positive = true overlap fraction >= 0.1
  auto confusion = [&](bool use_top3) {
    int tp = 0, fp = 0, fn = 0, tn = 0;
    for (const PairReport& r : reports) {
      bool actual = r.overlap >= 0.1;
      bool predicted =
          use_top3 ? r.decided_overlap_top3 : r.decided_overlap_all;
      (actual ? (predicted ? tp : fn) : (predicted ? fp : tn))++;
    }
    return json{{"tp", tp}, {"fp", fp}, {"fn", fn}, {"tn", tn}};
  };
  json summary = {{"strategy", strategy_name},
                  {"gamma", gamma},
                  {"use_ransac", !no_ransac},
                  {"buckets", buckets},
                  {"overlap_confusion",
                   {{"all", confusion(false)}, {"top3", confusion(true)}}}};

  fs::create_directories(out);
  atomic_write((fs::path(out) / "evaluate_pairs.csv").string(), csv.str());
  atomic_write((fs::path(out) / "evaluate_summary.json").string(), summary.dump(2));
  std::printf("evaluate: %zu pairs, overall hits@1 %.3f -> %s\n", pairs.size(),
              buckets["overall"].value("hits1", 0.0), out.c_str());
  return 0;
}

int cmd_selfcheck(const std::string& out) {
  fs::path dir(out);
  if (!fs::is_directory(dir)) throw IoError("selfcheck: " + out + " is not a directory");
  int checked = 0;

  auto parse_json_file = [&](const fs::path& p) {
    std::ifstream in(p);
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError(p.string() + ": " + e.what());
    }
  };

  if (fs::exists(dir / "manifest.json")) {
    json manifest = parse_json_file(dir / "manifest.json");
    if (!manifest.contains("entries")) throw ParseError("manifest: missing entries");
    for (const auto& entry : manifest.at("entries")) {
      ScenePair pair = load_scene_pair((dir / entry.at("file").get<std::string>()).string());
      pair.src_graph.validate();
      pair.ref_graph.validate();
      double overlap = entry.at("overlap").get<double>();
      if (std::abs(overlap - pair.overlap_fraction) > 1e-12)
        throw ParseError("manifest overlap disagrees with " +
                         entry.at("file").get<std::string>());
      ++checked;
    }
  }
  if (fs::exists(dir / "checkpoint.bin")) {
    load_params((dir / "checkpoint.bin").string());
    ++checked;
  }
  if (fs::exists(dir / "loss_curve.csv")) {
    std::ifstream in(dir / "loss_curve.csv");
    std::string header;
    std::getline(in, header);
    if (header != "epoch,L_s,L_k,L") throw ParseError("loss_curve.csv: bad header");
    std::string line;
    int prev_epoch = 0;
    while (std::getline(in, line)) {
      int epoch;
      double ls, lk, l;
      if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &epoch, &ls, &lk, &l) != 4)
        throw ParseError("loss_curve.csv: bad row: " + line);
      if (epoch != prev_epoch + 1)
        throw ParseError("loss_curve.csv: epochs not consecutive");
      prev_epoch = epoch;
    }
    ++checked;
  }
  for (const char* name : {"align_report.json", "register_report.json",
                           "mosaic_poses.json", "evaluate_summary.json"}) {
    if (!fs::exists(dir / name)) continue;
    parse_json_file(dir / name);
    ++checked;
  }
  if (fs::exists(dir / "evaluate_pairs.csv")) {
    std::ifstream in(dir / "evaluate_pairs.csv");
    std::string header;
    std::getline(in, header);
    if (header.rfind("pair,overlap,bucket", 0) != 0)
      throw ParseError("evaluate_pairs.csv: bad header");
    ++checked;
  }
  if (checked == 0) throw IoError("selfcheck: no recognized outputs in " + out);
  std::printf("selfcheck: %d artifacts valid in %s\n", checked, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partial scene-graph alignment and point-cloud registration"};
  app.require_subcommand(1);

  std::string config_path, out = ".", strategy = "o2o", overlap_variant = "all";
  std::uint64_t seed = 0;
  double gamma = 0.2;
  bool no_ransac = false;

  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out, "output directory");
  app.add_option("--strategy", strategy, "registration strategy")
      ->check(CLI::IsMember({"a2a", "opo", "opo-s", "opo-k", "o2o"}));
  app.add_option("--gamma", gamma, "semantic rescoring weight");
  app.add_flag("--no-ransac", no_ransac, "plain weighted SVD instead of RANSAC");
  app.add_option("--overlap-variant", overlap_variant, "overlap score variant")
      ->check(CLI::IsMember({"all", "top3"}));

  auto* generate = app.add_subcommand("generate", "write synthetic scene pairs");
  auto* train_cmd = app.add_subcommand("train", "train encoder + matcher");
  auto* align_cmd = app.add_subcommand("align", "align one scene pair");
  auto* register_cmd = app.add_subcommand("register", "register one scene pair");
  auto* mosaic_cmd = app.add_subcommand("mosaic", "mosaic scene fragments");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "batch metrics over a dataset");
  auto* selfcheck_cmd = app.add_subcommand("selfcheck", "validate output files");
  for (auto* sub : {generate, train_cmd, align_cmd, register_cmd, mosaic_cmd,
                    evaluate_cmd, selfcheck_cmd})
    sub->fallthrough();  // shared flags may follow the subcommand

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    apply_thread_cap();
    json cfg = json::object();
    if (!config_path.empty()) cfg = load_config(config_path);

    if (generate->parsed()) return cmd_generate(cfg, out, seed);
    if (train_cmd->parsed()) return cmd_train(cfg, out, seed);
    if (align_cmd->parsed()) return cmd_align(cfg, out, seed);
    if (register_cmd->parsed())
      return cmd_register(cfg, out, seed, strategy, gamma, no_ransac);
    if (mosaic_cmd->parsed()) return cmd_mosaic(cfg, out, seed, gamma, no_ransac);
    if (evaluate_cmd->parsed())
      return cmd_evaluate(cfg, out, seed, strategy, gamma, no_ransac);
    if (selfcheck_cmd->parsed()) return cmd_selfcheck(out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DivergenceDetected& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const DegenerateConfiguration& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
