#include "sgalign/io.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sga {

using nlohmann::json;

void atomic_write(const std::string& path, const std::string& contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename to " + path + " failed: " + ec.message());
}

namespace {

json scene_to_json(const SceneGraph& g, const PointCloud& p) {
  json doc;
  doc["schema_version"] = kSceneSchemaVersion;
  doc["num_classes"] = g.num_classes;
  doc["num_relations"] = g.num_relations;
  json nodes = json::array();
  for (const auto& n : g.nodes) {
    json node;
    node["id"] = n.id;
    node["class"] = n.semantic_class;
    node["attributes"] = std::vector<double>(n.attributes.data(),
                                             n.attributes.data() + n.attributes.size());
    node["centroid"] = {n.centroid.x(), n.centroid.y(), n.centroid.z()};
    nodes.push_back(std::move(node));
  }
  doc["nodes"] = std::move(nodes);
  json edges = json::array();
  for (const auto& [key, rel] : g.edge_relations)
    edges.push_back({{"src", key.first}, {"dst", key.second}, {"relation", rel}});
  doc["edges"] = std::move(edges);
  std::vector<double> flat;
  flat.reserve(p.size() * 3);
  for (const auto& pt : p.points) {
    flat.push_back(pt.x());
    flat.push_back(pt.y());
    flat.push_back(pt.z());
  }
  doc["points"] = std::move(flat);
  doc["object_ids"] = p.object_ids;
  return doc;
}

std::pair<SceneGraph, PointCloud> scene_from_json(const json& doc) {
  if (!doc.contains("schema_version"))
    throw ParseError("scene file: missing schema_version");
  if (doc["schema_version"].get<int>() != kSceneSchemaVersion)
    throw SchemaVersionMismatch("scene file: unsupported schema_version " +
                                doc["schema_version"].dump());
  SceneGraph g;
  PointCloud p;
  try {
    g.num_classes = doc.at("num_classes").get<int>();
    g.num_relations = doc.at("num_relations").get<int>();
    for (const auto& node : doc.at("nodes")) {
      SceneGraphNode n;
      n.id = node.at("id").get<int>();
      n.semantic_class = node.at("class").get<int>();
      auto attrs = node.at("attributes").get<std::vector<double>>();
      n.attributes = Eigen::Map<const Eigen::VectorXd>(attrs.data(), attrs.size());
      auto c = node.at("centroid").get<std::vector<double>>();
      if (c.size() != 3) throw ParseError("scene file: centroid must have 3 entries");
      n.centroid = Eigen::Vector3d(c[0], c[1], c[2]);
      g.nodes.push_back(std::move(n));
    }
    const int m = g.size();
    g.adjacency = Eigen::MatrixXi::Zero(m, m);
    for (const auto& edge : doc.at("edges")) {
      int a = edge.at("src").get<int>();
      int b = edge.at("dst").get<int>();
      if (a < 0 || a >= m || b < 0 || b >= m)
        throw ParseError("scene file: edge references missing node " +
                         std::to_string(a < 0 || a >= m ? a : b));
      g.adjacency(a, b) = 1;
      g.edge_relations[{a, b}] = edge.at("relation").get<int>();
    }
    auto flat = doc.at("points").get<std::vector<double>>();
    if (flat.size() % 3 != 0)
      throw ParseError("scene file: points length not a multiple of 3");
    for (std::size_t i = 0; i < flat.size(); i += 3)
      p.points.emplace_back(flat[i], flat[i + 1], flat[i + 2]);
    p.object_ids = doc.at("object_ids").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("scene file: ") + e.what());
  }
  if (p.object_ids.size() != p.points.size())
    throw ParseError("scene file: object_ids length != point count");
  for (int id : p.object_ids)
    if (id < 0 || id >= g.size())
      throw ParseError("scene file: object_id references missing node " +
                       std::to_string(id));
  g.validate();
  return {std::move(g), std::move(p)};
}

json parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return doc;
}

}  // namespace

void save_scene(const std::string& path, const SceneGraph& g, const PointCloud& p) {
  atomic_write(path, scene_to_json(g, p).dump());
}

std::pair<SceneGraph, PointCloud> load_scene(const std::string& path) {
  return scene_from_json(parse_file(path));
}

void save_scene_pair(const std::string& path, const ScenePair& pair) {
  json doc;
  doc["schema_version"] = kSceneSchemaVersion;
  doc["src"] = scene_to_json(pair.src_graph, pair.src_cloud);
  doc["ref"] = scene_to_json(pair.ref_graph, pair.ref_cloud);
  json align = json::array();
  for (auto [i, j] : pair.gt_alignment) align.push_back({i, j});
  doc["gt_alignment"] = std::move(align);
  Eigen::Matrix4d m = pair.gt_transform.matrix();
  std::vector<double> flat;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) flat.push_back(m(r, c));
  doc["gt_transform"] = std::move(flat);
  atomic_write(path, doc.dump());
}

ScenePair load_scene_pair(const std::string& path) {
  json doc = parse_file(path);
  if (!doc.contains("schema_version"))
    throw ParseError(path + ": missing schema_version");
  if (doc["schema_version"].get<int>() != kSceneSchemaVersion)
    throw SchemaVersionMismatch(path + ": unsupported schema_version");
  ScenePair pair;
  try {
    std::tie(pair.src_graph, pair.src_cloud) = scene_from_json(doc.at("src"));
    std::tie(pair.ref_graph, pair.ref_cloud) = scene_from_json(doc.at("ref"));
    for (const auto& entry : doc.at("gt_alignment")) {
      int i = entry.at(0).get<int>();
      int j = entry.at(1).get<int>();
      if (i < 0 || i >= pair.src_graph.size() || j < 0 || j >= pair.ref_graph.size())
        throw ParseError(path + ": gt_alignment references missing node");
      pair.gt_alignment.emplace_back(i, j);
    }
    auto flat = doc.at("gt_transform").get<std::vector<double>>();
    if (flat.size() != 16) throw ParseError(path + ": gt_transform must have 16 entries");
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = flat[r * 4 + c];
    pair.gt_transform = RigidTransform::from_matrix(m);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  int denom = std::min(pair.src_graph.size(), pair.ref_graph.size());
  pair.overlap_fraction =
      denom > 0 ? static_cast<double>(pair.gt_alignment.size()) / denom : 0.0;
  return pair;
}

void save_checkpoint(const std::string& path,
                     const std::map<std::string, Eigen::MatrixXd>& tensors,
                     const std::map<std::string, std::string>& meta) {
  json header;
  header["version"] = kCheckpointVersion;
  header["meta"] = meta;
  json shapes = json::array();
  std::size_t total = 0;
  for (const auto& [name, mat] : tensors) {
    shapes.push_back({{"name", name},
                      {"rows", mat.rows()},
                      {"cols", mat.cols()}});
    total += static_cast<std::size_t>(mat.size());
  }
  header["tensors"] = std::move(shapes);
  std::string head = header.dump();

  std::string blob;
  blob.reserve(8 + head.size() + total * sizeof(double));
  std::uint64_t len = head.size();
  blob.append(reinterpret_cast<const char*>(&len), sizeof(len));
  blob.append(head);
  for (const auto& [name, mat] : tensors) {
    // row-major payload
    for (Eigen::Index r = 0; r < mat.rows(); ++r)
      for (Eigen::Index c = 0; c < mat.cols(); ++c) {
        double v = mat(r, c);
        blob.append(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
  atomic_write(path, blob);
}

std::pair<std::map<std::string, Eigen::MatrixXd>, std::map<std::string, std::string>>
load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw ParseError(path + ": truncated checkpoint header");
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError(path + ": truncated checkpoint header");
  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (header.at("version").get<int>() != kCheckpointVersion)
    throw CheckpointMismatch(path + ": unsupported checkpoint version");
  std::map<std::string, Eigen::MatrixXd> tensors;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    Eigen::MatrixXd mat(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw ParseError(path + ": truncated tensor payload for " + name);
        mat(r, c) = v;
      }
    tensors[name] = std::move(mat);
  }
  std::map<std::string, std::string> meta;
  if (header.contains("meta"))
    meta = header["meta"].get<std::map<std::string, std::string>>();
  return {std::move(tensors), std::move(meta)};
}

}  // namespace sga
