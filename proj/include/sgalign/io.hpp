#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "sgalign/scenegraph.hpp"

namespace sga {

inline constexpr int kSceneSchemaVersion = 1;
inline constexpr int kCheckpointVersion = 1;

void save_scene(const std::string& path, const SceneGraph& g, const PointCloud& p);
std::pair<SceneGraph, PointCloud> load_scene(const std::string& path);

void save_scene_pair(const std::string& path, const ScenePair& pair);
ScenePair load_scene_pair(const std::string& path);

/// Named-tensor checkpoint: a length-prefixed JSON header (tensor names,
/// shapes, version) followed by the flat float64 payload.
void save_checkpoint(const std::string& path,
                     const std::map<std::string, Eigen::MatrixXd>& tensors,
                     const std::map<std::string, std::string>& meta = {});
std::pair<std::map<std::string, Eigen::MatrixXd>, std::map<std::string, std::string>>
load_checkpoint(const std::string& path);

/// Write via temp file + rename so readers never observe a partial file.
void atomic_write(const std::string& path, const std::string& contents);

}  // namespace sga
