#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpgs/scene.h"
#include "fpgs/splatter.h"
#include "fpgs/tensor_io.h"

namespace fpgs::tools {

/// Camera JSON: fx, fy, cx, cy, width, height, R (9 numbers, row-major, world to camera),
/// t (3 numbers), optional near and far.
Camera camera_from_json(const nlohmann::json& j);
nlohmann::json camera_to_json(const Camera& camera);

/// Trajectory: {"cameras": [...]} or a bare array of cameras.
std::vector<Camera> trajectory_from_json(const nlohmann::json& j);
nlohmann::json trajectory_to_json(const std::vector<Camera>& cameras);

nlohmann::json read_json(const std::filesystem::path& path);
Camera read_camera(const std::filesystem::path& path);
std::vector<Camera> read_trajectory(const std::filesystem::path& path);

/// A scene as loaded from disk: the raw records (kept so geometry can be written back
/// byte-for-byte) and the activated scene.
struct LoadedScene {
  std::vector<RawGaussianRecord> records;
  GaussianScene scene;
};

LoadedScene load_scene(const std::filesystem::path& ply);
/// Attaches the "features" tensor (P x D) of a scene feature file.
void attach_features(GaussianScene& scene, const TensorFile& file);

/// Sorted regular files with the given extension.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& extension);

}  // namespace fpgs::tools
