#include "tool_io.h"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fpgs::tools {
namespace {

float number(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("camera is missing '") + key + "'");
  if (!j.at(key).is_number()) throw ValidationError(std::string("camera field '") + key + "' must be a number");
  return j.at(key).get<float>();
}

std::vector<float> numbers(const nlohmann::json& j, const char* key, size_t count) {
  if (!j.contains(key)) throw ValidationError(std::string("camera is missing '") + key + "'");
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.size() != count) {
    throw ValidationError(std::string("camera field '") + key + "' must hold " + std::to_string(count) + " numbers");
  }
  std::vector<float> out;
  for (const auto& v : arr) {
    if (!v.is_number()) throw ValidationError(std::string("camera field '") + key + "' must hold numbers");
    out.push_back(v.get<float>());
  }
  return out;
}

int integer(const nlohmann::json& j, const char* key) {
  const float v = number(j, key);
  if (v != std::floor(v)) throw ValidationError(std::string("camera field '") + key + "' must be an integer");
  return static_cast<int>(v);
}

}  // namespace

Camera camera_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("camera must be a JSON object");
  Camera cam;
  cam.fx = number(j, "fx");
  cam.fy = number(j, "fy");
  cam.cx = number(j, "cx");
  cam.cy = number(j, "cy");
  cam.width = integer(j, "width");
  cam.height = integer(j, "height");
  const auto r = numbers(j, "R", 9);
  for (int i = 0; i < 9; ++i) cam.rotation(i / 3, i % 3) = r[static_cast<size_t>(i)];
  const auto t = numbers(j, "t", 3);
  cam.translation = {t[0], t[1], t[2]};
  if (j.contains("near")) cam.near_plane = number(j, "near");
  if (j.contains("far")) cam.far_plane = number(j, "far");
  cam.validate();
  return cam;
}

nlohmann::json camera_to_json(const Camera& c) {
  nlohmann::json j;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["width"] = c.width;
  j["height"] = c.height;
  std::vector<float> r;
  for (int i = 0; i < 9; ++i) r.push_back(c.rotation(i / 3, i % 3));
  j["R"] = r;
  j["t"] = {c.translation.x(), c.translation.y(), c.translation.z()};
  j["near"] = c.near_plane;
  j["far"] = c.far_plane;
  return j;
}

std::vector<Camera> trajectory_from_json(const nlohmann::json& j) {
  const nlohmann::json* list = &j;
  if (j.is_object()) {
    if (!j.contains("cameras")) throw ValidationError("trajectory object has no 'cameras' array");
    list = &j.at("cameras");
  }
  if (!list->is_array()) throw ValidationError("trajectory must be an array of cameras");
  std::vector<Camera> cams;
  for (const auto& c : *list) cams.push_back(camera_from_json(c));
  return cams;
}

nlohmann::json trajectory_to_json(const std::vector<Camera>& cameras) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : cameras) list.push_back(camera_to_json(c));
  return {{"cameras", list}};
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return nlohmann::json::parse(bytes.begin(), bytes.end());
}

Camera read_camera(const std::filesystem::path& path) { return camera_from_json(read_json(path)); }

std::vector<Camera> read_trajectory(const std::filesystem::path& path) { return trajectory_from_json(read_json(path)); }

LoadedScene load_scene(const std::filesystem::path& ply) {
  LoadedScene s;
  s.records = read_gaussian_ply(ply);
  s.scene = activate(s.records);
  return s;
}

void attach_features(GaussianScene& scene, const TensorFile& file) {
  MatrixRM features = file.matrix("features");
  if (features.rows() != static_cast<Eigen::Index>(scene.size())) {
    throw ValidationError("feature file has " + std::to_string(features.rows()) + " rows for " +
                          std::to_string(scene.size()) + " Gaussians");
  }
  scene.semantic = std::move(features);
  scene.validate();
}

std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& extension) {
  if (!std::filesystem::is_directory(dir)) throw FormatError(Errc::kIo, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == extension) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fpgs::tools
